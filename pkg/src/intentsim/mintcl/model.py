"""Hierarchical intent classifier over a fixed text encoder.

Per level, an affine label-attention head maps the text vector (joined with
the previous level's intermediate representation) to level logits. A
parallel global path scores the leaves directly and aggregates upward
through the taxonomy with logsumexp, so every level sees both a local and a
tree-consistent global view. Prediction ensembles the two and beam-searches
root-to-leaf paths.

All math is purely affine plus softmax/logsumexp, which keeps the analytic
gradients in train.py short and exactly checkable.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..corpus_model import IntentPath, IntentTaxonomy, TaxonomyNode
from .encoder import HashedEncoder

LEVELS = (1, 2, 3)


class ShapeError(ValueError):
    pass


class TreeIndex:
    """Integer view of the taxonomy used by the global path and beam search."""

    def __init__(self, taxonomy: IntentTaxonomy):
        self.taxonomy = taxonomy
        self.level1_ids = [n.id for n in taxonomy.level_nodes[1]]
        self.level2_ids = [n.id for n in taxonomy.level_nodes[2]]
        self.leaf_ids = list(taxonomy.leaf_order)
        self.sizes = (len(self.level1_ids), len(self.level2_ids), len(self.leaf_ids))
        idx1 = {nid: i for i, nid in enumerate(self.level1_ids)}
        idx2 = {nid: i for i, nid in enumerate(self.level2_ids)}
        idx3 = {nid: i for i, nid in enumerate(self.leaf_ids)}
        self.index = (idx1, idx2, idx3)
        self.mid_parent = np.array(
            [idx1[taxonomy.node(mid).parent_id] for mid in self.level2_ids], dtype=int
        )
        self.leaf_parent = np.array(
            [idx2[taxonomy.node(leaf).parent_id] for leaf in self.leaf_ids], dtype=int
        )
        self.root_children = [
            np.flatnonzero(self.mid_parent == r) for r in range(self.sizes[0])
        ]
        self.mid_children = [
            np.flatnonzero(self.leaf_parent == p) for p in range(self.sizes[1])
        ]

    def gold_indices(self, path: IntentPath) -> tuple[int, int, int]:
        idx1, idx2, idx3 = self.index
        return idx1[path.level1_id], idx2[path.level2_id], idx3[path.level3_id]

    def path_from_indices(self, i1: int, i2: int, i3: int) -> IntentPath:
        return IntentPath(self.level1_ids[i1], self.level2_ids[i2], self.leaf_ids[i3])


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def _lse_groups(values: np.ndarray, groups: list[np.ndarray]) -> np.ndarray:
    """Column-wise logsumexp over index groups: out[:, g] = LSE(values[:, groups[g]])."""
    out = np.empty((values.shape[0], len(groups)), dtype=values.dtype)
    for g, idx in enumerate(groups):
        block = values[:, idx]
        m = block.max(axis=1)
        out[:, g] = m + np.log(np.exp(block - m[:, None]).sum(axis=1))
    return out


class MintClModel:
    """Parameters + taxonomy wiring for the hierarchical classifier.

    Parameter tensors (d = encoder dim, k_l = classes at level l):
      W1_l ((d if l == 1 else 2d) x d), b1_l (d)   label-attention projections
      W2_l (d x k_l), b2_l (k_l)                   per-level logits
      W_g (d x k_3), b_g (k_3)                     global leaf scores
      W_r (d), b_r (1)                             response-ranking head
    """

    def __init__(
        self,
        taxonomy: IntentTaxonomy,
        d: int,
        params: dict[str, np.ndarray],
        lam: float = 0.3,
        ngram_range: tuple[int, int] = (1, 2),
        dtype=np.float64,
    ):
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        self.taxonomy = taxonomy
        self.tree = TreeIndex(taxonomy)
        self.d = d
        self.lam = lam
        self.dtype = np.dtype(dtype)
        self.encoder = HashedEncoder(d=d, ngram_range=ngram_range)
        self._params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        self._check_shapes()

    # -- construction ----------------------------------------------------

    PARAM_NAMES = (
        "W1_1", "b1_1", "W2_1", "b2_1",
        "W1_2", "b1_2", "W2_2", "b2_2",
        "W1_3", "b1_3", "W2_3", "b2_3",
        "W_g", "b_g", "W_r", "b_r",
    )

    def _check_shapes(self) -> None:
        d = self.d
        k1, k2, k3 = self.tree.sizes
        expected = {
            "W1_1": (d, d), "b1_1": (d,), "W2_1": (d, k1), "b2_1": (k1,),
            "W1_2": (2 * d, d), "b1_2": (d,), "W2_2": (d, k2), "b2_2": (k2,),
            "W1_3": (2 * d, d), "b1_3": (d,), "W2_3": (d, k3), "b2_3": (k3,),
            "W_g": (d, k3), "b_g": (k3,), "W_r": (d,), "b_r": (1,),
        }
        for name in self.PARAM_NAMES:
            if name not in self._params:
                raise ShapeError(f"missing parameter tensor {name!r}")
            got = self._params[name].shape
            if got != expected[name]:
                raise ShapeError(f"{name}: expected shape {expected[name]}, got {got}")

    @classmethod
    def init_random(
        cls,
        taxonomy: IntentTaxonomy,
        d: int,
        seed: int = 0,
        lam: float = 0.3,
        ngram_range: tuple[int, int] = (1, 2),
        dtype=np.float64,
    ) -> "MintClModel":
        rng = np.random.Generator(np.random.Philox(key=seed))
        tree = TreeIndex(taxonomy)
        k1, k2, k3 = tree.sizes
        np_dtype = np.dtype(dtype)
        gen_dtype = np_dtype if np_dtype in (np.dtype(np.float32), np.dtype(np.float64)) else np.float64

        def mat(rows, cols=None):
            size = (rows, cols) if cols is not None else rows
            scale = np_dtype.type(1.0 / np.sqrt(rows))
            return rng.standard_normal(size, dtype=gen_dtype) * scale

        def zeros(size):
            return np.zeros(size, dtype=np_dtype)

        params = {
            "W1_1": mat(d, d), "b1_1": zeros(d), "W2_1": mat(d, k1), "b2_1": zeros(k1),
            "W1_2": mat(2 * d, d), "b1_2": zeros(d), "W2_2": mat(d, k2), "b2_2": zeros(k2),
            "W1_3": mat(2 * d, d), "b1_3": zeros(d), "W2_3": mat(d, k3), "b2_3": zeros(k3),
            "W_g": mat(d, k3), "b_g": zeros(k3),
            "W_r": mat(d), "b_r": zeros(1),
        }
        return cls(taxonomy, d, params, lam=lam, ngram_range=ngram_range, dtype=dtype)

    def params(self) -> dict[str, np.ndarray]:
        return self._params

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    # -- forward passes ----------------------------------------------------

    def _as_batch(self, H: np.ndarray) -> tuple[np.ndarray, bool]:
        H = np.asarray(H, dtype=self.dtype)
        if H.ndim == 1:
            if H.shape[0] != self.d:
                raise ShapeError(f"input dim {H.shape[0]} != d={self.d}")
            return H[None, :], True
        if H.ndim != 2 or H.shape[1] != self.d:
            raise ShapeError(f"input shape {H.shape} incompatible with d={self.d}")
        return H, False

    def forward_local_cache(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Affine cascade; returns intermediates needed for the backward pass."""
        p = self._params
        L1 = X @ p["W1_1"] + p["b1_1"]
        C2 = np.concatenate([X, L1], axis=1)
        L2 = C2 @ p["W1_2"] + p["b1_2"]
        C3 = np.concatenate([X, L2], axis=1)
        L3 = C3 @ p["W1_3"] + p["b1_3"]
        return {
            "X": X, "L1": L1, "C2": C2, "L2": L2, "C3": C3, "L3": L3,
            "Z1loc": L1 @ p["W2_1"] + p["b2_1"],
            "Z2loc": L2 @ p["W2_2"] + p["b2_2"],
            "Z3loc": L3 @ p["W2_3"] + p["b2_3"],
        }

    def forward_local(self, H: np.ndarray):
        X, single = self._as_batch(H)
        cache = self.forward_local_cache(X)
        logits = (cache["Z1loc"], cache["Z2loc"], cache["Z3loc"])
        return tuple(z[0] for z in logits) if single else logits

    def forward_global_cache(self, X: np.ndarray) -> dict[str, np.ndarray]:
        p = self._params
        G3 = X @ p["W_g"] + p["b_g"]
        G2 = _lse_groups(G3, self.tree.mid_children)
        G1 = _lse_groups(G2, self.tree.root_children)
        return {"G1": G1, "G2": G2, "G3": G3}

    def forward_global(self, H: np.ndarray):
        X, single = self._as_batch(H)
        cache = self.forward_global_cache(X)
        logits = (cache["G1"], cache["G2"], cache["G3"])
        return tuple(g[0] for g in logits) if single else logits

    def ensemble_logits(self, H: np.ndarray):
        """Per-level logits that feed softmax: local plus global."""
        X, single = self._as_batch(H)
        local = self.forward_local_cache(X)
        glob = self.forward_global_cache(X)
        logits = (
            local["Z1loc"] + glob["G1"],
            local["Z2loc"] + glob["G2"],
            local["Z3loc"] + glob["G3"],
        )
        return tuple(z[0] for z in logits) if single else logits

    # -- prediction ----------------------------------------------------------

    def predict(self, H: np.ndarray, beam_width: int = 4) -> IntentPath:
        z1, z2, z3 = self.ensemble_logits(np.asarray(H))
        scores = (log_softmax(z1), log_softmax(z2), log_softmax(z3))
        i1, i2, i3 = beam_search(scores, self.tree, beam_width)
        return self.tree.path_from_indices(i1, i2, i3)

    def predict_text(self, text: str, beam_width: int = 4) -> IntentPath:
        return self.predict(self.encoder.encode(text, dtype=self.dtype), beam_width=beam_width)

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "version": 1,
            "d": self.d,
            "lam": self.lam,
            "dtype": self.dtype.name,
            "ngram_range": list(self.encoder.ngram_range),
            "nodes": [
                {"id": n.id, "name": n.name, "level": n.level, "parent_id": n.parent_id}
                for n in self.taxonomy.nodes
            ],
        }
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **self._params)

    @classmethod
    def load(cls, path: str | Path) -> "MintClModel":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            params = {name: data[name] for name in cls.PARAM_NAMES}
        taxonomy = IntentTaxonomy(
            [TaxonomyNode(n["id"], n["name"], n["level"], n.get("parent_id")) for n in meta["nodes"]]
        )
        return cls(
            taxonomy,
            d=int(meta["d"]),
            params=params,
            lam=float(meta["lam"]),
            ngram_range=tuple(meta["ngram_range"]),
            dtype=np.dtype(meta["dtype"]),
        )


def beam_search(
    scores: tuple[np.ndarray, np.ndarray, np.ndarray],
    tree: TreeIndex,
    beam_width: int,
) -> tuple[int, int, int]:
    """Best root-to-leaf path by summed per-level scores.

    Only taxonomy edges are expanded; ties break toward the lexicographically
    smallest index path. With beam_width >= number of leaves this is exact.
    """
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    s1, s2, s3 = scores

    def top(items):  # items: (score, path_tuple)
        return sorted(items, key=lambda it: (-it[0], it[1]))[:beam_width]

    beam = top([(float(s1[r]), (r,)) for r in range(len(s1))])
    beam = top(
        [
            (score + float(s2[p]), path + (int(p),))
            for score, path in beam
            for p in tree.root_children[path[-1]]
        ]
    )
    beam = top(
        [
            (score + float(s3[c]), path + (int(c),))
            for score, path in beam
            for c in tree.mid_children[path[-1]]
        ]
    )
    _, best = beam[0]
    return best[0], best[1], best[2]


def brute_force_best_path(
    scores: tuple[np.ndarray, np.ndarray, np.ndarray], tree: TreeIndex
) -> tuple[int, int, int]:
    """Exhaustive oracle for beam_search (same tie-break rule)."""
    s1, s2, s3 = scores
    best = None
    for c in range(tree.sizes[2]):
        p = int(tree.leaf_parent[c])
        r = int(tree.mid_parent[p])
        cand = (-(float(s1[r]) + float(s2[p]) + float(s3[c])), (r, p, c))
        if best is None or cand < best:
            best = cand
    return best[1]
