"""Mini-batch SGD with hand-derived gradients, plus a finite-difference check.

The encoder is a fixed function, so training only touches the affine
parameter tensors. All gradients are written out analytically (softmax
cross-entropy, logsumexp aggregation, logistic ranking losses); the
gradient_check routine verifies them against central differences over
coordinates drawn from every tensor.

loss_and_grads materializes every gradient tensor (what gradient_check
needs). The training loop instead applies the identical updates through
_apply_addmm, which folds W -= lr * A^T B into one BLAS call (beta=1) on
the transposed parameter view; at d in the thousands this avoids streaming
hundreds of MB of gradient buffers per step.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import blas as _blas
from scipy import sparse as _sparse

from ..corpus_builder import ClassificationSample, RankingItem
from ..corpus_model import IntentPath, IntentTaxonomy, SingleTurnExample
from ..ranking_eval import RankedPair
from .losses import softplus
from .model import MintClModel, _lse_groups, log_softmax

MODES = ("ST", "MT", "ST+RR", "ST+CR", "MT+RR", "MT+CR")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "MT+CR"
    d: int = 4096
    ngram_range: tuple[int, int] = (1, 2)
    lam: float = 0.3
    lr: float = 0.1
    epochs: int = 3
    batch_size: int = 32
    beam_width: int = 4
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs/batch_size must be >= 1 and lr > 0")

    @property
    def uses_multi(self) -> bool:
        return self.mode.startswith("MT")

    @property
    def ranking_kind(self) -> str | None:
        if self.mode.endswith("+CR"):
            return "contrastive"
        if self.mode.endswith("+RR"):
            return "binary"
        return None


@dataclass
class EncodedBatch:
    """Pre-encoded training inputs; the FD check re-evaluates loss on these."""

    X: np.ndarray  # (n, d) intent sample vectors
    gold: np.ndarray  # (n, 3) per-level gold indices
    HP: np.ndarray | None = None  # (m, d) judged-better ranking inputs
    HM: np.ndarray | None = None  # (m, d) judged-worse ranking inputs
    HB: np.ndarray | None = None  # (mb, d) binary ranking inputs
    yb: np.ndarray | None = None  # (mb,) binary labels

    @property
    def n_pairs(self) -> int:
        return 0 if self.HP is None else self.HP.shape[0]

    @property
    def n_binary(self) -> int:
        return 0 if self.HB is None else self.HB.shape[0]


def _derive_key(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "big")


def _rng(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_derive_key(seed, label)))


def as_intent_records(
    samples: Sequence[SingleTurnExample | ClassificationSample],
) -> list[tuple[str, IntentPath]]:
    records = []
    for s in samples:
        text = s.text if isinstance(s, SingleTurnExample) else s.q_all
        records.append((text, s.intent))
    return records


def encode_intent_samples(
    model: MintClModel, records: Sequence[tuple[str, IntentPath]]
) -> tuple[np.ndarray, np.ndarray]:
    X = model.encoder.encode_batch([text for text, _ in records], dtype=model.dtype)
    gold = np.array([model.tree.gold_indices(path) for _, path in records], dtype=int)
    return X, gold


def encode_pairs(model: MintClModel, pairs: Sequence[RankedPair]) -> tuple[np.ndarray, np.ndarray]:
    hp = model.encoder.encode_batch(
        [f"{p.q_all} [SEP] {p.better_answer}" for p in pairs], dtype=model.dtype
    )
    hm = model.encoder.encode_batch(
        [f"{p.q_all} [SEP] {p.worse_answer}" for p in pairs], dtype=model.dtype
    )
    return hp, hm


def encode_binary(model: MintClModel, items: Sequence[RankingItem]) -> tuple[np.ndarray, np.ndarray]:
    hb = model.encoder.encode_batch(
        [f"{it.q_all} [SEP] {it.answer}" for it in items], dtype=model.dtype
    )
    yb = np.array([it.label for it in items], dtype=model.dtype)
    return hb, yb


def _onehot_delta(Z: np.ndarray, gold: np.ndarray) -> tuple[np.ndarray, float]:
    """(softmax(Z) - onehot) and the summed cross-entropy for one level."""
    logp = log_softmax(Z)
    loss = -float(logp[np.arange(Z.shape[0]), gold].sum())
    dZ = np.exp(logp)
    dZ[np.arange(Z.shape[0]), gold] -= 1.0
    return dZ, loss


def batch_losses(model: MintClModel, batch: EncodedBatch) -> tuple[float, float, float]:
    """(total, mean intent loss, mean ranking loss) without gradients."""
    intent_mean = 0.0
    if batch.X.shape[0]:
        Z1, Z2, Z3 = model.ensemble_logits(batch.X)
        n = batch.X.shape[0]
        total = 0.0
        for Z, g in ((Z1, batch.gold[:, 0]), (Z2, batch.gold[:, 1]), (Z3, batch.gold[:, 2])):
            logp = log_softmax(Z)
            total -= float(logp[np.arange(n), g].sum())
        intent_mean = total / n

    ranking_terms = []
    w, b = model["W_r"], model["b_r"]
    if batch.n_pairs:
        delta = (batch.HP - batch.HM) @ w
        ranking_terms.append(float(np.mean(softplus(-delta))))
    if batch.n_binary:
        s = batch.HB @ w + b[0]
        ranking_terms.append(float(np.mean(softplus(s) - batch.yb * s)))
    ranking_mean = sum(ranking_terms)
    return intent_mean + model.lam * ranking_mean, intent_mean, ranking_mean


def loss_and_grads(
    model: MintClModel, batch: EncodedBatch
) -> tuple[float, float, float, dict[str, np.ndarray]]:
    """Combined loss plus analytic gradients for every parameter tensor."""
    p = model.params()
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    intent_mean = 0.0

    if batch.X.shape[0]:
        X = batch.X
        n = X.shape[0]
        local = model.forward_local_cache(X)
        glob = model.forward_global_cache(X)
        Z1 = local["Z1loc"] + glob["G1"]
        Z2 = local["Z2loc"] + glob["G2"]
        Z3 = local["Z3loc"] + glob["G3"]
        dZ1, loss1 = _onehot_delta(Z1, batch.gold[:, 0])
        dZ2, loss2 = _onehot_delta(Z2, batch.gold[:, 1])
        dZ3, loss3 = _onehot_delta(Z3, batch.gold[:, 2])
        intent_mean = (loss1 + loss2 + loss3) / n
        dZ1 /= n
        dZ2 /= n
        dZ3 /= n

        # local cascade, backwards from level 3
        grads["W2_3"] += local["L3"].T @ dZ3
        grads["b2_3"] += dZ3.sum(axis=0)
        dL3 = dZ3 @ p["W2_3"].T
        grads["W1_3"] += local["C3"].T @ dL3
        grads["b1_3"] += dL3.sum(axis=0)
        dL2 = dZ2 @ p["W2_2"].T + dL3 @ p["W1_3"][model.d :, :].T
        grads["W2_2"] += local["L2"].T @ dZ2
        grads["b2_2"] += dZ2.sum(axis=0)
        grads["W1_2"] += local["C2"].T @ dL2
        grads["b1_2"] += dL2.sum(axis=0)
        dL1 = dZ1 @ p["W2_1"].T + dL2 @ p["W1_2"][model.d :, :].T
        grads["W2_1"] += local["L1"].T @ dZ1
        grads["b2_1"] += dZ1.sum(axis=0)
        grads["W1_1"] += X.T @ dL1
        grads["b1_1"] += dL1.sum(axis=0)

        # global path: ensemble logits feed each level directly, and the
        # logsumexp aggregation routes level-1/2 gradients down to the leaves
        G2, G3 = glob["G2"], glob["G3"]
        dG2 = dZ2.copy()
        for r, mids in enumerate(model.tree.root_children):
            dG2[:, mids] += np.exp(G2[:, mids] - glob["G1"][:, r][:, None]) * dZ1[:, r][:, None]
        dG3 = dZ3.copy()
        for m, leaves in enumerate(model.tree.mid_children):
            dG3[:, leaves] += np.exp(G3[:, leaves] - G2[:, m][:, None]) * dG2[:, m][:, None]
        grads["W_g"] += X.T @ dG3
        grads["b_g"] += dG3.sum(axis=0)

    ranking_mean = 0.0
    w, b = p["W_r"], p["b_r"]
    if batch.n_pairs:
        m = batch.n_pairs
        delta = (batch.HP - batch.HM) @ w
        ranking_mean += float(np.mean(softplus(-delta)))
        # d/ddelta of softplus(-delta) = sigmoid(delta) - 1
        gdelta = (model.lam / m) * (1.0 / (1.0 + np.exp(-delta)) - 1.0)
        grads["W_r"] += (batch.HP - batch.HM).T @ gdelta
    if batch.n_binary:
        mb = batch.n_binary
        s = batch.HB @ w + b[0]
        ranking_mean += float(np.mean(softplus(s) - batch.yb * s))
        ds = (model.lam / mb) * (1.0 / (1.0 + np.exp(-s)) - batch.yb)
        grads["W_r"] += batch.HB.T @ ds
        grads["b_r"] += ds.sum(keepdims=True)

    total = intent_mean + model.lam * ranking_mean
    return total, intent_mean, ranking_mean, grads


def _apply_addmm(W: np.ndarray, A: np.ndarray, B: np.ndarray, alpha: float) -> None:
    """W += alpha * (A^T @ B) in place, without materializing the product.

    Runs on the F-contiguous transposed view (W^T += alpha * B^T @ A with
    beta=1), so only W itself is streamed. Requires C-contiguous W.
    """
    if not W.flags.c_contiguous:
        W += alpha * (A.T @ B)
        return
    gemm = _blas.sgemm if W.dtype == np.float32 else _blas.dgemm
    out = gemm(alpha, B, A, beta=1.0, c=W.T, trans_a=1, trans_b=0, overwrite_c=1)
    if not np.shares_memory(out, W):  # wrapper copied; fall back
        W += alpha * (A.T @ B)


def _sgd_step(
    model: MintClModel,
    batch: EncodedBatch,
    lr: float,
    X_sparse=None,
) -> tuple[float, float]:
    """One in-place SGD step; same math as loss_and_grads followed by
    `param -= lr * grad`, with the large rank-k updates fused into gemms.

    When X_sparse (a CSR view of batch.X) is given, the X-side products run
    on the sparse structure and the W1_1 update only touches rows whose
    feature actually occurs in the batch; results are identical.

    Returns (mean intent loss, mean ranking loss) at the pre-update params.
    """
    p = model.params()
    lr = float(lr)
    intent_mean = 0.0
    if batch.X.shape[0]:
        X = batch.X
        n = X.shape[0]
        d = model.d
        if X_sparse is not None:
            L1 = X_sparse @ p["W1_1"] + p["b1_1"]
            L2 = X_sparse @ p["W1_2"][:d] + L1 @ p["W1_2"][d:] + p["b1_2"]
            L3 = X_sparse @ p["W1_3"][:d] + L2 @ p["W1_3"][d:] + p["b1_3"]
            local = {
                "L1": L1, "L2": L2, "L3": L3,
                "Z1loc": L1 @ p["W2_1"] + p["b2_1"],
                "Z2loc": L2 @ p["W2_2"] + p["b2_2"],
                "Z3loc": L3 @ p["W2_3"] + p["b2_3"],
            }
            G3 = X_sparse @ p["W_g"] + p["b_g"]
            glob = {"G3": G3, "G2": _lse_groups(G3, model.tree.mid_children)}
            glob["G1"] = _lse_groups(glob["G2"], model.tree.root_children)
        else:
            local = model.forward_local_cache(X)
            glob = model.forward_global_cache(X)
        dZ1, loss1 = _onehot_delta(local["Z1loc"] + glob["G1"], batch.gold[:, 0])
        dZ2, loss2 = _onehot_delta(local["Z2loc"] + glob["G2"], batch.gold[:, 1])
        dZ3, loss3 = _onehot_delta(local["Z3loc"] + glob["G3"], batch.gold[:, 2])
        intent_mean = (loss1 + loss2 + loss3) / n
        dZ1 /= n
        dZ2 /= n
        dZ3 /= n

        # full backward chain against the frozen parameters
        dL3 = dZ3 @ p["W2_3"].T
        dL2 = dZ2 @ p["W2_2"].T + dL3 @ p["W1_3"][d:, :].T
        dL1 = dZ1 @ p["W2_1"].T + dL2 @ p["W1_2"][d:, :].T
        G2, G3 = glob["G2"], glob["G3"]
        dG2 = dZ2.copy()
        for r, mids in enumerate(model.tree.root_children):
            dG2[:, mids] += np.exp(G2[:, mids] - glob["G1"][:, r][:, None]) * dZ1[:, r][:, None]
        dG3 = dZ3.copy()
        for m, leaves in enumerate(model.tree.mid_children):
            dG3[:, leaves] += np.exp(G3[:, leaves] - G2[:, m][:, None]) * dG2[:, m][:, None]

        # fused updates
        _apply_addmm(p["W2_3"], local["L3"], dZ3, -lr)
        p["b2_3"] -= lr * dZ3.sum(axis=0)
        p["b1_3"] -= lr * dL3.sum(axis=0)
        _apply_addmm(p["W2_2"], local["L2"], dZ2, -lr)
        p["b2_2"] -= lr * dZ2.sum(axis=0)
        p["b1_2"] -= lr * dL2.sum(axis=0)
        _apply_addmm(p["W2_1"], local["L1"], dZ1, -lr)
        p["b2_1"] -= lr * dZ1.sum(axis=0)
        p["b1_1"] -= lr * dL1.sum(axis=0)
        p["b_g"] -= lr * dG3.sum(axis=0)
        if X_sparse is not None:
            # concat-input halves: X half on sparse rows, L half via gemm
            rows = np.unique(X_sparse.indices)
            Xsub = np.ascontiguousarray(X[:, rows])
            p["W1_3"][rows] -= lr * (Xsub.T @ dL3)
            _apply_addmm(p["W1_3"][d:], local["L2"], dL3, -lr)
            p["W1_2"][rows] -= lr * (Xsub.T @ dL2)
            _apply_addmm(p["W1_2"][d:], local["L1"], dL2, -lr)
            p["W1_1"][rows] -= lr * (Xsub.T @ dL1)
            p["W_g"][rows] -= lr * (Xsub.T @ dG3)
        else:
            _apply_addmm(p["W1_3"], local["C3"], dL3, -lr)
            _apply_addmm(p["W1_2"], local["C2"], dL2, -lr)
            _apply_addmm(p["W1_1"], X, dL1, -lr)
            _apply_addmm(p["W_g"], X, dG3, -lr)

    # ranking scores evaluated against the frozen head before any update
    ranking_mean = 0.0
    w, b = p["W_r"], p["b_r"]
    dw = None
    db = None
    if batch.n_pairs:
        m = batch.n_pairs
        diff = batch.HP - batch.HM
        delta = diff @ w
        ranking_mean += float(np.mean(softplus(-delta)))
        gdelta = (model.lam / m) * (1.0 / (1.0 + np.exp(-delta)) - 1.0)
        dw = diff.T @ gdelta
    if batch.n_binary:
        mb = batch.n_binary
        s = batch.HB @ w + b[0]
        ranking_mean += float(np.mean(softplus(s) - batch.yb * s))
        ds = (model.lam / mb) * (1.0 / (1.0 + np.exp(-s)) - batch.yb)
        dw = batch.HB.T @ ds if dw is None else dw + batch.HB.T @ ds
        db = ds.sum(keepdims=True)
    if dw is not None:
        w -= lr * dw
    if db is not None:
        b -= lr * db
    return intent_mean, ranking_mean


def gradient_check(
    model: MintClModel,
    batch: EncodedBatch,
    n_coords: int = 200,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled from every parameter tensor (at least
    n_coords / n_tensors each); error is |ga - gn| / max(1e-8, |ga| + |gn|).
    """
    _, _, _, grads = loss_and_grads(model, batch)
    rng = _rng(seed, "gradient-check")
    names = list(model.params())
    per_tensor = max(1, math.ceil(n_coords / len(names)))
    worst = 0.0
    for name in names:
        arr = model.params()[name]
        flat_size = arr.size
        idx = rng.choice(flat_size, size=min(per_tensor, flat_size), replace=False)
        for i in idx:
            i = int(i)
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            up, _, _ = batch_losses(model, batch)
            arr.flat[i] = orig - h
            down, _, _ = batch_losses(model, batch)
            arr.flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = float(grads[name].flat[i])
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, err)
    return worst


def select_intent_samples(
    config: TrainConfig,
    single_turn: Sequence[SingleTurnExample],
    multi_samples: Sequence[ClassificationSample] = (),
) -> list[tuple[str, IntentPath]]:
    records = as_intent_records(single_turn)
    if config.uses_multi:
        records.extend(as_intent_records(multi_samples))
    return records


def train(
    taxonomy: IntentTaxonomy,
    single_turn: Sequence[SingleTurnExample],
    config: TrainConfig,
    multi_samples: Sequence[ClassificationSample] = (),
    pairs: Sequence[RankedPair] = (),
    binary_items: Sequence[RankingItem] = (),
) -> tuple[MintClModel, list[dict]]:
    """Train a model per the configured mode; returns (model, per-epoch history).

    Shuffling uses one stream for intent samples and an independent one for
    ranking data, so adding an auxiliary task never perturbs the intent-side
    batch sequence.
    """
    records = select_intent_samples(config, single_turn, multi_samples)
    if not records:
        raise TrainingError("no intent training samples selected")
    dtype = np.dtype(config.dtype)
    model = MintClModel.init_random(
        taxonomy,
        d=config.d,
        seed=config.seed,
        lam=config.lam,
        ngram_range=config.ngram_range,
        dtype=dtype,
    )
    X, gold = encode_intent_samples(model, records)

    kind = config.ranking_kind
    HP = HM = HB = yb = None
    if kind == "contrastive":
        if pairs:
            HP, HM = encode_pairs(model, pairs)
    elif kind == "binary":
        if binary_items:
            HB, yb = encode_binary(model, binary_items)

    n = X.shape[0]
    # sparse view of the encodings speeds up the X-side products at large d
    Xs = _sparse.csr_array(X) if config.d >= 512 else None
    rng_intent = _rng(config.seed, "shuffle-intent")
    rng_rank = _rng(config.seed, "shuffle-ranking")
    n_rank = HP.shape[0] if HP is not None else (HB.shape[0] if HB is not None else 0)
    history = []
    for epoch in range(config.epochs):
        perm = rng_intent.permutation(n)
        steps = math.ceil(n / config.batch_size)
        rank_chunks = [np.array([], dtype=int)] * steps
        if n_rank:
            rank_chunks = np.array_split(rng_rank.permutation(n_rank), steps)
        intent_sum = 0.0
        ranking_sum = 0.0
        for step in range(steps):
            sel = perm[step * config.batch_size : (step + 1) * config.batch_size]
            rsel = rank_chunks[step]
            batch = EncodedBatch(
                X=X[sel],
                gold=gold[sel],
                HP=HP[rsel] if HP is not None and len(rsel) else None,
                HM=HM[rsel] if HM is not None and len(rsel) else None,
                HB=HB[rsel] if HB is not None and len(rsel) else None,
                yb=yb[rsel] if yb is not None and len(rsel) else None,
            )
            intent_mean, ranking_mean = _sgd_step(
                model, batch, config.lr, X_sparse=Xs[sel] if Xs is not None else None
            )
            if not math.isfinite(intent_mean + ranking_mean):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}, step {step + 1}: "
                    f"intent={intent_mean}, ranking={ranking_mean}"
                )
            intent_sum += intent_mean * len(sel)
            ranking_sum += ranking_mean * len(rsel) if len(rsel) else 0.0
        epoch_intent = intent_sum / n
        epoch_ranking = ranking_sum / n_rank if n_rank else 0.0
        history.append(
            {
                "epoch": epoch + 1,
                "intent_loss": epoch_intent,
                "ranking_loss": epoch_ranking,
                "total_loss": epoch_intent + config.lam * epoch_ranking,
            }
        )
    return model, history
