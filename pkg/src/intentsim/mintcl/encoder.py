"""Deterministic signed-hashing n-gram text encoder.

Stands in for a transformer sentence encoder behind the same one-method
surface: text in, unit-norm d-dimensional vector out. Lowercased
whitespace tokens form word n-grams, each hashed to a bucket with a +/-1
sign; the resulting count vector is L2-normalized. Hashes are keyed by
BLAKE2 so vectors are identical across processes and platforms.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _hash64(feature: str) -> int:
    return int.from_bytes(hashlib.blake2b(feature.encode(), digest_size=8).digest(), "big")


def degenerate_vector(d: int, dtype=np.float64) -> np.ndarray:
    """Basis-free fallback for texts with no features (uniform unit vector)."""
    return np.full(d, 1.0 / np.sqrt(d), dtype=dtype)


def is_degenerate_vector(vec: np.ndarray) -> bool:
    d = vec.shape[-1]
    return bool(np.allclose(vec, 1.0 / np.sqrt(d)))


class HashedEncoder:
    """Pure function of the text; safe to share, caches feature hash slots."""

    def __init__(self, d: int = 4096, ngram_range: tuple[int, int] = (1, 2)):
        if d < 1:
            raise ValueError("d must be >= 1")
        lo, hi = ngram_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad ngram_range {ngram_range}")
        self.d = d
        self.ngram_range = (lo, hi)
        self._slots: dict[str, tuple[int, float]] = {}

    def features(self, text: str) -> list[str]:
        tokens = text.lower().split()
        lo, hi = self.ngram_range
        feats = []
        for n in range(lo, hi + 1):
            feats.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        return feats

    def _slot(self, feature: str) -> tuple[int, float]:
        slot = self._slots.get(feature)
        if slot is None:
            h = _hash64(feature)
            slot = (h % self.d, 1.0 if h >> 63 else -1.0)
            self._slots[feature] = slot
        return slot

    def encode(self, text: str, dtype=np.float64) -> np.ndarray:
        vec = np.zeros(self.d, dtype=np.float64)
        for feature in self.features(text):
            bucket, sign = self._slot(feature)
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            return degenerate_vector(self.d, dtype=dtype)
        return (vec / norm).astype(dtype, copy=False)

    def encode_batch(self, texts, dtype=np.float64) -> np.ndarray:
        out = np.empty((len(texts), self.d), dtype=dtype)
        for i, text in enumerate(texts):
            out[i] = self.encode(text, dtype=dtype)
        return out


def encode_hashed(text: str, d: int = 4096, ngram_range: tuple[int, int] = (1, 2)) -> np.ndarray:
    """One-shot convenience wrapper around HashedEncoder."""
    return HashedEncoder(d=d, ngram_range=ngram_range).encode(text)
