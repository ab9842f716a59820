"""Momentum memory bank: one unit-norm embedding per training sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DIM = 128
DEFAULT_MOMENTUM = 0.5


@dataclass
class MemoryBank:
    rows: np.ndarray  # [num_samples, dim] float32, unit rows
    momentum: float = DEFAULT_MOMENTUM

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")

    @property
    def num_samples(self) -> int:
        return self.rows.shape[0]


def _normalize(x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    return (x64 / np.linalg.norm(x64, axis=-1, keepdims=True)).astype(np.float32)


def bank_init(num_samples: int, seed: int, dim: int = DEFAULT_DIM, momentum: float = DEFAULT_MOMENTUM) -> MemoryBank:
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(seed)
    return MemoryBank(_normalize(rng.standard_normal((num_samples, dim))), momentum)


def bank_update(bank: MemoryBank, indices, features) -> None:
    """row_j <- normalize(m * row_j + (1 - m) * f_j) for each given index."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    feats = np.asarray(features).reshape(len(idx), -1)
    if len(set(idx.tolist())) != len(idx):
        raise ValueError("bank_update: duplicate indices")
    if idx.size and (idx.min() < 0 or idx.max() >= bank.num_samples):
        raise IndexError(f"bank_update: index out of range for {bank.num_samples} rows")
    m = bank.momentum
    if m == 1.0:
        return
    if m == 0.0:
        bank.rows[idx] = feats.astype(np.float32)
        return
    blended = m * bank.rows[idx].astype(np.float64) + (1.0 - m) * feats.astype(np.float64)
    # antipodal row and feature cancel; fall back to the feature
    cancelled = np.linalg.norm(blended, axis=1) < 1e-12
    blended[cancelled] = feats[cancelled]
    bank.rows[idx] = _normalize(blended)


def bank_sample(bank: MemoryBank, count: int, exclude, rng: np.random.Generator) -> np.ndarray:
    """Copies of ``count`` rows drawn uniformly without replacement, skipping ``exclude``."""
    excluded = np.zeros(bank.num_samples, dtype=bool)
    excluded[np.fromiter(exclude, dtype=np.int64)] = True
    pool = np.flatnonzero(~excluded)
    if count > pool.size:
        raise ValueError(
            f"bank_sample: requested {count} rows but only {pool.size} are available"
        )
    chosen = rng.choice(pool, size=count, replace=False)
    return bank.rows[chosen].copy()
