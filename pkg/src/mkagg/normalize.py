"""Post-aggregation normalization chain and the normalized similarity.

The chain is: optional rotation, signed power law, optional truncation to the
leading components, then l2 normalization. Comparing two vectors that went
through the chain with a dot product realizes the normalized kernel (unit
self-similarity).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import AggregateVector, ZeroVectorError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class NormalizeConfig:
    alpha_exponent: float = 0.5
    rotation: np.ndarray | None = None
    truncate_to: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha_exponent <= 1.0:
            raise ValueError("power-law exponent must lie in [0, 1]")
        if self.rotation is not None:
            rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
            if rot.ndim != 2 or rot.shape[0] != rot.shape[1]:
                raise ValueError("rotation must be a square matrix")
            if np.max(np.abs(rot.T @ rot - np.eye(rot.shape[0]))) > _ORTHO_TOL:
                raise ValueError("rotation matrix is not orthonormal")
            object.__setattr__(self, "rotation", rot)
        if self.truncate_to is not None and self.truncate_to < 1:
            raise ValueError("truncation size must be >= 1")


def power_law(v: np.ndarray, alpha_exponent: float) -> np.ndarray:
    """Elementwise signed power: a -> |a|^alpha * sign(a), with 0 -> 0.

    alpha = 1 is the identity and alpha = 0 binarizes to {-1, 0, 1}.
    """
    if alpha_exponent < 0.0:
        raise ValueError("power-law exponent must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    # sign(0) = 0 also pins 0^0 to 0 here.
    return np.sign(v) * np.abs(v) ** alpha_exponent


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ZeroVectorError("cannot l2-normalize a zero vector")
    return v / norm


def rn_fit(training_vectors: Sequence[AggregateVector], max_eigvecs: int) -> np.ndarray:
    """Learn a D x D rotation whose leading rows are principal directions.

    The first min(max_eigvecs, D) rows are the principal directions of the
    centered training vectors in descending variance order; the rest is a
    deterministic orthonormal completion built by Gram-Schmidt over the
    canonical basis. Each principal row's sign is fixed by making its
    largest-magnitude component positive.
    """
    if max_eigvecs < 1:
        raise ValueError("max_eigvecs must be >= 1")
    if len(training_vectors) < 2:
        raise ValueError("need at least 2 training vectors")
    dim = training_vectors[0].dim
    for v in training_vectors:
        if v.dim != dim:
            raise ValueError("training vectors must share a single dimensionality")

    data = np.stack([v.xi for v in training_vectors])
    data = data - data.mean(axis=0)
    # SVD of the centered data; right singular vectors come out in
    # descending-variance order already.
    _, _, vt = np.linalg.svd(data, full_matrices=False)
    lead = vt[: min(max_eigvecs, vt.shape[0])].copy()
    for row in lead:
        if row[np.argmax(np.abs(row))] < 0.0:
            row *= -1.0

    rows = [row for row in lead]
    for j in range(dim):
        if len(rows) == dim:
            break
        v = np.zeros(dim)
        v[j] = 1.0
        basis = np.stack(rows)
        # Two projection passes keep the completion orthonormal to ~1e-12.
        for _ in range(2):
            v = v - basis.T @ (basis @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            rows.append(v / norm)
    if len(rows) != dim:
        raise ValueError("failed to complete an orthonormal basis")
    return np.stack(rows)


def apply_chain(v: AggregateVector, cfg: NormalizeConfig) -> AggregateVector:
    """Rotation (optional) -> power law -> truncation (optional) -> l2."""
    x = v.xi
    state = v.state
    if cfg.rotation is not None:
        if cfg.rotation.shape[0] != x.shape[0]:
            raise ValueError(
                f"rotation is {cfg.rotation.shape[0]}-dimensional, vector is {x.shape[0]}"
            )
        x = cfg.rotation @ x
        state = state + ("rotated",)
    x = power_law(x, cfg.alpha_exponent)
    state = state + (f"power({cfg.alpha_exponent:g})",)
    if cfg.truncate_to is not None:
        if cfg.truncate_to > x.shape[0]:
            raise ValueError(f"cannot truncate length {x.shape[0]} to {cfg.truncate_to}")
        x = x[: cfg.truncate_to]
        state = state + (f"truncated({cfg.truncate_to})",)
    x = l2_normalize(x)
    return AggregateVector(xi=x, state=state + ("l2",))


def similarity(a: AggregateVector, b: AggregateVector) -> float:
    """Dot product of two l2-normalized aggregates (the normalized kernel)."""
    if not a.is_normalized or not b.is_normalized:
        raise ValueError("similarity requires l2-normalized vectors")
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(a.xi @ b.xi)
