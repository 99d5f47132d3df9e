"""Construction and conditioning of the descriptor similarity kernel."""

from __future__ import annotations

import numpy as np

from .types import EmbeddedSet, KernelBlock, KernelMatrix


def gram(embedded: EmbeddedSet) -> KernelMatrix:
    """Pairwise similarity matrix K[i,j] = phi_i . phi_j.

    When the embedding carries assignment metadata the kernel is built block
    by block: columns assigned to different centroids have disjoint support,
    so their inner products are structurally zero and never computed.
    """
    if embedded.n == 0:
        raise ValueError("cannot build a kernel for an empty set")
    phi = embedded.phi
    if embedded.assignment is None:
        return KernelMatrix.from_dense(phi.T @ phi)

    blocks = []
    for k, (start, stop) in enumerate(embedded.block_layout):
        cols = np.flatnonzero(embedded.assignment == k)
        if cols.size == 0:
            continue
        sub = phi[start:stop, :][:, cols]
        blocks.append(KernelBlock(indices=cols, values=sub.T @ sub))
    return KernelMatrix.from_blocks(tuple(blocks), embedded.n)


def _map_storage(kern: KernelMatrix, fn) -> KernelMatrix:
    if kern.dense is not None:
        return KernelMatrix(n=kern.n, dense=fn(kern.dense))
    blocks = tuple(KernelBlock(indices=b.indices, values=fn(b.values)) for b in kern.blocks)
    return KernelMatrix(n=kern.n, blocks=blocks)


def clip_negatives(kern: KernelMatrix) -> KernelMatrix:
    """Replace every negative entry by 0 (the usual Sinkhorn pre-processing)."""
    return _map_storage(kern, lambda m: np.maximum(m, 0.0))


def threshold_sparsify(kern: KernelMatrix, tau: float) -> KernelMatrix:
    """Zero out off-diagonal entries smaller than ``tau``.

    The diagonal is exempt: removing self-similarities would break both
    weight solvers. ``tau = 0`` is a no-op.
    """
    if tau < 0.0:
        raise ValueError("threshold must be >= 0")
    if tau == 0.0:
        return kern

    def apply(mat: np.ndarray) -> np.ndarray:
        out = mat.copy()
        mask = out < tau
        np.fill_diagonal(mask, False)
        out[mask] = 0.0
        return out

    return _map_storage(kern, apply)
