"""Shared domain types for descriptor aggregation pipelines.

All types are immutable after construction and may be shared freely across
threads. Raw descriptors are stored as float32 (the usual descriptor-file
dtype); everything derived from them (embeddings, kernels, weights,
aggregates) is kept in float64 so the iterative solvers retain their
tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DataFormatError(Exception):
    """A file does not conform to one of the declared on-disk formats."""


class BadMagicError(DataFormatError):
    pass


class BadVersionError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class DimensionOverflowError(DataFormatError):
    pass


class NumericalError(Exception):
    """An iterative numerical procedure failed."""


class ConvergenceError(NumericalError):
    """Solver hit its iteration cap; carries the residual it reached."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ScalingError(NumericalError):
    """Sinkhorn scaling met a nonpositive row sum (kernel needs clipping)."""


class ZeroVectorError(NumericalError):
    """A zero vector reached an operation that requires a nonzero norm."""


def _as_finite(arr: np.ndarray, name: str, dtype: np.dtype | type) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must contain only finite values")
    return out


@dataclass(frozen=True)
class DescriptorSet:
    """An image's n local descriptors, one per row, in input space R^d.

    Row order is significant: weight vectors index descriptors positionally.
    n = 0 is representable (an image with no features) but rejected by the
    aggregation operations downstream.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _as_finite(self.data, "descriptors", np.float32)
        if data.ndim != 2:
            raise ValueError(f"descriptor array must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValueError("descriptor dimensionality d must be >= 1")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Codebook:
    """Visual vocabulary: c centroids in the descriptor space."""

    centroids: np.ndarray

    def __post_init__(self):
        cent = _as_finite(self.centroids, "centroids", np.float64)
        if cent.ndim != 2 or cent.shape[0] < 1:
            raise ValueError(f"centroids must be a nonempty 2-D array, got shape {cent.shape}")
        # Duplicate centroids would make hard assignment ambiguous.
        for i in range(cent.shape[0]):
            if np.any(np.all(cent[i + 1 :] == cent[i], axis=1)):
                raise ValueError(f"centroid {i} is duplicated")
        object.__setattr__(self, "centroids", cent)

    @property
    def c(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class EmbeddedSet:
    """Per-descriptor embeddings, one column per descriptor (D x n).

    When the embedding is block-sparse by centroid, ``assignment`` gives each
    column's centroid index and ``block_layout`` maps centroid k to the
    half-open row range occupied by its block. Columns must then be exactly
    zero outside their own block; the fast kernel path relies on this being
    structural, not approximate.
    """

    phi: np.ndarray
    assignment: np.ndarray | None = None
    block_layout: tuple[tuple[int, int], ...] | None = None
    unit_columns: bool = False

    def __post_init__(self):
        phi = _as_finite(self.phi, "embeddings", np.float64)
        if phi.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {phi.shape}")
        object.__setattr__(self, "phi", phi)

        if (self.assignment is None) != (self.block_layout is None):
            raise ValueError("assignment and block_layout must be given together")
        if self.assignment is not None:
            assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)
            if assignment.shape != (phi.shape[1],):
                raise ValueError("assignment length must match the number of columns")
            layout = tuple((int(s), int(e)) for s, e in self.block_layout)
            for k, (s, e) in enumerate(layout):
                if not (0 <= s < e <= phi.shape[0]):
                    raise ValueError(f"block {k} range [{s},{e}) is out of bounds")
            if assignment.size and (assignment.min() < 0 or assignment.max() >= len(layout)):
                raise ValueError("assignment refers to a centroid without a block")
            object.__setattr__(self, "assignment", assignment)
            object.__setattr__(self, "block_layout", layout)
            self._check_block_support(phi, assignment, layout)

        if self.unit_columns:
            norms = np.linalg.norm(phi, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("unit_columns declared but some column norm is not 1")

    @staticmethod
    def _check_block_support(phi, assignment, layout) -> None:
        outside = np.ones(phi.shape, dtype=bool)
        for k, (s, e) in enumerate(layout):
            cols = np.flatnonzero(assignment == k)
            if cols.size:
                outside[s:e, cols] = False
        if np.any(phi[outside] != 0.0):
            raise ValueError("column has nonzero entries outside its assigned block")

    @property
    def dim(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]


@dataclass(frozen=True)
class KernelBlock:
    """One diagonal block of a block-diagonal Gram matrix.

    ``indices`` are the global descriptor indices the block covers (ascending);
    ``values`` is the dense symmetric sub-matrix over those descriptors.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        vals = _as_finite(self.values, "kernel block", np.float64)
        if idx.ndim != 1 or vals.shape != (idx.size, idx.size):
            raise ValueError("block values must be square and match the index count")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("block indices must be strictly ascending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)


_SYM_RTOL = 1e-9


def _check_symmetric(mat: np.ndarray, what: str) -> None:
    bound = _SYM_RTOL * np.maximum(1.0, np.abs(mat))
    if np.any(np.abs(mat - mat.T) > bound):
        raise ValueError(f"{what} is not symmetric within tolerance")


@dataclass(frozen=True)
class KernelMatrix:
    """The n x n Gram matrix of pairwise embedding similarities.

    Stored either densely or as per-centroid diagonal blocks plus a row
    permutation (the ``indices`` of each block). The block form represents
    cross-block entries as exact zeros.
    """

    n: int
    dense: np.ndarray | None = None
    blocks: tuple[KernelBlock, ...] | None = None

    def __post_init__(self):
        if (self.dense is None) == (self.blocks is None):
            raise ValueError("exactly one of dense or blocks must be set")
        if self.n < 1:
            raise ValueError("kernel order must be >= 1")
        if self.dense is not None:
            dense = _as_finite(self.dense, "kernel", np.float64)
            if dense.shape != (self.n, self.n):
                raise ValueError("dense kernel shape does not match its order")
            _check_symmetric(dense, "kernel")
            object.__setattr__(self, "dense", dense)
        else:
            blocks = tuple(self.blocks)
            covered = np.concatenate([b.indices for b in blocks]) if blocks else np.empty(0, np.int64)
            if not np.array_equal(np.sort(covered), np.arange(self.n)):
                raise ValueError("block indices must partition the descriptor range")
            for b in blocks:
                _check_symmetric(b.values, "kernel block")
            object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_dense(cls, mat: np.ndarray) -> "KernelMatrix":
        mat = np.asarray(mat, dtype=np.float64)
        return cls(n=mat.shape[0], dense=mat)

    @classmethod
    def from_blocks(cls, blocks: tuple[KernelBlock, ...], n: int) -> "KernelMatrix":
        return cls(n=n, blocks=tuple(blocks))

    @property
    def is_block(self) -> bool:
        return self.blocks is not None

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense.copy()
        out = np.zeros((self.n, self.n))
        for b in self.blocks:
            out[np.ix_(b.indices, b.indices)] = b.values
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError("vector length does not match kernel order")
        if self.dense is not None:
            return self.dense @ v
        out = np.zeros(self.n)
        for b in self.blocks:
            out[b.indices] = b.values @ v[b.indices]
        return out

    def diagonal(self) -> np.ndarray:
        if self.dense is not None:
            return np.diag(self.dense).copy()
        out = np.zeros(self.n)
        for b in self.blocks:
            out[b.indices] = np.diag(b.values)
        return out

    def abs_row_sums(self) -> np.ndarray:
        if self.dense is not None:
            return np.abs(self.dense).sum(axis=1)
        out = np.zeros(self.n)
        for b in self.blocks:
            out[b.indices] = np.abs(b.values).sum(axis=1)
        return out


_WEIGHT_METHODS = ("uniform", "democratic", "gmp")


@dataclass(frozen=True)
class WeightVector:
    """Per-descriptor aggregation weights, tagged with how they were computed."""

    alpha: np.ndarray
    method: str

    def __post_init__(self):
        alpha = _as_finite(self.alpha, "weights", np.float64)
        if alpha.ndim != 1:
            raise ValueError("weights must be a 1-D vector")
        if self.method not in _WEIGHT_METHODS:
            raise ValueError(f"unknown weight method {self.method!r}")
        if self.method == "democratic" and np.any(alpha <= 0.0):
            raise ValueError("democratic weights must be strictly positive")
        object.__setattr__(self, "alpha", alpha)

    @property
    def n(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class AggregateVector:
    """A pooled image vector plus the ordered list of transforms applied to it.

    ``state`` starts at ("raw",) and records normalization steps such as
    "rotated", "power(0.5)", "truncated(128)" and "l2" in application order.
    """

    xi: np.ndarray
    state: tuple[str, ...] = ("raw",)

    def __post_init__(self):
        xi = _as_finite(self.xi, "aggregate", np.float64)
        if xi.ndim != 1:
            raise ValueError("aggregate must be a 1-D vector")
        state = tuple(self.state)
        if not state:
            raise ValueError("state must record at least the raw stage")
        if state[-1] == "l2":
            norm = np.linalg.norm(xi)
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"l2-normalized vector has norm {norm}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "state", state)

    @property
    def dim(self) -> int:
        return self.xi.shape[0]

    @property
    def is_normalized(self) -> bool:
        return bool(self.state) and self.state[-1] == "l2"
