"""Local matrix storage, block partitioning and the four local kernels.

Dense blocks are plain 2-D ``float64`` numpy arrays. Sparse blocks are
``scipy.sparse.csr_array`` in canonical form (sorted indices, no duplicates,
no explicit zeros). Every kernel returns its result together with the flop
count charged to it, so callers can book the cost without re-deriving it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation
from .grid import GridShape

__all__ = [
    "BlockMap",
    "frobenius_residual",
    "gram",
    "is_sparse",
    "matmul_cross_left",
    "matmul_cross_right",
    "nnz",
    "partition",
    "sparse_from_entries",
    "split_bounds",
    "storage_words",
]


def is_sparse(a) -> bool:
    return sp.issparse(a)


def nnz(a) -> int:
    """Stored nonzeros of a sparse block, or the entry count of a dense one."""
    if is_sparse(a):
        return int(a.nnz)
    return int(np.asarray(a).size)


def storage_words(a) -> int:
    """Words needed to hold a block: ``nnz`` for sparse, ``rows*cols`` for dense."""
    return nnz(a)


def sparse_from_entries(shape, rows, cols, values) -> sp.csr_array:
    """Build a canonical CSR block from coordinate triples.

    Raises ContractViolation on out-of-range indices, duplicate coordinates,
    zero values or non-finite values.
    """
    m, n = (int(d) for d in shape)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if not (rows.size == cols.size == values.size):
        raise ContractViolation("rows, cols and values must have equal length")
    if rows.size:
        if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
            raise ContractViolation(f"coordinate outside a {m}x{n} matrix")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("sparse values must be finite")
        if np.any(values == 0.0):
            raise ContractViolation("sparse values must be nonzero")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if np.any(dup):
            at = int(np.argmax(dup))
            raise ContractViolation(f"duplicate entry at ({rows[at]}, {cols[at]})")
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=m), out=indptr[1:])
    out = sp.csr_array((values, cols, indptr), shape=(m, n))
    out.has_sorted_indices = True
    return out


def _check_dense(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {x.shape}")
    return x


def matmul_cross_right(a_block, ht_block):
    """Return ``(a_block @ ht_block, flops)``.

    ``a_block`` is r x c (dense or sparse), ``ht_block`` is c x k. Flops are
    ``2*r*c*k`` for a dense block and ``2*nnz*k`` for a sparse one.
    """
    ht_block = _check_dense(ht_block, "ht_block")
    r, c = a_block.shape
    if ht_block.shape[0] != c:
        raise ContractViolation(
            f"inner dimensions disagree: {a_block.shape} @ {ht_block.shape}")
    k = ht_block.shape[1]
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if is_sparse(a_block):
        out = np.asarray(a_block @ ht_block, dtype=np.float64)
        flops = 2 * int(a_block.nnz) * k
    else:
        out = _check_dense(a_block, "a_block") @ ht_block
        flops = 2 * r * c * k
    return np.ascontiguousarray(out), flops


def matmul_cross_left(wt_block, a_block):
    """Return ``(wt_block @ a_block, flops)`` with the same flop rule."""
    wt_block = _check_dense(wt_block, "wt_block")
    r, c = a_block.shape
    if wt_block.shape[1] != r:
        raise ContractViolation(
            f"inner dimensions disagree: {wt_block.shape} @ {a_block.shape}")
    k = wt_block.shape[0]
    if is_sparse(a_block):
        # (A^T W)^T keeps the sparse operand on the left where scipy is fastest
        out = np.asarray(a_block.T @ wt_block.T, dtype=np.float64).T
        flops = 2 * int(a_block.nnz) * k
    else:
        out = wt_block @ _check_dense(a_block, "a_block")
        flops = 2 * r * c * k
    return np.ascontiguousarray(out), flops


def gram(f_block):
    """Return ``(F^T F, flops)`` for an r x k block, charging ``r*k*k`` flops.

    Accumulates in extended precision and mirrors the upper triangle so the
    result is exactly symmetric.
    """
    f_block = _check_dense(f_block, "f_block")
    r, k = f_block.shape
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if r == 0:
        return np.zeros((k, k)), 0
    wide = f_block.astype(np.longdouble)
    g = (wide.T @ wide).astype(np.float64)
    upper = np.triu(g)
    g = upper + np.triu(g, 1).T
    return g, r * k * k


def frobenius_residual(a, w, h) -> float:
    """``||A - W H||_F``; the expanded trace form is used when ``A`` is sparse."""
    w = _check_dense(w, "w")
    h = _check_dense(h, "h")
    m, n = a.shape
    if w.shape[0] != m or h.shape[1] != n or w.shape[1] != h.shape[0]:
        raise ContractViolation(
            f"nonconformal shapes A{a.shape}, W{w.shape}, H{h.shape}")
    if not is_sparse(a):
        return float(np.linalg.norm(_check_dense(a, "a") - w @ h))
    a = sp.csr_array(a)
    coo = a.tocoo()
    a_sq = float(np.dot(coo.data, coo.data))
    cross = float(np.dot(coo.data, np.einsum("ij,ji->i", w[coo.row], h[:, coo.col])))
    trace = float(np.sum((w.T @ w) * (h @ h.T)))
    return float(np.sqrt(max(a_sq - 2.0 * cross + trace, 0.0)))


def split_bounds(total: int, parts: int) -> np.ndarray:
    """Boundaries of ``parts`` contiguous near-equal pieces of ``range(total)``.

    The first ``total % parts`` pieces get one extra element.
    """
    if parts < 1:
        raise ContractViolation("parts must be >= 1")
    base, extra = divmod(int(total), int(parts))
    sizes = np.full(parts, base, dtype=np.int64)
    sizes[:extra] += 1
    bounds = np.zeros(parts + 1, dtype=np.int64)
    np.cumsum(sizes, out=bounds[1:])
    return bounds


@dataclass(frozen=True)
class BlockMap:
    """Ownership of rows and columns induced by a processor grid.

    ``row_bounds``/``col_bounds`` cut ``A`` into ``p_r x p_c`` blocks. Each row
    block ``i`` is further cut into ``p_c`` pieces, piece ``j`` owned by rank
    ``(i, j)``: those are the rows of W the rank updates (``w_bounds``, indexed
    ``i * p_c + j``). Likewise each column block ``j`` is cut into ``p_r``
    pieces for H (``h_bounds``, indexed ``j * p_r + i``).
    """

    m: int
    n: int
    grid: GridShape
    row_bounds: np.ndarray
    col_bounds: np.ndarray
    w_bounds: np.ndarray
    h_bounds: np.ndarray

    def row_block(self, i: int) -> slice:
        return slice(int(self.row_bounds[i]), int(self.row_bounds[i + 1]))

    def col_block(self, j: int) -> slice:
        return slice(int(self.col_bounds[j]), int(self.col_bounds[j + 1]))

    def w_block(self, i: int, j: int) -> slice:
        t = i * self.grid.p_c + j
        return slice(int(self.w_bounds[t]), int(self.w_bounds[t + 1]))

    def h_block(self, i: int, j: int) -> slice:
        t = j * self.grid.p_r + i
        return slice(int(self.h_bounds[t]), int(self.h_bounds[t + 1]))

    @property
    def has_empty_factor_blocks(self) -> bool:
        return bool(np.any(np.diff(self.w_bounds) == 0) or np.any(np.diff(self.h_bounds) == 0))

    def w_counts(self, i: int) -> list[int]:
        """Rows of W held by each rank of grid row ``i``, in column order."""
        t0 = i * self.grid.p_c
        return np.diff(self.w_bounds[t0:t0 + self.grid.p_c + 1]).tolist()

    def h_counts(self, j: int) -> list[int]:
        """Columns of H held by each rank of grid column ``j``, in row order."""
        t0 = j * self.grid.p_r
        return np.diff(self.h_bounds[t0:t0 + self.grid.p_r + 1]).tolist()


def _nested(outer: np.ndarray, parts: int) -> np.ndarray:
    pieces = [outer[0:1]]
    for lo, hi in zip(outer[:-1], outer[1:]):
        pieces.append(lo + split_bounds(hi - lo, parts)[1:])
    return np.concatenate(pieces)


def partition(m: int, n: int, grid: GridShape) -> BlockMap:
    """Cut an ``m x n`` matrix and its factors over ``grid``.

    Raises ContractViolation when a block of ``A`` would be empty. Nested
    factor pieces may be empty (for example n=4 columns over a 3 x 2 grid);
    ``BlockMap.has_empty_factor_blocks`` reports it and the distribution step
    rejects such maps.
    """
    if m < 1 or n < 1:
        raise ContractViolation(f"matrix dimensions must be >= 1, got {m}x{n}")
    if grid.p_r > m or grid.p_c > n:
        raise ContractViolation(f"grid {grid} has more blocks than a {m}x{n} matrix")
    row_bounds = split_bounds(m, grid.p_r)
    col_bounds = split_bounds(n, grid.p_c)
    w_bounds = _nested(row_bounds, grid.p_c)
    h_bounds = _nested(col_bounds, grid.p_r)
    return BlockMap(m, n, grid, row_bounds, col_bounds, w_bounds, h_bounds)
