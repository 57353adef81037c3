"""Matrix Market I/O, synthetic matrix generators and block distribution.

The generators are counter based: every entry is a pure function of
``(seed, stream, global row, global column)``, so any block of a logical
matrix can be produced on its own and a matrix assembled from blocks is
identical whatever grid generated it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, MatrixMarketError
from .matrix import BlockMap, is_sparse, sparse_from_entries

__all__ = [
    "MatrixSource",
    "PRESETS",
    "counter_uniform",
    "distribute",
    "gather_blocks",
    "gen_dense_synthetic",
    "gen_sparse_er",
    "init_H",
    "init_W",
    "random_factor_block",
    "read_matrix_market",
    "write_matrix_market",
]

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_ODD = np.uint64(0xD1B54A32D192ED03)

# stream ids keep the different random fields of one seed independent
STREAM_H, STREAM_W = 1, 2
STREAM_DENSE, STREAM_NOISE_A, STREAM_NOISE_B = 10, 11, 12
STREAM_PATTERN, STREAM_VALUE = 20, 21


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, stream: int, rows, cols) -> np.ndarray:
    """Uniform [0, 1) values keyed by ``(seed, stream, row, col)``.

    ``rows`` and ``cols`` are 1-D global index arrays; the result has shape
    ``(len(rows), len(cols))``.
    """
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    key = np.uint64((int(seed) * 0x100000001B3 + int(stream)) & _MASK)
    base = _mix(np.atleast_1d(key))[0]
    r = _mix(base ^ (rows * _GOLDEN))
    h = _mix(r[:, None] + cols[None, :] * _ODD)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _span(s, total):
    if s is None:
        return np.arange(total)
    if isinstance(s, slice):
        return np.arange(*s.indices(total))
    return np.asarray(s)


def random_factor_block(seed: int, stream: int, index, k: int, total: int) -> np.ndarray:
    """``len(index) x k`` block of a factor whose entries are keyed by
    (global index, factor column)."""
    return counter_uniform(seed, stream, _span(index, total), np.arange(k))


def init_H(n: int, k: int, seed: int, blockmap: BlockMap | None = None):
    """Initial H with entries uniform in [0, 1).

    Without ``blockmap`` returns the full k x n matrix; with it, a list of the
    k x (n/p) blocks ``(H_j)_i`` indexed by linear rank. The logical H does
    not depend on the grid.
    """
    if blockmap is None:
        return random_factor_block(seed, STREAM_H, None, k, n).T.copy()
    grid = blockmap.grid
    return [random_factor_block(seed, STREAM_H, blockmap.h_block(r.i, r.j), k, n).T.copy()
            for r in grid.ranks()]


def init_W(m: int, k: int, seed: int, rows=None) -> np.ndarray:
    """Starting W rows for solvers that refine an iterate (MU, HALS)."""
    return random_factor_block(seed, STREAM_W, rows, k, m)


def _nth_prime(n: int) -> int:
    found, cand = 0, 1
    while found <= n:
        cand += 1
        if all(cand % d for d in range(2, int(math.isqrt(cand)) + 1)):
            found += 1
    return cand


def gen_dense_synthetic(m: int, n: int, seed: int, noise_std: float = 0.1,
                        rows=None, cols=None, rank: int | None = None) -> np.ndarray:
    """Uniform [0, 1) matrix plus Gaussian noise, clamped at zero.

    ``rows``/``cols`` select a block of the logical ``m x n`` matrix. Passing
    ``rank`` switches to per-process generation: the block is drawn from a
    stream seeded with that rank's own prime, which is faster but makes the
    logical matrix depend on the distribution.
    """
    if noise_std < 0:
        raise ContractViolation("noise_std must be >= 0")
    r_idx, c_idx = _span(rows, m), _span(cols, n)
    if rank is not None:
        rng = np.random.default_rng([int(seed), _nth_prime(int(rank))])
        a = rng.random((r_idx.size, c_idx.size))
        if noise_std > 0:
            a += rng.normal(0.0, noise_std, a.shape)
        return np.maximum(a, 0.0)
    a = counter_uniform(seed, STREAM_DENSE, r_idx, c_idx)
    if noise_std > 0:
        u1 = counter_uniform(seed, STREAM_NOISE_A, r_idx, c_idx)
        u2 = counter_uniform(seed, STREAM_NOISE_B, r_idx, c_idx)
        gauss = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        a = a + noise_std * gauss
    return np.maximum(a, 0.0)


def gen_sparse_er(m: int, n: int, density: float, seed: int,
                  rows=None, cols=None) -> sp.csr_array:
    """Erdos-Renyi sparse matrix: each entry is nonzero independently with
    probability ``density``; nonzero values are uniform in (0, 1]."""
    if not 0.0 < density <= 1.0:
        raise ContractViolation(f"density must be in (0, 1], got {density}")
    r_idx, c_idx = _span(rows, m), _span(cols, n)
    hit = counter_uniform(seed, STREAM_PATTERN, r_idx, c_idx) < density
    local_r, local_c = np.nonzero(hit)
    values = 1.0 - counter_uniform(seed, STREAM_VALUE, r_idx, c_idx)[local_r, local_c]
    return sparse_from_entries((r_idx.size, c_idx.size), local_r, local_c, values)


@dataclass(frozen=True)
class MatrixSource:
    """Where the input matrix comes from."""

    kind: Literal["file", "dense", "sparse"]
    m: int = 0
    n: int = 0
    seed: int = 0
    noise_std: float = 0.1
    density: float = 0.001
    path: str | None = None

    def __post_init__(self):
        if self.kind == "file":
            if not self.path:
                raise ContractViolation("file source needs a path")
            return
        if self.m < 1 or self.n < 1:
            raise ContractViolation("dimensions must be >= 1")
        if self.kind == "sparse" and not 0.0 < self.density <= 1.0:
            raise ContractViolation("density must be in (0, 1]")

    def load(self, rows=None, cols=None):
        if self.kind == "file":
            a = read_matrix_market(self.path)
            if rows is None and cols is None:
                return a
            return _slice(a, rows or slice(None), cols or slice(None))
        if self.kind == "dense":
            return gen_dense_synthetic(self.m, self.n, self.seed, self.noise_std, rows, cols)
        return gen_sparse_er(self.m, self.n, self.density, self.seed, rows, cols)


# Shapes of the reference benchmark datasets, kept as generator presets. The real
# Video and Webbase matrices are not bundled.
PRESETS = {
    "dsyn": dict(kind="dense", m=172_800, n=115_200),
    "ssyn": dict(kind="sparse", m=172_800, n=115_200, density=0.001),
    "video": dict(kind="dense", m=1_013_400, n=2_400),
    "webbase": dict(kind="sparse", m=1_000_005, n=1_000_005, density=3_105_536 / 1_000_005 ** 2),
}


def _slice(a, rows: slice, cols: slice):
    if is_sparse(a):
        block = sp.csr_array(a[rows, cols])
        block.sum_duplicates()
        block.sort_indices()
        return block
    return np.ascontiguousarray(a[rows, cols])


def distribute(a, blockmap: BlockMap, layout: Literal["grid-2D", "naive-dual"] = "grid-2D"):
    """Cut a logical matrix into per-rank local matrices, indexed by linear rank.

    ``grid-2D`` gives rank (i, j) the block ``A_ij``. ``naive-dual`` needs a
    ``p x 1`` map and gives rank i the pair ``(A_i, A^i)``: row block i and
    column block i.
    """
    if tuple(a.shape) != (blockmap.m, blockmap.n):
        raise ContractViolation(f"matrix {a.shape} does not match map {blockmap.m}x{blockmap.n}")
    if blockmap.has_empty_factor_blocks:
        raise ContractViolation(
            f"grid {blockmap.grid} leaves an empty factor block for a {blockmap.m}x{blockmap.n} matrix")
    grid = blockmap.grid
    if layout == "grid-2D":
        return [_slice(a, blockmap.row_block(r.i), blockmap.col_block(r.j)) for r in grid.ranks()]
    if layout == "naive-dual":
        if grid.p_c != 1:
            raise ContractViolation("naive-dual layout needs a p x 1 block map")
        return [(_slice(a, blockmap.row_block(i), slice(None)),
                 _slice(a, slice(None), blockmap.h_block(i, 0)))
                for i in range(grid.p)]
    raise ContractViolation(f"unknown layout {layout!r}")


def gather_blocks(blocks, blockmap: BlockMap):
    """Reassemble ``grid-2D`` blocks into the logical matrix."""
    grid = blockmap.grid
    rows = []
    for i in range(grid.p_r):
        row = [blocks[i * grid.p_c + j] for j in range(grid.p_c)]
        if any(is_sparse(b) for b in row):
            rows.append(sp.hstack([sp.csr_array(b) for b in row], format="csr"))
        else:
            rows.append(np.hstack(row))
    if any(is_sparse(r) for r in rows):
        return sp.csr_array(sp.vstack([sp.csr_array(r) for r in rows], format="csr"))
    return np.vstack(rows)


# Matrix Market ---------------------------------------------------------------

def _numbers(tokens, lineno, count, kinds):
    if len(tokens) != count:
        raise MatrixMarketError(f"expected {count} fields, got {len(tokens)}", lineno)
    out = []
    for tok, kind in zip(tokens, kinds):
        try:
            out.append(int(tok) if kind == "i" else float(tok))
        except ValueError:
            raise MatrixMarketError(f"cannot parse {tok!r}", lineno) from None
    return out


def read_matrix_market(path):
    """Read an ``array`` file into a dense array or a ``coordinate`` file into CSR.

    Supports ``real``/``integer``/``pattern`` fields and ``general``/``symmetric``
    symmetry; symmetric input is expanded. Explicit zeros in coordinate files
    are dropped.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0].lower() != "%%matrixmarket" or head[1].lower() != "matrix":
        raise MatrixMarketError("missing '%%MatrixMarket matrix' header", 1)
    fmt, field, symmetry = (h.lower() for h in head[2:])
    if fmt not in ("array", "coordinate"):
        raise MatrixMarketError(f"unsupported format {fmt!r}", 1)
    if field not in ("real", "integer", "pattern") or (field == "pattern" and fmt == "array"):
        raise MatrixMarketError(f"unsupported field {field!r}", 1)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {symmetry!r}", 1)

    body = [(no, ln.split()) for no, ln in enumerate(lines[1:], start=2)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MatrixMarketError("missing size line", len(lines))
    size_no, size_tokens = body[0]
    entries = body[1:]

    if fmt == "array":
        m, n = _numbers(size_tokens, size_no, 2, "ii")
        if m < 0 or n < 0 or (symmetry == "symmetric" and m != n):
            raise MatrixMarketError(f"bad array size {m}x{n}", size_no)
        if symmetry == "general":
            cells = [(i, j) for j in range(n) for i in range(m)]
        else:
            cells = [(i, j) for j in range(n) for i in range(j, m)]
        if len(entries) != len(cells):
            where = entries[len(cells)][0] if len(entries) > len(cells) else len(lines) + 1
            raise MatrixMarketError(
                f"expected {len(cells)} array entries, found {len(entries)}", where)
        a = np.zeros((m, n))
        for (i, j), (no, toks) in zip(cells, entries):
            (v,) = _numbers(toks, no, 1, "f")
            a[i, j] = v
            if symmetry == "symmetric":
                a[j, i] = v
        if not np.all(np.isfinite(a)):
            raise MatrixMarketError("non-finite value", size_no)
        return a

    m, n, count = _numbers(size_tokens, size_no, 3, "iii")
    if m < 0 or n < 0 or count < 0:
        raise MatrixMarketError("negative size", size_no)
    if len(entries) != count:
        where = entries[count][0] if len(entries) > count else len(lines) + 1
        raise MatrixMarketError(f"expected {count} entries, found {len(entries)}", where)
    rows, cols, vals = [], [], []
    seen = {}
    for no, toks in entries:
        if field == "pattern":
            i, j = _numbers(toks, no, 2, "ii")
            v = 1.0
        else:
            i, j, v = _numbers(toks, no, 3, "iif")
        if not (1 <= i <= m and 1 <= j <= n):
            raise MatrixMarketError(f"index ({i}, {j}) outside 1..{m} x 1..{n}", no)
        if not math.isfinite(v):
            raise MatrixMarketError("non-finite value", no)
        pairs = [(i - 1, j - 1)]
        if symmetry == "symmetric" and i != j:
            pairs.append((j - 1, i - 1))
        for pair in pairs:
            if pair in seen:
                raise MatrixMarketError(
                    f"duplicate entry ({pair[0] + 1}, {pair[1] + 1}), first on line {seen[pair]}", no)
            seen[pair] = no
            if v != 0.0:
                rows.append(pair[0])
                cols.append(pair[1])
                vals.append(v)
    return sparse_from_entries((m, n), rows, cols, vals)


def write_matrix_market(a, path):
    """Write a dense array (``array`` format) or sparse matrix (``coordinate``),
    values with 17 significant digits."""
    path = Path(path)
    m, n = a.shape
    with open(path, "w", encoding="ascii") as fh:
        if is_sparse(a):
            coo = sp.csr_array(a).tocoo()
            order = np.lexsort((coo.col, coo.row))
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            fh.write(f"{m} {n} {coo.nnz}\n")
            for t in order:
                fh.write(f"{coo.row[t] + 1} {coo.col[t] + 1} {coo.data[t]:.17g}\n")
        else:
            a = np.asarray(a, dtype=np.float64)
            fh.write("%%MatrixMarket matrix array real general\n")
            fh.write(f"{m} {n}\n")
            for v in a.T.ravel():
                fh.write(f"{v:.17g}\n")
