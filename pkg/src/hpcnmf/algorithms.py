"""ANLS-based NMF: a sequential reference and the two parallel schedules.

All three share one update convention. Each iteration first solves for W with
H fixed, then for H with the new W fixed, always through the normal equations
``G X = R`` with ``X`` stored k x r:

* W step: ``G = H H^T``, ``R = (A H^T)^T``, ``X = W^T``
* H step: ``G = W^T W``, ``R = W^T A``, ``X = H``

Internally H is kept transposed (``Ht``, n x k) so both Gram matrices come
from the same ``gram`` kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np

from .cluster import RankContext, run_virtual
from .dataio import STREAM_W, distribute, init_H, random_factor_block
from .errors import ConfigError, ContractViolation
from .grid import GridShape
from .ledger import CATEGORIES, CostLedger
from .matrix import (
    BlockMap,
    frobenius_residual,
    gram,
    is_sparse,
    matmul_cross_left,
    matmul_cross_right,
    partition,
    storage_words,
)
from .nls import NormalEquations, SolverChoice, nls_flops, solve_nls

__all__ = [
    "FactorPair",
    "IterationStats",
    "NmfConfig",
    "NmfResult",
    "hpc_nmf",
    "naive_parallel_nmf",
    "select_grid",
    "sequential_nmf",
    "stopping_check",
]


@dataclass(frozen=True)
class NmfConfig:
    """Run settings. ``grid`` is only consulted by ``hpc_nmf``; ``None`` means
    choose one with ``select_grid``."""

    k: int
    max_iters: int = 10
    solver: SolverChoice = field(default_factory=SolverChoice)
    seed: int = 0
    residual_tolerance: float | None = None
    grid: GridShape | None = None
    compute_residual: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.residual_tolerance is not None:
            if not self.residual_tolerance >= 0:
                raise ConfigError("residual_tolerance must be >= 0")
            if not self.compute_residual:
                raise ConfigError("a residual tolerance needs the residual to be computed")

    def check_shape(self, m: int, n: int):
        if self.k > min(m, n):
            raise ConfigError(f"k={self.k} exceeds min(m, n)={min(m, n)}")


@dataclass
class FactorPair:
    W: np.ndarray
    H: np.ndarray


@dataclass
class IterationStats:
    """One iteration's residual plus the critical-path ledger deltas
    (maximum over ranks, per category). Residuals are NaN when disabled."""

    iteration: int
    residual: float
    relative_residual: float
    ledger_delta: dict = field(default_factory=dict)


@dataclass
class NmfResult:
    factors: FactorPair
    stats: list
    ledger: CostLedger | None = None
    grid: GridShape | None = None
    history: list | None = None

    @property
    def W(self) -> np.ndarray:
        return self.factors.W

    @property
    def H(self) -> np.ndarray:
        return self.factors.H

    @property
    def residuals(self) -> list[float]:
        return [s.residual for s in self.stats]


def stopping_check(stats: list, config: NmfConfig) -> Literal["continue", "stop"]:
    """Decide after the latest iteration in ``stats`` whether to go on.

    Stops at ``max_iters``, or when a tolerance is set and the residual change
    relative to the first residual drops below it.
    """
    if len(stats) >= config.max_iters:
        return "stop"
    tol = config.residual_tolerance
    if tol is None or len(stats) < 2:
        return "continue"
    first = stats[0].residual
    change = abs(stats[-1].residual - stats[-2].residual)
    if first == 0.0 or change / first < tol:
        return "stop"
    return "continue"


def select_grid(m: int, n: int, p: int, objective: Literal["balanced", "words"] = "balanced") -> GridShape:
    """Pick a ``p_r x p_c`` grid for an ``m x n`` matrix on ``p`` ranks.

    A tall matrix (``m/p >= n``) gets ``p x 1`` and a wide one gets ``1 x p``.
    Otherwise ``balanced`` takes the divisor pair whose ``p_r`` is closest, on a
    log scale, to ``sqrt(n p / m)``; ``words`` minimizes ``n p_r + m p_c``, the
    factor-dependent part of the per-iteration communication volume. Ties go
    to the pair with ``p_r >= p_c``.
    """
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    if m < 1 or n < 1:
        raise ConfigError("matrix dimensions must be >= 1")
    if m >= n * p:
        return GridShape(p, 1)
    if n >= m * p:
        return GridShape(1, p)
    pairs = [(d, p // d) for d in range(1, p + 1) if p % d == 0]
    if objective == "balanced":
        # |log p_r - log sqrt(n p / m)| compared exactly: max(x, 1/x) with
        # x = p_r^2 m / (n p)
        def score(pr):
            x = Fraction(pr * pr * m, n * p)
            return max(x, 1 / x)
    elif objective == "words":
        def score(pr):
            return n * pr + m * (p // pr)
    else:
        raise ConfigError(f"unknown objective {objective!r}")
    best = min(pairs, key=lambda pc: (score(pc[0]), -pc[0]))
    return GridShape(*best)


def _w_start(config: NmfConfig, m: int, rows) -> np.ndarray | None:
    if not config.solver.needs_start:
        return None
    return random_factor_block(config.seed, STREAM_W, rows, config.k, m)


def _solve(choice, x_prev_rows, g, rhs_rows):
    """Solve for a row-stored factor block: rows of the result are columns of X."""
    x_prev = None if x_prev_rows is None else x_prev_rows.T
    return np.ascontiguousarray(solve_nls(choice, x_prev, NormalEquations(g, rhs_rows.T)).T)


def _frob_sq(a) -> float:
    if is_sparse(a):
        return float(np.dot(a.data, a.data))
    a = np.asarray(a)
    return float(np.sum(a * a))


def _relative(res, norm_a):
    return res / norm_a if norm_a > 0 else (0.0 if res == 0 else math.inf)


# Sequential reference ---------------------------------------------------------

def sequential_nmf(a, config: NmfConfig, keep_history: bool = False) -> NmfResult:
    """Single-process ANLS with exactly the update arithmetic of the parallel codes."""
    m, n = a.shape
    config.check_shape(m, n)
    k, choice = config.k, config.solver
    ht = init_H(n, k, config.seed).T.copy()
    w = _w_start(config, m, None)
    norm_a = math.sqrt(_frob_sq(a))
    stats, history = [], [] if keep_history else None
    while True:
        g, _ = gram(ht)
        v, _ = matmul_cross_right(a, ht)
        w = _solve(choice, w, g, v)
        g, _ = gram(w)
        y, _ = matmul_cross_left(w.T, a)
        ht = _solve(choice, ht, g, y.T)
        res = frobenius_residual(a, w, ht.T) if config.compute_residual else math.nan
        stats.append(IterationStats(len(stats) + 1, res, _relative(res, norm_a)))
        if keep_history:
            history.append((w.copy(), ht.T.copy()))
        if stopping_check(stats, config) == "stop":
            break
    return NmfResult(FactorPair(w, ht.T.copy()), stats, None, GridShape(1, 1), history)


# Shared rank-side helpers -----------------------------------------------------

def _local_residual_term(ctx, g_w, rhs_rows, ht_local):
    """``-2 <A, W H> + tr(W^T W H H^T)`` restricted to this rank's H columns."""
    with ctx.task("Other"):
        hh, flops = gram(ht_local)
        term = -2.0 * float(np.sum(rhs_rows * ht_local)) + float(np.sum(g_w * hh))
    ctx.charge("Other", flops=flops + 2 * rhs_rows.size + 2 * hh.size)
    return term


def _finish_iteration(ctx, config, norm_sq_a, term, residuals):
    """Complete the residual, mark the ledger, and decide whether to stop.

    Every rank sees the same all-reduced residual, so every rank stops at the
    same iteration.
    """
    if config.compute_residual:
        total = float(ctx.all_reduce(ctx.world, np.array([term]), category="Other")[0])
        res = math.sqrt(max(norm_sq_a + total, 0.0))
    else:
        res = math.nan
    ctx.mark_iteration()
    residuals.append(IterationStats(len(residuals) + 1, res, _relative(res, math.sqrt(norm_sq_a))))
    return stopping_check(residuals, config)


def _norm_sq(ctx, local_a, config):
    if not config.compute_residual:
        return 0.0
    local = _frob_sq(local_a)
    return float(ctx.all_reduce(ctx.world, np.array([local]), category="Other")[0])


def _run_ranks(grid, program, mode, workers):
    run = run_virtual(grid, program, mode=mode, workers=workers)
    return run.outputs, run.ledger


def _collect(outputs, ledger, order_w, order_h, keep_history):
    w = np.vstack([outputs[r]["w"] for r in order_w])
    h = np.vstack([outputs[r]["ht"] for r in order_h]).T.copy()
    stats = outputs[0]["stats"]
    for t, s in enumerate(stats):
        s.ledger_delta = {c: ledger.critical(c, t) for c in CATEGORIES}
    history = None
    if keep_history:
        history = [(np.vstack([outputs[r]["history"][t][0] for r in order_w]),
                    np.vstack([outputs[r]["history"][t][1] for r in order_h]).T.copy())
                   for t in range(len(stats))]
    return FactorPair(w, h), stats, history


# Naive parallel ---------------------------------------------------------------

def naive_parallel_nmf(a, config: NmfConfig, p: int, mode: str = "concurrent",
                       workers: int | None = None, keep_history: bool = False) -> NmfResult:
    """Row/column replicated NMF on ``p`` ranks.

    Rank i stores row block ``A_i`` and column block ``A^i`` of the input. Each
    half-iteration all-gathers the whole fixed factor, so every rank forms the
    full k x k Gram matrix redundantly.
    """
    m, n = a.shape
    config.check_shape(m, n)
    if p < 1:
        raise ConfigError("p must be >= 1")
    grid = GridShape(p, 1)
    try:
        bm = partition(m, n, grid)
        local = distribute(a, bm, "naive-dual")
    except ContractViolation as e:
        raise ConfigError(str(e)) from None
    w_counts = np.diff(bm.w_bounds).tolist()
    h_counts = bm.h_counts(0)
    k, choice = config.k, config.solver
    h0 = init_H(n, k, config.seed, bm)

    def program(ctx: RankContext):
        i = ctx.rank.i
        a_row, a_col = local[i]
        ctx.memory.hold("A_i", storage_words(a_row))
        ctx.memory.hold("A^i", storage_words(a_col))
        ht = h0[i].T.copy()
        w = _w_start(config, m, bm.w_block(i, 0))
        ctx.memory.hold("W_i", w_counts[i] * k)
        ctx.memory.hold("H^i", ht.size)
        norm_sq = _norm_sq(ctx, a_row, config)
        stats, history = [], []
        while True:
            ht_all = ctx.all_gather(ctx.world, ht, counts=h_counts)
            ctx.memory.hold("H", ht_all.size)
            with ctx.task("Gram"):
                g, flops = gram(ht_all)
            ctx.charge("Gram", flops=flops)
            with ctx.task("MM"):
                v, flops = matmul_cross_right(a_row, ht_all)
            ctx.charge("MM", flops=flops)
            ctx.memory.hold("AHt_i", v.size)
            ctx.memory.drop("H")
            with ctx.task("NLS"):
                w = _solve(choice, w, g, v)
            ctx.charge("NLS", flops=nls_flops(choice, k, w.shape[0]))
            ctx.memory.drop("AHt_i")

            w_all = ctx.all_gather(ctx.world, w, counts=w_counts)
            ctx.memory.hold("W", w_all.size)
            with ctx.task("Gram"):
                g, flops = gram(w_all)
            ctx.charge("Gram", flops=flops)
            with ctx.task("MM"):
                y, flops = matmul_cross_left(w_all.T, a_col)
            ctx.charge("MM", flops=flops)
            rhs = y.T
            ctx.memory.hold("WtA^i", rhs.size)
            ctx.memory.drop("W")
            with ctx.task("NLS"):
                ht = _solve(choice, ht, g, rhs)
            ctx.charge("NLS", flops=nls_flops(choice, k, ht.shape[0]))
            term = _local_residual_term(ctx, g, rhs, ht) if config.compute_residual else 0.0
            ctx.memory.drop("WtA^i")
            if keep_history:
                history.append((w.copy(), ht.copy()))
            if _finish_iteration(ctx, config, norm_sq, term, stats) == "stop":
                break
        return {"w": w, "ht": ht, "stats": stats, "history": history}

    outputs, ledger = _run_ranks(grid, program, mode, workers)
    order = list(range(p))
    factors, stats, history = _collect(outputs, ledger, order, order, keep_history)
    return NmfResult(factors, stats, ledger, grid, history)


# HPC-NMF ----------------------------------------------------------------------

def _resolve_grid(m, n, config: NmfConfig, p, grid) -> GridShape:
    grid = grid or config.grid
    if grid is None:
        if p is None:
            raise ConfigError("give either a grid or a rank count p")
        return select_grid(m, n, p)
    if p is not None and grid.p != p:
        raise ConfigError(f"grid {grid} has {grid.p} ranks, not p={p}")
    return grid


def hpc_nmf(a, config: NmfConfig, p: int | None = None, grid: GridShape | None = None,
            mode: str = "concurrent", workers: int | None = None,
            keep_history: bool = False) -> NmfResult:
    """Two-dimensional NMF on a ``p_r x p_c`` grid.

    Rank (i, j) stores only ``A_ij``, its slice ``(W_i)_j`` of W and its slice
    ``(H_j)_i`` of H. The W step all-reduces the Gram matrix over all ranks,
    all-gathers ``H_j`` within the grid column and reduce-scatters ``A_ij H_j^T``
    within the grid row; the H step mirrors it.
    """
    m, n = a.shape
    config.check_shape(m, n)
    grid = _resolve_grid(m, n, config, p, grid)
    try:
        bm: BlockMap = partition(m, n, grid)
        blocks = distribute(a, bm, "grid-2D")
    except ContractViolation as e:
        raise ConfigError(str(e)) from None
    k, choice = config.k, config.solver
    h0 = init_H(n, k, config.seed, bm)

    def program(ctx: RankContext):
        i, j = ctx.rank.i, ctx.rank.j
        a_ij = blocks[ctx.rank.linear]
        w_counts, h_counts = bm.w_counts(i), bm.h_counts(j)
        ht = h0[ctx.rank.linear].T.copy()
        w = _w_start(config, m, bm.w_block(i, j))
        ctx.memory.hold("A_ij", storage_words(a_ij))
        ctx.memory.hold("(W_i)_j", w_counts[j] * k)
        ctx.memory.hold("(H_j)_i", ht.size)
        norm_sq = _norm_sq(ctx, a_ij, config)
        stats, history = [], []
        while True:
            with ctx.task("Gram"):
                u, flops = gram(ht)
            ctx.charge("Gram", flops=flops)
            g = ctx.all_reduce(ctx.world, u)
            ht_j = ctx.all_gather(ctx.col_group, ht, counts=h_counts)
            ctx.memory.hold("H_j", ht_j.size)
            with ctx.task("MM"):
                v, flops = matmul_cross_right(a_ij, ht_j)
            ctx.charge("MM", flops=flops)
            ctx.memory.hold("V_ij", v.size)
            ctx.memory.drop("H_j")
            v_own = ctx.reduce_scatter(ctx.row_group, v, counts=w_counts)
            ctx.memory.drop("V_ij")
            with ctx.task("NLS"):
                w = _solve(choice, w, g, v_own)
            ctx.charge("NLS", flops=nls_flops(choice, k, w.shape[0]))

            with ctx.task("Gram"):
                x, flops = gram(w)
            ctx.charge("Gram", flops=flops)
            g = ctx.all_reduce(ctx.world, x)
            w_i = ctx.all_gather(ctx.row_group, w, counts=w_counts)
            ctx.memory.hold("W_i", w_i.size)
            with ctx.task("MM"):
                y, flops = matmul_cross_left(w_i.T, a_ij)
            ctx.charge("MM", flops=flops)
            ctx.memory.hold("Y_ij", y.size)
            ctx.memory.drop("W_i")
            rhs = ctx.reduce_scatter(ctx.col_group, y.T, counts=h_counts)
            ctx.memory.drop("Y_ij")
            with ctx.task("NLS"):
                ht = _solve(choice, ht, g, rhs)
            ctx.charge("NLS", flops=nls_flops(choice, k, ht.shape[0]))
            term = _local_residual_term(ctx, g, rhs, ht) if config.compute_residual else 0.0
            if keep_history:
                history.append((w.copy(), ht.copy()))
            if _finish_iteration(ctx, config, norm_sq, term, stats) == "stop":
                break
        return {"w": w, "ht": ht, "stats": stats, "history": history}

    outputs, ledger = _run_ranks(grid, program, mode, workers)
    order_w = list(range(grid.p))
    order_h = [i * grid.p_c + j for j in range(grid.p_c) for i in range(grid.p_r)]
    factors, stats, history = _collect(outputs, ledger, order_w, order_h, keep_history)
    return NmfResult(factors, stats, ledger, grid, history)
