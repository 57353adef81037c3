"""Local nonnegative least-squares updates on normal-equations data.

All solvers share one convention. Given a k x k Gram matrix ``G = C^T C`` and a
k x r right-hand side ``R`` whose columns are ``C^T b``, they return (or
improve) a k x r nonnegative ``X`` whose columns approximately solve
``min ||C x - b||^2, x >= 0``. The W update passes ``G = H H^T`` and
``R = (A H^T)^T``; the H update passes ``G = W^T W`` and ``R = W^T A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Literal

import numpy as np
import scipy.linalg as la

from .errors import BppConvergenceError, ContractViolation, SingularSubsystemError

__all__ = [
    "BppState",
    "NormalEquations",
    "SolverChoice",
    "bpp_solve",
    "brute_force_nls",
    "hals_update",
    "kkt_residual",
    "mu_update",
    "nls_objective",
    "solve_nls",
]

MU_EPS = 1e-16
HALS_DELTA = 1e-15
BPP_RIDGE = 1e-12
KKT_TOL = 1e-10
BRUTE_FORCE_MAX_K = 12


@dataclass(frozen=True)
class NormalEquations:
    gram: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gram, dtype=np.float64)
        r = np.asarray(self.rhs, dtype=np.float64)
        if r.ndim == 1:
            r = r[:, None]
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ContractViolation(f"gram must be square, got {g.shape}")
        if r.ndim != 2 or r.shape[0] != g.shape[0]:
            raise ContractViolation(f"rhs {r.shape} does not match gram {g.shape}")
        scale = max(float(np.abs(g).max(initial=0.0)), 1.0)
        if not np.allclose(g, g.T, rtol=0.0, atol=1e-12 * scale):
            raise ContractViolation("gram must be symmetric")
        if np.any(np.diag(g) < 0):
            raise ContractViolation("gram diagonal must be nonnegative")
        object.__setattr__(self, "gram", g)
        object.__setattr__(self, "rhs", r)

    @property
    def k(self) -> int:
        return self.gram.shape[0]

    @property
    def r(self) -> int:
        return self.rhs.shape[1]


@dataclass
class BppState:
    """Bookkeeping left behind by :func:`bpp_solve`."""

    passive: np.ndarray
    infeasible_history: list = field(default_factory=list)
    backup_budget: np.ndarray | None = None
    block_exchanges: np.ndarray | None = None
    single_exchanges: np.ndarray | None = None
    iterations: int = 0


@dataclass(frozen=True)
class SolverChoice:
    kind: Literal["mu", "hals", "bpp"] = "bpp"
    mu_eps: float = MU_EPS
    hals_delta: float = HALS_DELTA
    bpp_ridge: float = BPP_RIDGE

    def __post_init__(self):
        if self.kind not in ("mu", "hals", "bpp"):
            raise ContractViolation(f"unknown solver {self.kind!r}")
        if min(self.mu_eps, self.hals_delta, self.bpp_ridge) <= 0:
            raise ContractViolation("solver tolerances must be positive")

    @property
    def needs_start(self) -> bool:
        """MU and HALS refine a previous iterate; BPP solves from scratch."""
        return self.kind != "bpp"


def _check_start(x_prev, neq):
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if x_prev.shape != neq.rhs.shape:
        raise ContractViolation(f"X has shape {x_prev.shape}, expected {neq.rhs.shape}")
    if np.any(x_prev < 0):
        raise ContractViolation("previous iterate must be nonnegative")
    return x_prev


def nls_objective(neq: NormalEquations, x) -> float:
    """``1/2 tr(X^T G X) - tr(R^T X)``, the quadratic every solver decreases."""
    x = np.asarray(x, dtype=np.float64)
    return float(0.5 * np.sum(x * (neq.gram @ x)) - np.sum(neq.rhs * x))


def mu_update(x_prev, neq: NormalEquations, eps: float = MU_EPS) -> np.ndarray:
    """One multiplicative update ``X * R / (G X + eps)``."""
    x_prev = _check_start(x_prev, neq)
    x = x_prev * neq.rhs / (neq.gram @ x_prev + eps)
    return np.maximum(x, 0.0)


def hals_update(x_prev, neq: NormalEquations, delta: float = HALS_DELTA) -> np.ndarray:
    """One HALS sweep over the rows of X, in index order, using fresh rows.

    Rows whose Gram diagonal is at most ``delta * max(diag)`` are zeroed.
    """
    x = _check_start(x_prev, neq).copy()
    g, r = neq.gram, neq.rhs
    diag = np.diag(g)
    floor = delta * float(diag.max(initial=0.0))
    for i in range(neq.k):
        if diag[i] <= floor:
            x[i] = 0.0
            continue
        # R_i - sum_{l != i} G_li X_l
        num = r[i] - g[:, i] @ x + diag[i] * x[i]
        x[i] = np.maximum(num, 0.0) / diag[i]
    return x


def kkt_residual(neq: NormalEquations, x) -> float:
    """Largest violation of ``x >= 0``, ``y >= 0`` and ``x * y = 0`` over columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != neq.rhs.shape:
        raise ContractViolation(f"X has shape {x.shape}, expected {neq.rhs.shape}")
    if x.size == 0:
        return 0.0
    y = neq.gram @ x - neq.rhs
    return float(max(
        np.max(-np.minimum(x, 0.0)),
        np.max(-np.minimum(y, 0.0)),
        np.max(np.abs(x * y)),
    ))


def kkt_tolerance(neq: NormalEquations) -> np.ndarray:
    """Per-column tolerance ``1e-10 * (1 + ||rhs column||_inf)``."""
    return KKT_TOL * (1.0 + np.abs(neq.rhs).max(axis=0, initial=0.0))


def _cholesky(sub, bump):
    """Cholesky factor of ``sub``, retried once with ``bump`` on the diagonal.

    A pivot below ``bump`` counts as singular: a rank-deficient block can
    factor in floating point with a tiny pivot and would blow up the solve.
    Returns None when both attempts fail.
    """
    for shift in (0.0, bump):
        try:
            c, lower = la.cho_factor(sub + shift * np.eye(len(sub)), check_finite=False)
        except la.LinAlgError:
            continue
        if np.min(np.diag(c)) ** 2 > bump or shift > 0:
            return c, lower
    return None


def _is_definite(g, bump):
    try:
        c, _ = la.cho_factor(g, check_finite=False)
    except la.LinAlgError:
        return False
    return bool(np.min(np.diag(c)) ** 2 > bump)


def _solve_passive(g, r, passive, cols, ridge):
    """Solve the passive-set systems for ``cols``; returns (X, Y) for those columns.

    Columns sharing a passive pattern are solved with one factorization.
    """
    k = g.shape[0]
    x = np.zeros((k, len(cols)))
    patterns, groups = np.unique(passive[:, cols].T, axis=0, return_inverse=True)
    groups = np.asarray(groups).ravel()
    for gi, pattern in enumerate(patterns):
        members = np.flatnonzero(groups == gi)
        idx = np.flatnonzero(pattern)
        if idx.size == 0:
            continue
        sub = g[np.ix_(idx, idx)]
        rhs = r[np.ix_(idx, cols[members])]
        factor = _cholesky(sub, ridge * float(np.trace(g)) / k)
        if factor is None:
            raise SingularSubsystemError(
                f"passive set {idx.tolist()} is singular even with ridge")
        x[np.ix_(idx, members)] = la.cho_solve(factor, rhs, check_finite=False)
    y = g @ x - r[:, cols]
    y[passive[:, cols]] = 0.0
    return x, y


def bpp_solve(neq: NormalEquations, ridge: float = BPP_RIDGE):
    """Block principal pivoting for all columns of ``neq.rhs`` at once.

    Starts from an empty passive set. Every KKT-violating index is swapped
    between the active and passive sets; a column whose violation count fails
    to drop below its best value three exchanges in a row switches to swapping
    only its largest violating index until it improves again.

    A Gram that is numerically singular is shifted by ``ridge * trace(G) / k``
    on the diagonal for the whole solve, since pivoting is only guaranteed to
    terminate on a positive definite matrix. KKT then holds for the shifted
    system.

    Returns ``(X, BppState)``.
    """
    g, r = neq.gram, neq.rhs
    k, ncols = r.shape
    bump = ridge * float(np.trace(g)) / k
    if bump > 0 and not _is_definite(g, bump):
        # pivoting only terminates on a positive definite Gram
        g = g + bump * np.eye(k)
    passive = np.zeros((k, ncols), dtype=bool)
    x = np.zeros((k, ncols))
    y = -r.copy()
    detect = 1e-12 * np.abs(r).max(axis=0, initial=0.0)

    budget = np.full(ncols, 3)
    best = np.full(ncols, k + 1)
    blocks = np.zeros(ncols, dtype=np.int64)
    singles = np.zeros(ncols, dtype=np.int64)
    state = BppState(passive, backup_budget=budget, block_exchanges=blocks,
                     single_exchanges=singles)
    # singular Grams (ridge path) need many more single exchanges than k
    max_blocks, max_singles = 5 * k, max(k, k * k)

    while True:
        infeasible = (passive & (x < -detect)) | (~passive & (y < -detect))
        count = infeasible.sum(axis=0)
        state.infeasible_history.append(count.copy())
        todo = np.flatnonzero(count > 0)
        if todo.size == 0:
            break
        state.iterations += 1

        improved = todo[count[todo] < best[todo]]
        best[improved] = count[improved]
        budget[improved] = 3
        stalled = np.setdiff1d(todo, improved)
        spend = stalled[budget[stalled] > 0]
        budget[spend] -= 1
        full = np.concatenate([improved, spend])
        single = np.setdiff1d(stalled, spend)

        blocks[full] += 1
        singles[single] += 1
        over = np.flatnonzero((blocks > max_blocks) | (singles > max_singles))
        if over.size:
            worst = kkt_residual(neq, np.where(passive, np.maximum(x, 0.0), 0.0))
            raise BppConvergenceError(
                f"block principal pivoting did not converge for columns "
                f"{over.tolist()[:8]} (k={k})", worst)

        passive[:, full] ^= infeasible[:, full]
        if single.size:
            last = k - 1 - np.argmax(infeasible[::-1, single], axis=0)
            passive[last, single] ^= True

        changed = np.sort(todo)
        x[:, changed], y[:, changed] = _solve_passive(g, r, passive, changed, ridge)

    x = np.where(passive, np.maximum(x, 0.0), 0.0)
    return x, state


def brute_force_nls(neq: NormalEquations, tol: float = 1e-12) -> np.ndarray:
    """Exact NLS by enumerating all ``2^k`` passive sets (test oracle, k <= 12)."""
    g, r = neq.gram, neq.rhs
    k, ncols = r.shape
    if k > BRUTE_FORCE_MAX_K:
        raise ContractViolation(f"brute force limited to k <= {BRUTE_FORCE_MAX_K}, got {k}")
    best_x = np.zeros((k, ncols))
    best_obj = np.full(ncols, np.inf)
    for mask in product((False, True), repeat=k):
        idx = np.flatnonzero(mask)
        cand = np.zeros((k, ncols))
        if idx.size:
            sub = g[np.ix_(idx, idx)]
            try:
                cand[idx] = np.linalg.solve(sub, r[idx])
            except np.linalg.LinAlgError:
                cand[idx] = np.linalg.lstsq(sub, r[idx], rcond=None)[0]
        y = g @ cand - r
        active = np.ones(k, dtype=bool)
        active[idx] = False
        ok = np.all(cand[idx] >= -tol, axis=0) & np.all(y[active] >= -tol, axis=0)
        obj = 0.5 * np.sum(cand * (g @ cand), axis=0) - np.sum(r * cand, axis=0)
        take = ok & (obj < best_obj)
        best_obj[take] = obj[take]
        best_x[:, take] = cand[:, take]
    return np.maximum(best_x, 0.0)


def solve_nls(choice: SolverChoice, x_prev, neq: NormalEquations) -> np.ndarray:
    """Dispatch one local NLS step according to ``choice``."""
    if choice.kind == "mu":
        return mu_update(x_prev, neq, choice.mu_eps)
    if choice.kind == "hals":
        return hals_update(x_prev, neq, choice.hals_delta)
    x, _ = bpp_solve(neq, choice.bpp_ridge)
    return x


def nls_flops(choice: SolverChoice, k: int, r: int) -> int:
    """Nominal flop charge for one local NLS step on ``r`` columns.

    MU and HALS cost ``2 k^2 r`` (the ``G X`` product). BPP has no closed form;
    its measured wall time is what gets reported, and this charge covers only
    a single full-size factor-and-solve.
    """
    if choice.kind in ("mu", "hals"):
        return 2 * k * k * r
    return k ** 3 // 3 + 2 * k * k * r
