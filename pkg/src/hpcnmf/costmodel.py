"""Closed-form per-iteration, per-rank costs of both parallel algorithms and
the bandwidth lower bound they are measured against.

Counts are exact rationals, so a prediction can be compared to a measured
ledger with plain equality when every collective group size is a power of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .cluster import log2_ceil
from .errors import ConfigError
from .grid import GridShape
from .ledger import ModelParams

__all__ = ["CostEstimate", "LowerBound", "bandwidth_lower_bound", "predict_hpc", "predict_naive"]


@dataclass(frozen=True)
class CostEstimate:
    """Per-iteration, per-rank counts. ``flops`` covers the matrix products and
    Gram matrices only; the NLS cost is data dependent and stays symbolic in
    ``nls_term``."""

    flops: Fraction
    words: Fraction
    messages: int
    memory_words: Fraction
    nls_term: str

    def modeled_time(self, params: ModelParams) -> float:
        """Communication plus product/Gram time, without the NLS term."""
        return (params.alpha * self.messages + params.beta * float(self.words)
                + params.gamma * float(self.flops))

    def as_dict(self) -> dict:
        return {"flops": self.flops, "words": self.words, "messages": self.messages,
                "memory_words": self.memory_words, "nls_term": self.nls_term}


@dataclass(frozen=True)
class LowerBound:
    words: float
    assumption_holds: bool


def _check(m, n, k, p):
    if min(m, n, k, p) < 1:
        raise ConfigError("m, n, k and p must all be >= 1")


def predict_naive(m: int, n: int, k: int, p: int, nnz: int | None = None) -> CostEstimate:
    """Costs of the replicated-data algorithm.

    ``nnz`` is the total nonzero count of a sparse input; each rank is then
    assumed to hold ``nnz/p`` nonzeros in each of its two blocks.
    """
    _check(m, n, k, p)
    words = Fraction((p - 1) * (m + n) * k, p)
    gram_flops = (m + n) * k * k
    if nnz is None:
        mm_flops = Fraction(4 * m * n * k, p)
        a_words = Fraction(2 * m * n, p)
    else:
        mm_flops = 2 * (Fraction(nnz, p) + Fraction(nnz, p)) * k
        a_words = Fraction(2 * nnz, p)
    memory = a_words + Fraction((m + n) * k, p) + (m + n) * k
    return CostEstimate(mm_flops + gram_flops, words, 2 * log2_ceil(p), memory,
                        "C_BPP((m+n)/p, k)")


def predict_hpc(m: int, n: int, k: int, grid: GridShape, nnz: int | None = None) -> CostEstimate:
    """Costs of the 2-D algorithm on ``grid``; ``nnz`` as in ``predict_naive``."""
    p, pr, pc = grid.p, grid.p_r, grid.p_c
    _check(m, n, k, p)
    allreduce = Fraction(4 * k * k * (p - 1), p)
    factors = 2 * (Fraction((pr - 1) * n * k, p) + Fraction((pc - 1) * m * k, p))
    gram_flops = Fraction((m + n) * k * k, p)
    if nnz is None:
        mm_flops = Fraction(4 * m * n * k, p)
        a_words = Fraction(m * n, p)
    else:
        mm_flops = 4 * Fraction(nnz, p) * k
        a_words = Fraction(nnz, p)
    messages = 4 * log2_ceil(p) + 2 * log2_ceil(pc) + 2 * log2_ceil(pr)
    memory = (a_words + Fraction((m + n) * k, p) + Fraction(2 * m * k, pr)
              + Fraction(2 * n * k, pc))
    return CostEstimate(mm_flops + gram_flops, allreduce + factors, messages, memory,
                        "C_BPP((m+n)/p, k)")


def bandwidth_lower_bound(m: int, n: int, k: int, p: int) -> LowerBound:
    """``min(sqrt(m n k^2 / p), n k)`` words, with ``m >= n`` after a swap.

    ``assumption_holds`` is False when ``k >= sqrt(m n / p)``, where the bound
    is not established.
    """
    if p < 1:
        raise ConfigError("p must be >= 1")
    if m < n:
        m, n = n, m
    if k <= 0:
        return LowerBound(0.0, True)
    words = min(math.sqrt(m * n * k * k / p), float(n * k))
    return LowerBound(words, k < math.sqrt(m * n / p))
