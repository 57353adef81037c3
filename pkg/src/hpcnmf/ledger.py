"""Per-rank cost tallies and the alpha-beta-gamma time model."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

CATEGORIES = ("MM", "NLS", "Gram", "AllGather", "ReduceScatter", "AllReduce", "Other")
COMM_CATEGORIES = ("AllGather", "ReduceScatter", "AllReduce")
COMPUTE_CATEGORIES = ("MM", "NLS", "Gram")


@dataclass(frozen=True)
class ModelParams:
    """Seconds per message, per word and per flop."""

    alpha: float = 1e-6
    beta: float = 1e-9
    gamma: float = 1e-10

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("model parameters must be nonnegative")


@dataclass
class Tally:
    """Counts for one category. Words and flops are exact rationals because the
    collective formulas carry ``(q-1)/q`` factors."""

    words: Fraction = Fraction(0)
    messages: int = 0
    flops: Fraction = Fraction(0)
    wall: float = 0.0

    def __add__(self, other: Tally) -> Tally:
        return Tally(self.words + other.words, self.messages + other.messages,
                     self.flops + other.flops, self.wall + other.wall)

    def __sub__(self, other: Tally) -> Tally:
        return Tally(self.words - other.words, self.messages - other.messages,
                     self.flops - other.flops, self.wall - other.wall)

    def modeled(self, params: ModelParams) -> float:
        return (params.alpha * self.messages + params.beta * float(self.words)
                + params.gamma * float(self.flops))

    @staticmethod
    def maximum(tallies) -> Tally:
        """Fieldwise maximum, the critical-path view across ranks."""
        tallies = list(tallies)
        if not tallies:
            return Tally()
        return Tally(max(t.words for t in tallies), max(t.messages for t in tallies),
                     max(t.flops for t in tallies), max(t.wall for t in tallies))


def _empty():
    return {c: Tally() for c in CATEGORIES}


@dataclass
class RankLedger:
    """Tallies owned by a single rank; never shared while the rank runs."""

    totals: dict = field(default_factory=_empty)
    iterations: list = field(default_factory=list)
    peak_memory_words: int = 0
    _mark: dict = field(default_factory=_empty, repr=False)

    def charge(self, category: str, *, words=0, messages: int = 0, flops=0, wall: float = 0.0):
        if category not in self.totals:
            raise KeyError(f"unknown ledger category {category!r}")
        if words < 0 or messages < 0 or flops < 0 or wall < 0:
            raise ValueError("ledger charges must be nonnegative")
        self.totals[category] = self.totals[category] + Tally(
            Fraction(words), int(messages), Fraction(flops), float(wall))

    def mark_iteration(self):
        """Close the current iteration, storing the per-category deltas."""
        self.iterations.append({c: self.totals[c] - self._mark[c] for c in CATEGORIES})
        self._mark = dict(self.totals)

    def comm_words(self, tallies=None) -> Fraction:
        tallies = self.totals if tallies is None else tallies
        return sum((tallies[c].words for c in COMM_CATEGORIES), Fraction(0))

    def comm_messages(self, tallies=None) -> int:
        tallies = self.totals if tallies is None else tallies
        return sum(tallies[c].messages for c in COMM_CATEGORIES)


@dataclass
class CostLedger:
    """Merged ledgers of every rank after a virtual run, indexed by linear rank."""

    ranks: list

    @property
    def p(self) -> int:
        return len(self.ranks)

    @property
    def n_iterations(self) -> int:
        return min((len(r.iterations) for r in self.ranks), default=0)

    def critical(self, category: str, iteration: int | None = None) -> Tally:
        if iteration is None:
            return Tally.maximum(r.totals[category] for r in self.ranks)
        return Tally.maximum(r.iterations[iteration][category] for r in self.ranks)

    def peak_memory_words(self) -> int:
        return max((r.peak_memory_words for r in self.ranks), default=0)


@dataclass
class ModeledTime:
    per_rank: list
    per_rank_category: list
    critical_path: float


def ledger_modeled_time(ledger: CostLedger, params: ModelParams) -> ModeledTime:
    """alpha * messages + beta * words + gamma * flops, per rank and category.

    The critical path is the largest per-rank sum.
    """
    per_cat = [{c: r.totals[c].modeled(params) for c in CATEGORIES} for r in ledger.ranks]
    per_rank = [sum(d.values()) for d in per_cat]
    return ModeledTime(per_rank, per_cat, max(per_rank, default=0.0))
