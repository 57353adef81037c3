"""A deterministic p-rank SPMD environment with grid-aware collectives.

Every rank runs the same program on its own thread. The only cross-rank
channel is a collective call, which is a rendezvous for its group: the last
member to arrive computes all results centrally, in an order fixed by group
rank, so outputs never depend on scheduling. Each call is tagged with
``(group, sequence number)``; ranks that disagree about what a tag means, or
that leave a group member waiting forever, abort the run with an error naming
the offending rank.

Costs are charged to a ledger private to each rank, following the collective
costs of an optimal algorithm (recursive doubling for all-gather, recursive
halving for reduce-scatter, their composition for all-reduce):

=============== ======================= ================================
collective      messages                words
=============== ======================= ================================
all-gather      ceil(log2 q)            words not already held
reduce-scatter  ceil(log2 q)            words outside the rank's block
all-reduce      2 ceil(log2 q)          2 (q-1)/q n
=============== ======================= ================================

Reduce-scatter and all-reduce also charge one flop per word reduced.
"""

from __future__ import annotations

import os
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Literal

import numpy as np

from .errors import ClusterAborted, CollectiveMismatch, ContractViolation, DeadlockError
from .grid import GridShape, RankId
from .ledger import CostLedger, RankLedger

__all__ = [
    "CommGroup",
    "RankContext",
    "VirtualRun",
    "default_workers",
    "log2_ceil",
    "run_virtual",
    "tree_sum",
]

WORKERS_ENV = "HPCNMF_WORKERS"


def log2_ceil(q: int) -> int:
    return (int(q) - 1).bit_length()


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def tree_sum(arrays):
    """Pairwise sum in list order: ((x0+x1)+(x2+x3))+... ."""
    level = list(arrays)
    if not level:
        raise ContractViolation("cannot reduce an empty group")
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return np.array(level[0], dtype=np.float64, copy=True)


@dataclass(frozen=True)
class CommGroup:
    """The world, one grid row, or one grid column.

    ``members`` lists linear ranks in group-rank order.
    """

    kind: Literal["world", "row", "col"]
    index: int
    members: tuple

    @property
    def q(self) -> int:
        return len(self.members)

    @property
    def key(self):
        return (self.kind, self.index)

    def group_rank(self, linear: int) -> int:
        return self.members.index(linear)

    @classmethod
    def world(cls, grid: GridShape) -> CommGroup:
        return cls("world", 0, tuple(range(grid.p)))

    @classmethod
    def row(cls, grid: GridShape, i: int) -> CommGroup:
        return cls("row", i, tuple(i * grid.p_c + j for j in range(grid.p_c)))

    @classmethod
    def col(cls, grid: GridShape, j: int) -> CommGroup:
        return cls("col", j, tuple(i * grid.p_c + j for i in range(grid.p_r)))


class MemoryTracker:
    """Live buffer sizes of one rank, in words, and their high-water mark."""

    def __init__(self):
        self._live = {}
        self.peak = 0

    def hold(self, name: str, words: int):
        self._live[name] = int(words)
        self.peak = max(self.peak, self.current)

    def drop(self, name: str):
        self._live.pop(name, None)

    @property
    def current(self) -> int:
        return sum(self._live.values())


@dataclass
class _Call:
    kind: str
    data: np.ndarray
    counts: tuple | None


class _Slot:
    def __init__(self, group: CommGroup, tag):
        self.group = group
        self.tag = tag
        self.posts = {}
        self.results = None

    @property
    def complete(self) -> bool:
        return len(self.posts) == self.group.q

    def resolve(self):
        calls = [self.posts[r] for r in self.group.members]
        self._check(calls)
        kind = calls[0].kind
        data = [c.data for c in calls]
        q = self.group.q
        if kind == "all_gather":
            full = np.concatenate(data, axis=0)
            out = [full.copy() for _ in range(q)]
        elif kind == "reduce_scatter":
            total = tree_sum(data)
            bounds = np.concatenate([[0], np.cumsum(calls[0].counts)])
            out = [total[bounds[g]:bounds[g + 1]].copy() for g in range(q)]
        else:
            total = tree_sum(data)
            out = [total.copy() for _ in range(q)]
        self.results = out

    def _check(self, calls):
        members = self.group.members
        signature = [(c.kind, c.counts) for c in calls]
        ref = max(set(signature), key=signature.count)
        for rank, sig in zip(members, signature):
            if sig != ref:
                raise CollectiveMismatch(
                    f"rank {rank} called {sig[0]} (counts {sig[1]}) at tag {self.tag} "
                    f"where the group called {ref[0]} (counts {ref[1]})", rank, self.tag)
        kind, counts = ref
        trailing = [c.data.shape[1:] for c in calls]
        for rank, t in zip(members, trailing):
            if t != trailing[0]:
                raise CollectiveMismatch(
                    f"rank {rank} sent trailing shape {t} at tag {self.tag}, "
                    f"expected {trailing[0]}", rank, self.tag)
        lengths = [c.data.shape[0] for c in calls]
        if kind == "all_gather":
            expected = list(counts) if counts is not None else [lengths[0]] * len(calls)
            for rank, got, want in zip(members, lengths, expected):
                if got != want:
                    raise CollectiveMismatch(
                        f"rank {rank} contributed {got} rows to all_gather at tag "
                        f"{self.tag}, expected {want}", rank, self.tag)
        else:
            for rank, got in zip(members, lengths):
                if got != lengths[0]:
                    raise CollectiveMismatch(
                        f"rank {rank} contributed {got} rows to {kind} at tag "
                        f"{self.tag}, expected {lengths[0]}", rank, self.tag)
            if counts is not None and sum(counts) != lengths[0]:
                raise CollectiveMismatch(
                    f"reduce_scatter blocks {counts} do not cover {lengths[0]} rows "
                    f"at tag {self.tag}", members[0], self.tag)


class _Coordinator:
    def __init__(self, grid: GridShape, serialized: bool, workers: int):
        self.p = grid.p
        self.cv = threading.Condition()
        self.slots = {}
        self.status = ["active"] * self.p
        self.waiting_on = [None] * self.p
        self.failure = None
        self.serialized = serialized
        self.turn = 0
        self.sem = None if serialized else threading.Semaphore(max(1, workers))

    # scheduling -----------------------------------------------------------
    def enter(self, r):
        if self.serialized:
            with self.cv:
                self.cv.wait_for(lambda: self.turn == r or self.failure is not None)
        else:
            self.sem.acquire()

    def leave(self, r):
        if not self.serialized:
            self.sem.release()

    def _pass_turn(self, r):
        for step in range(1, self.p + 1):
            cand = (r + step) % self.p
            if self.status[cand] == "active":
                self.turn = cand
                return
        self.turn = None

    def _check_deadlock(self):
        if self.failure is not None or "active" in self.status:
            return
        stuck = [r for r in range(self.p) if self.status[r] == "waiting"]
        if not stuck:
            return
        slot = self.waiting_on[stuck[0]]
        missing = [m for m in slot.group.members if m not in slot.posts]
        culprit = missing[0]
        if self.status[culprit] == "done":
            why = "finished without calling it"
        else:
            why = f"is blocked at tag {self.waiting_on[culprit].tag}"
        self.failure = DeadlockError(
            f"deadlock: ranks {sorted(slot.posts)} wait at tag {slot.tag} but rank "
            f"{culprit} {why}", culprit, slot.tag)

    # rank lifecycle -------------------------------------------------------
    def finish(self, r, exc=None):
        with self.cv:
            if exc is not None and self.failure is None and not isinstance(exc, ClusterAborted):
                self.failure = exc
            self.status[r] = "done"
            if self.serialized:
                self._pass_turn(r)
            self._check_deadlock()
            self.cv.notify_all()

    def collective(self, r, group, tag, call):
        with self.cv:
            if self.failure is not None:
                raise ClusterAborted("another rank failed")
            slot = self.slots.get(tag)
            if slot is None:
                slot = self.slots[tag] = _Slot(group, tag)
            slot.posts[r] = call
            self.status[r] = "waiting"
            self.waiting_on[r] = slot
            if slot.complete:
                try:
                    slot.resolve()
                except CollectiveMismatch as exc:
                    self.failure = exc
                    self.cv.notify_all()
                    raise ClusterAborted(str(exc)) from None
                del self.slots[tag]
                for m in group.members:
                    self.status[m] = "active"
                    self.waiting_on[m] = None
            if self.serialized:
                self._pass_turn(r)
            self._check_deadlock()
            self.cv.notify_all()
        if not self.serialized:
            self.sem.release()
        with self.cv:
            self.cv.wait_for(lambda: self.failure is not None or (
                slot.results is not None and (not self.serialized or self.turn == r)))
            if self.failure is not None:
                raise ClusterAborted("another rank failed")
            result = slot.results[group.group_rank(r)]
        if not self.serialized:
            self.sem.acquire()
        return result


class RankContext:
    """What a rank program sees: its coordinates, groups, collectives and ledger."""

    def __init__(self, rank: RankId, coordinator: _Coordinator):
        self.rank = rank
        self.grid = rank.grid
        self.ledger = RankLedger()
        self.memory = MemoryTracker()
        self.world = CommGroup.world(self.grid)
        self.row_group = CommGroup.row(self.grid, rank.i)
        self.col_group = CommGroup.col(self.grid, rank.j)
        self._coord = coordinator
        self._seq = defaultdict(int)

    @contextmanager
    def task(self, category: str):
        """Charge the wall time of the enclosed block to ``category``."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.ledger.charge(category, wall=time.perf_counter() - start)

    def charge(self, category: str, **amounts):
        self.ledger.charge(category, **amounts)

    def mark_iteration(self):
        self.ledger.mark_iteration()

    def _call(self, group: CommGroup, kind, data, counts):
        if self.rank.linear not in group.members:
            raise ContractViolation(f"rank {self.rank.linear} is not in group {group.key}")
        seq = self._seq[group.key]
        self._seq[group.key] += 1
        tag = (group.kind, group.index, seq)
        data = np.array(data, dtype=np.float64, copy=True)
        if data.ndim == 0:
            data = data.reshape(1)
        counts = None if counts is None else tuple(int(c) for c in counts)
        return self._coord.collective(self.rank.linear, group, tag, _Call(kind, data, counts))

    def all_gather(self, group: CommGroup, local, counts=None, category="AllGather"):
        """Concatenate every member's block along axis 0, in group-rank order.

        ``counts`` declares the expected leading length of each member's block;
        without it all blocks must be the same size.
        """
        start = time.perf_counter()
        local = np.asarray(local, dtype=np.float64)
        out = self._call(group, "all_gather", local, counts)
        own = local.size
        self.ledger.charge(category, words=out.size - own, messages=log2_ceil(group.q),
                           wall=time.perf_counter() - start)
        return out

    def reduce_scatter(self, group: CommGroup, local, counts=None, category="ReduceScatter"):
        """Sum ``local`` over the group and return this rank's block of rows.

        ``counts`` gives the block lengths along axis 0 in group-rank order;
        default is an equal split.
        """
        start = time.perf_counter()
        local = np.asarray(local, dtype=np.float64)
        if counts is None:
            if local.shape[0] % group.q:
                raise ContractViolation(
                    f"{local.shape[0]} rows do not split evenly over {group.q} ranks")
            counts = [local.shape[0] // group.q] * group.q
        out = self._call(group, "reduce_scatter", local, counts)
        outside = local.size - out.size
        self.ledger.charge(category, words=outside, messages=log2_ceil(group.q),
                           flops=outside, wall=time.perf_counter() - start)
        return out

    def all_reduce(self, group: CommGroup, local, category="AllReduce"):
        """Elementwise sum over the group, replicated on every member."""
        start = time.perf_counter()
        local = np.asarray(local, dtype=np.float64)
        out = self._call(group, "all_reduce", local, None)
        q, n = group.q, local.size
        self.ledger.charge(category, words=Fraction(2 * (q - 1) * n, q),
                           messages=2 * log2_ceil(q), flops=Fraction((q - 1) * n, q),
                           wall=time.perf_counter() - start)
        return out.reshape(local.shape) if local.ndim else out.reshape(())


@dataclass
class VirtualRun:
    outputs: list
    ledger: CostLedger


def run_virtual(grid: GridShape, program: Callable[[RankContext], Any],
                mode: Literal["concurrent", "serialized"] = "concurrent",
                workers: int | None = None) -> VirtualRun:
    """Run ``program`` once per rank of ``grid`` and merge the ledgers.

    ``concurrent`` runs up to ``workers`` ranks at once (default from the
    ``HPCNMF_WORKERS`` environment variable, else the CPU count); ``serialized``
    runs one rank at a time in a fixed round-robin order. Outputs are identical
    in both modes. The first failing rank's exception is re-raised.
    """
    if mode not in ("concurrent", "serialized"):
        raise ContractViolation(f"unknown mode {mode!r}")
    coord = _Coordinator(grid, mode == "serialized", workers or default_workers())
    contexts = [RankContext(rank, coord) for rank in grid.ranks()]
    outputs = [None] * grid.p

    def body(r):
        exc = None
        coord.enter(r)
        try:
            if coord.failure is None:
                outputs[r] = program(contexts[r])
        except BaseException as e:  # noqa: BLE001 - re-raised by the driver
            exc = e
        finally:
            coord.leave(r)
            coord.finish(r, exc)

    threads = [threading.Thread(target=body, args=(r,), name=f"rank-{r}", daemon=True)
               for r in range(grid.p)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if coord.failure is not None:
        raise coord.failure
    for ctx in contexts:
        ctx.ledger.peak_memory_words = ctx.memory.peak
    return VirtualRun(outputs, CostLedger([ctx.ledger for ctx in contexts]))
