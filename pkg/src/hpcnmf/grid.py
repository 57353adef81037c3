"""Processor grid shapes and rank coordinates."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ContractViolation


@dataclass(frozen=True)
class GridShape:
    """A ``p_r x p_c`` logical arrangement of ranks."""

    p_r: int
    p_c: int

    def __post_init__(self):
        if int(self.p_r) != self.p_r or int(self.p_c) != self.p_c:
            raise ContractViolation(f"grid dimensions must be integers, got {self}")
        if self.p_r < 1 or self.p_c < 1:
            raise ContractViolation(f"grid dimensions must be >= 1, got {self.p_r}x{self.p_c}")

    @property
    def p(self) -> int:
        return self.p_r * self.p_c

    def rank(self, linear: int) -> RankId:
        if not 0 <= linear < self.p:
            raise ContractViolation(f"rank {linear} outside grid {self}")
        return RankId(linear // self.p_c, linear % self.p_c, self)

    def ranks(self):
        return [self.rank(r) for r in range(self.p)]

    @classmethod
    def parse(cls, text: str) -> GridShape:
        match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if not match:
            raise ContractViolation(f"grid must look like PRxPC, got {text!r}")
        return cls(int(match.group(1)), int(match.group(2)))

    def __str__(self):
        return f"{self.p_r}x{self.p_c}"


@dataclass(frozen=True)
class RankId:
    """Grid coordinates of one rank; ``linear = i * p_c + j``."""

    i: int
    j: int
    grid: GridShape

    def __post_init__(self):
        if not (0 <= self.i < self.grid.p_r and 0 <= self.j < self.grid.p_c):
            raise ContractViolation(f"rank ({self.i}, {self.j}) outside grid {self.grid}")

    @property
    def linear(self) -> int:
        return self.i * self.grid.p_c + self.j
