from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpcnmf.errors import ContractViolation
from hpcnmf.grid import GridShape, RankId
from hpcnmf.ledger import Tally


def test_parse_and_str():
    g = GridShape.parse("4x4")
    assert (g.p_r, g.p_c, g.p, str(g)) == (4, 4, 16, "4x4")
    assert GridShape.parse(" 2X6 ") == GridShape(2, 6)


@pytest.mark.parametrize("text", ["4", "4x", "ax2", "2x3x4", ""])
def test_parse_rejects(text):
    with pytest.raises(ContractViolation):
        GridShape.parse(text)


def test_invalid_shapes():
    with pytest.raises(ContractViolation):
        GridShape(0, 3)
    with pytest.raises(ContractViolation):
        RankId(2, 0, GridShape(2, 2))
    with pytest.raises(ContractViolation):
        GridShape(2, 2).rank(4)


@given(st.integers(1, 12), st.integers(1, 12))
def test_linear_ranks_are_row_major(pr, pc):
    g = GridShape(pr, pc)
    ranks = list(g.ranks())
    assert [r.linear for r in ranks] == list(range(g.p))
    assert all(g.rank(r.linear) == r and r.linear == r.i * pc + r.j for r in ranks)


def test_tally_arithmetic():
    a = Tally(Fraction(3, 2), 2, Fraction(5), 0.5)
    b = Tally(Fraction(1, 2), 1, Fraction(1), 0.25)
    assert (a + b) - b == a
    assert Tally.maximum([a, b, Tally(Fraction(7), 0, Fraction(0), 0.0)]) == Tally(Fraction(7), 2, Fraction(5), 0.5)
