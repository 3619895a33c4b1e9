from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rank1lab.intervals import RationalInterval, as_rational, distance_upper, fmt, gap

fractions = st.fractions(min_value=-4, max_value=4, max_denominator=64)


def iv(a, b):
    return RationalInterval(min(a, b), max(a, b))


def test_as_rational_accepts_exact_forms():
    assert as_rational("3/4") == F(3, 4)
    assert as_rational(" 7 ") == 7
    assert as_rational(F(1, 3)) == F(1, 3)


@pytest.mark.parametrize("bad", [0.5, "0.5", "1e-3", True, None])
def test_as_rational_refuses_inexact(bad):
    with pytest.raises((TypeError, ValueError)):
        as_rational(bad)


def test_fraction_stays_reduced():
    x = as_rational("6/8")
    assert (x.numerator, x.denominator) == (3, 4)
    assert fmt(F(-6, 8)) == "-3/4"
    assert fmt(F(4, 2)) == "2"


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        RationalInterval(F(1, 2), F(1, 3))


def test_point_and_width():
    p = RationalInterval.point("1/3")
    assert p.is_exact and p.width == 0
    assert F(1, 3) in p


def test_gap_and_distance():
    a, b = iv(F(0), F(1, 4)), iv(F(1, 2), F(1))
    assert gap(a, b) == F(1, 4)
    assert distance_upper(a, b) == F(1)
    assert gap(a, iv(F(1, 8), F(1, 2))) == 0


@given(fractions, fractions, fractions, fractions, fractions, fractions)
def test_arithmetic_is_outward_conservative(a, b, c, d, x, y):
    """Every pointwise result of members lands inside the interval result."""
    A, B = iv(a, b), iv(c, d)
    x = min(max(x, A.lo), A.hi)
    y = min(max(y, B.lo), B.hi)
    assert x + y in A + B
    assert x - y in A - B
    assert x * y in A * B
    assert abs(x - y) <= distance_upper(A, B)
    assert abs(x - y) >= gap(A, B)


@given(fractions, fractions)
def test_clamp_stays_within_unit(a, b):
    c = iv(a, b).clamp()
    assert 0 <= c.lo <= c.hi <= 1
