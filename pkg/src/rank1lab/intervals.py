"""Exact rationals and outward-conservative rational intervals."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

RationalLike = Union[int, Fraction, str]

ZERO = Fraction(0)
ONE = Fraction(1)


def as_rational(value: RationalLike) -> Fraction:
    """Coerce ``value`` to a Fraction, refusing floats.

    Strings may be ``"p/q"`` or plain integers.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if any(c in text for c in ".eE"):
            raise ValueError(f"decimal notation not accepted for exact values: {value!r}")
        return Fraction(text)
    raise TypeError(f"cannot use {type(value).__name__} as an exact rational")


def fmt(value: Fraction) -> str:
    """Render a rational as ``p/q`` (or ``p`` when integral)."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class RationalInterval:
    """Closed interval ``[lo, hi]`` with rational endpoints."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        lo, hi = as_rational(self.lo), as_rational(self.hi)
        if lo > hi:
            raise ValueError(f"empty interval [{fmt(lo)}, {fmt(hi)}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, value: RationalLike) -> "RationalInterval":
        v = as_rational(value)
        return cls(v, v)

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def is_exact(self) -> bool:
        return self.lo == self.hi

    def __contains__(self, value) -> bool:
        if isinstance(value, RationalInterval):
            return self.lo <= value.lo and value.hi <= self.hi
        return self.lo <= as_rational(value) <= self.hi

    def overlaps(self, other: "RationalInterval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def __add__(self, other):
        other = _coerce(other)
        return RationalInterval(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return RationalInterval(-self.hi, -self.lo)

    def __sub__(self, other):
        other = _coerce(other)
        return RationalInterval(self.lo - other.hi, self.hi - other.lo)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        products = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return RationalInterval(min(products), max(products))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        if other.lo <= 0 <= other.hi:
            raise ZeroDivisionError("interval divisor contains zero")
        return self * RationalInterval(1 / other.hi, 1 / other.lo)

    def abs_upper(self) -> Fraction:
        """Largest ``|x|`` over the interval."""
        return max(abs(self.lo), abs(self.hi))

    def abs_lower(self) -> Fraction:
        """Smallest ``|x|`` over the interval."""
        if self.lo <= 0 <= self.hi:
            return ZERO
        return min(abs(self.lo), abs(self.hi))

    def clamp(self, lo: Fraction = ZERO, hi: Fraction = ONE) -> "RationalInterval":
        """Intersect with ``[lo, hi]`` (used for measure-valued intervals)."""
        new_lo = min(max(self.lo, lo), hi)
        new_hi = max(min(self.hi, hi), new_lo)
        return RationalInterval(new_lo, new_hi)

    def to_pair(self) -> list[str]:
        return [fmt(self.lo), fmt(self.hi)]

    def __repr__(self) -> str:
        if self.is_exact:
            return f"[{fmt(self.lo)}]"
        return f"[{fmt(self.lo)}, {fmt(self.hi)}]"


def _coerce(value) -> RationalInterval:
    if isinstance(value, RationalInterval):
        return value
    return RationalInterval.point(value)


def distance_upper(a: RationalInterval, b: RationalInterval) -> Fraction:
    """Certified upper bound on ``|x - y|`` for ``x in a``, ``y in b``."""
    return max(abs(a.hi - b.lo), abs(b.hi - a.lo))


def gap(a: RationalInterval, b: RationalInterval) -> Fraction:
    """Certified lower bound on ``|x - y|`` (zero when the intervals meet)."""
    if a.hi < b.lo:
        return b.lo - a.hi
    if b.hi < a.lo:
        return a.lo - b.hi
    return ZERO
