"""Scalar finite-precision arithmetic on the grid F_{e,s}.

Every value is an exact dyadic rational. Arithmetic results are computed
exactly with :class:`fractions.Fraction` and then rounded to the nearest grid
point, ties going to the smaller magnitude and overflow saturating at the
largest representable magnitude.

This module is the slow, obviously-correct kernel. :mod:`finite_cot.grid`
holds the vectorized integer kernel used by the transformer; the two are
cross-checked in the test-suite.
"""

from __future__ import annotations

import functools
import operator
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence, Union

from mpmath import libmp

__all__ = [
    "DivisionByZero",
    "PrecisionConfig",
    "FpNumber",
    "round_to_grid",
    "binop_rounded",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "exp_rounded",
    "sum_iter",
    "inner_rounded",
    "matmul_rounded",
    "softmax_rounded",
    "parse_fp",
]

RealLike = Union[int, float, str, Rational, "FpNumber"]


class DivisionByZero(ZeroDivisionError):
    """A rounded division had a zero divisor; the model output is void."""


@dataclass(frozen=True)
class PrecisionConfig:
    """Number format with ``e`` exponent bits and a ``2s``-bit significand.

    With ``e == 0`` the exponent is pinned to 0, so the grid is the fixed-point
    set ``{k * 2**-s : |k| <= 4**s - 1}`` and the bound is ``2**s - 2**-s``.
    """

    e: int = 0
    s: int = 2

    def __post_init__(self):
        if not isinstance(self.e, int) or self.e < 0:
            raise ValueError(f"exponent bits must be a natural number, got {self.e!r}")
        if not isinstance(self.s, int) or self.s < 1:
            raise ValueError(f"precision s must be a positive integer, got {self.s!r}")

    @property
    def exponent_range(self) -> tuple[int, int]:
        if self.e == 0:
            return 0, 0
        half = 2 ** (self.e - 1)
        return -half, half - 1

    @property
    def max_significand(self) -> int:
        return 4**self.s - 1

    @property
    def bound(self) -> Fraction:
        """Largest representable magnitude B_{e,s}."""
        _, e_max = self.exponent_range
        return Fraction(self.max_significand) * Fraction(2) ** (e_max - self.s)

    @property
    def ulp_shift(self) -> int:
        """Values are integer multiples of ``2**-ulp_shift``."""
        e_min, _ = self.exponent_range
        return self.s - e_min

    def grid(self) -> list[Fraction]:
        """Every element of F_{e,s}, sorted ascending."""
        e_min, e_max = self.exponent_range
        values = set()
        for exp in range(e_min, e_max + 1):
            step = Fraction(2) ** (exp - self.s)
            for k in range(self.max_significand + 1):
                values.add(k * step)
                values.add(-k * step)
        return sorted(values)

    def from_units(self, units: int) -> "FpNumber":
        return FpNumber.from_value(Fraction(units, 2**self.ulp_shift), self)


@functools.total_ordering
@dataclass(frozen=True, eq=False)
class FpNumber:
    """A member of F_{e,s} in canonical form.

    ``value == sign * significand * 2**(exponent - s)``. Among equivalent
    encodings the one with the smallest ``|exponent|`` is stored, and zero
    always carries sign +1.
    """

    sign: int
    significand: int
    exponent: int
    cfg: PrecisionConfig

    def __post_init__(self):
        e_min, e_max = self.cfg.exponent_range
        if self.sign not in (-1, 1):
            raise ValueError("sign must be -1 or +1")
        if not 0 <= self.significand <= self.cfg.max_significand:
            raise ValueError(f"significand {self.significand} out of range")
        if not e_min <= self.exponent <= e_max:
            raise ValueError(f"exponent {self.exponent} out of range [{e_min}, {e_max}]")
        if _canonical(self.value, self.cfg) != (self.sign, self.significand, self.exponent):
            raise ValueError("non-canonical encoding; use FpNumber.from_value")

    @classmethod
    def from_value(cls, value, cfg: PrecisionConfig) -> "FpNumber":
        """Wrap an exactly representable value; raises ValueError otherwise."""
        value = Fraction(value)
        enc = _canonical(value, cfg)
        if enc is None:
            raise ValueError(f"{value} is not representable in {cfg}")
        return cls(*enc, cfg)

    @classmethod
    def from_pair(cls, pair, cfg: PrecisionConfig) -> "FpNumber":
        signed, exponent = (int(p) for p in pair)
        return cls.from_value(Fraction(signed) * Fraction(2) ** (exponent - cfg.s), cfg)

    @property
    def value(self) -> Fraction:
        return self.sign * self.significand * Fraction(2) ** (self.exponent - self.cfg.s)

    @property
    def units(self) -> int:
        """The value as an integer count of ``2**-cfg.ulp_shift``."""
        scaled = self.value * 2**self.cfg.ulp_shift
        assert scaled.denominator == 1
        return scaled.numerator

    def to_pair(self) -> tuple[int, int]:
        return self.sign * self.significand, self.exponent

    def is_zero(self) -> bool:
        return self.significand == 0

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"FpNumber({self.value}, e={self.cfg.e}, s={self.cfg.s})"

    def __str__(self):
        return str(self.value)

    def __eq__(self, other):
        if isinstance(other, FpNumber):
            return self.cfg == other.cfg and self.value == other.value
        if isinstance(other, (int, Rational)):
            return self.value == other
        return NotImplemented

    def __lt__(self, other):
        other_value = other.value if isinstance(other, FpNumber) else Fraction(other)
        return self.value < other_value

    def __hash__(self):
        return hash((self.cfg, self.value))

    def __neg__(self):
        return FpNumber.from_value(-self.value, self.cfg)

    def __add__(self, other):
        return add(self, _coerce(other, self.cfg))

    def __sub__(self, other):
        return sub(self, _coerce(other, self.cfg))

    def __mul__(self, other):
        return mul(self, _coerce(other, self.cfg))

    def __truediv__(self, other):
        return div(self, _coerce(other, self.cfg))


def _coerce(x, cfg):
    return x if isinstance(x, FpNumber) else FpNumber.from_value(x, cfg)


def _canonical(value: Fraction, cfg: PrecisionConfig):
    if value == 0:
        return 1, 0, 0
    sign = 1 if value > 0 else -1
    mag = abs(value)
    e_min, e_max = cfg.exponent_range
    for exp in sorted(range(e_min, e_max + 1), key=lambda x: (abs(x), x)):
        sig = mag / Fraction(2) ** (exp - cfg.s)
        if sig.denominator == 1 and sig <= cfg.max_significand:
            return sign, sig.numerator, exp
    return None


def _as_fraction(x: RealLike) -> Fraction:
    if isinstance(x, FpNumber):
        return x.value
    return Fraction(x)


def round_to_grid(x: RealLike, cfg: PrecisionConfig) -> FpNumber:
    """Correctly round ``x`` to F_{e,s}.

    Each exponent band contributes its nearest point (clamped to the band's
    largest magnitude); the overall nearest wins and ties go to the smaller
    magnitude. Values beyond the bound therefore saturate.

    >>> round_to_grid("1.6", PrecisionConfig(0, 1))
    FpNumber(3/2, e=0, s=1)
    """
    x = _as_fraction(x)
    mag = abs(x)
    e_min, e_max = cfg.exponent_range
    best = None
    for exp in range(e_min, e_max + 1):
        step = Fraction(2) ** (exp - cfg.s)
        top = cfg.max_significand * step
        q = mag / step
        lo = min(Fraction(q.numerator // q.denominator) * step, top)
        hi = min(lo + step, top)
        for cand in (lo, hi):
            key = (abs(mag - cand), cand)
            if best is None or key < best:
                best = key
    result = best[1] if x >= 0 else -best[1]
    return FpNumber.from_value(result, cfg)


_OPS = {
    "add": operator.add,
    "sub": operator.sub,
    "mul": operator.mul,
    "div": operator.truediv,
}


def binop_rounded(op: str, a: FpNumber, b: FpNumber, cfg: PrecisionConfig | None = None) -> FpNumber:
    cfg = cfg or a.cfg
    if op not in _OPS:
        raise ValueError(f"unknown operation {op!r}")
    if op == "div" and _as_fraction(b) == 0:
        raise DivisionByZero(f"{a} / 0")
    return round_to_grid(_OPS[op](_as_fraction(a), _as_fraction(b)), cfg)


def add(a, b, cfg=None):
    return binop_rounded("add", a, b, cfg)


def sub(a, b, cfg=None):
    return binop_rounded("sub", a, b, cfg)


def mul(a, b, cfg=None):
    return binop_rounded("mul", a, b, cfg)


def div(a, b, cfg=None):
    return binop_rounded("div", a, b, cfg)


def relu(a: FpNumber) -> FpNumber:
    # max with 0 never leaves the grid
    return a if a.value > 0 else FpNumber.from_value(0, a.cfg)


def _mpf_to_fraction(x) -> Fraction:
    num, den = libmp.to_rational(x)
    return Fraction(int(num), int(den))


@functools.lru_cache(maxsize=1 << 16)
def _exp_cached(value: Fraction, cfg: PrecisionConfig) -> FpNumber:
    if value == 0:
        return FpNumber.from_value(1, cfg)
    num, den = value.numerator, value.denominator
    # den is a power of two for every grid value
    shift = den.bit_length() - 1
    if 1 << shift != den:
        raise ValueError("exp_rounded expects a dyadic argument")
    x = libmp.from_man_exp(num, -shift)
    prec = 64
    while True:
        lo, hi = libmp.mpi_exp((x, x), prec)
        r_lo = round_to_grid(_mpf_to_fraction(lo), cfg)
        r_hi = round_to_grid(_mpf_to_fraction(hi), cfg)
        if r_lo == r_hi:
            return r_lo
        # exp of a nonzero rational is irrational, so it is never exactly a
        # rounding midpoint and the interval eventually separates
        prec *= 2


def exp_rounded(x: FpNumber, cfg: PrecisionConfig | None = None) -> FpNumber:
    """Correctly rounded exponential.

    ``exp`` is enclosed in an interval at growing working precision until both
    endpoints round to the same grid point.
    """
    cfg = cfg or x.cfg
    return _exp_cached(_as_fraction(x), cfg)


def sum_iter(xs: Sequence[FpNumber], cfg: PrecisionConfig | None = None) -> FpNumber:
    """Strict left fold ``round(...round(round(x1+x2)+x3)...+xn)``."""
    xs = list(xs)
    if not xs:
        raise ValueError("sum_iter needs at least one term")
    cfg = cfg or xs[0].cfg
    acc = _coerce(xs[0], cfg)
    for x in xs[1:]:
        acc = add(acc, x, cfg)
    return acc


def inner_rounded(x: Sequence[FpNumber], y: Sequence[FpNumber], cfg: PrecisionConfig | None = None) -> FpNumber:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    cfg = cfg or x[0].cfg
    return sum_iter([mul(a, b, cfg) for a, b in zip(x, y)], cfg)


def matmul_rounded(a: Sequence[Sequence[FpNumber]], b: Sequence[Sequence[FpNumber]], cfg: PrecisionConfig | None = None):
    """Rounded matrix product; every entry is an independent rounded inner product."""
    inner = len(a[0])
    if any(len(row) != inner for row in a) or len(b) != inner:
        raise ValueError("shapes are not conformable")
    cfg = cfg or a[0][0].cfg
    cols = list(zip(*b))
    return [[inner_rounded(row, col, cfg) for col in cols] for row in a]


def softmax_rounded(x: Sequence[FpNumber], cfg: PrecisionConfig | None = None) -> list[FpNumber]:
    """``round(round(exp(x)) / sum_iter(round(exp(x))))`` elementwise."""
    if not x:
        raise ValueError("softmax of an empty vector")
    cfg = cfg or x[0].cfg
    numerators = [exp_rounded(v, cfg) for v in x]
    denominator = sum_iter(numerators, cfg)
    if denominator.is_zero():
        raise DivisionByZero("every softmax numerator rounded to zero")
    return [div(n, denominator, cfg) for n in numerators]


def parse_fp(text, cfg: PrecisionConfig) -> FpNumber:
    """Read the textual form: an exact decimal string or an ``(S*sign, E)`` pair."""
    if isinstance(text, (list, tuple)):
        return FpNumber.from_pair(text, cfg)
    text = str(text).strip()
    if text.startswith(("(", "[")):
        parts = text.strip("()[]").split(",")
        return FpNumber.from_pair(parts, cfg)
    return FpNumber.from_value(Fraction(text), cfg)


def vector(values: Iterable[RealLike], cfg: PrecisionConfig) -> list[FpNumber]:
    """Exact conversion of representable values to FpNumbers."""
    return [_coerce(v, cfg) for v in values]
