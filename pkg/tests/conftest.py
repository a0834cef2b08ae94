"""Independent oracles shared by the test modules.

Nothing here calls the rounding, folding or decoding code under test: the
grid is enumerated directly, exp comes from mpmath at high precision, and
circuits are evaluated with a bare loop.
"""

from __future__ import annotations

import functools
from fractions import Fraction

import mpmath
import pytest

from finite_cot.fpnum import PrecisionConfig


@functools.lru_cache(maxsize=None)
def grid_values(e: int, s: int) -> tuple[Fraction, ...]:
    """Every representable value, from the defining formula."""
    if e == 0:
        exps = [0]
    else:
        exps = range(-(2 ** (e - 1)), 2 ** (e - 1))
    vals = set()
    for E in exps:
        for S in range(4**s):
            v = Fraction(S) * Fraction(2) ** (E - s)
            vals.add(v)
            vals.add(-v)
    return tuple(sorted(vals))


def oracle_round(x, cfg: PrecisionConfig) -> Fraction:
    """Nearest grid value by exhaustive search; ties to the smaller magnitude."""
    x = Fraction(x)
    return min(grid_values(cfg.e, cfg.s), key=lambda g: (abs(x - g), abs(g)))


def oracle_exp(x, cfg: PrecisionConfig) -> Fraction:
    """Round exp(x) using 200 digits; exact ties cannot occur for x != 0."""
    x = Fraction(x)
    if x == 0:
        return oracle_round(1, cfg)
    with mpmath.workdps(200):
        y = mpmath.exp(mpmath.mpf(x.numerator) / x.denominator)
        grid = grid_values(cfg.e, cfg.s)
        best = min(grid, key=lambda g: (abs(y - mpmath.mpf(g.numerator) / g.denominator), abs(g)))
    return best


def oracle_fold(xs, cfg: PrecisionConfig) -> Fraction:
    acc = Fraction(xs[0])
    for x in xs[1:]:
        acc = oracle_round(acc + Fraction(x), cfg)
    return acc


def oracle_eval(circuit, bits) -> list[int]:
    """Values of all non-input gates for one assignment."""
    vals = {i + 1: int(b) for i, b in enumerate(bits)}
    out = []
    for g in circuit.gates:
        if g.kind == "NOT":
            v = 1 - vals[g.a]
        elif g.kind == "AND":
            v = vals[g.a] & vals[g.b]
        else:
            v = vals[g.a] | vals[g.b]
        vals[g.id] = v
        out.append(v)
    return out


NAND_TEXT = "inputs 2\n3 AND 1 2\n4 NOT 3\noutput 4\n"


@pytest.fixture
def nand_text():
    return NAND_TEXT


# -- acceptance report ---------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
