"""Rounded iterated addition: the overflow-tracking sum and automaton checks.

:func:`gridworld_sum` recovers the strict left-fold rounded sum of fixed-point
numbers from exact prefix sums and their suffix extrema, without folding.
The automaton helpers brute-force the facts behind it: rounded addition is an
ordered automaton, and its transformation monoid is aperiodic.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .fpnum import FpNumber, PrecisionConfig, add, sum_iter
from .grid import kernel_for

__all__ = [
    "ClosureTooLarge",
    "Automaton",
    "AdditionAutomaton",
    "OrderReport",
    "addition_automaton",
    "parity_automaton",
    "identity_automaton",
    "gridworld_sum",
    "gridworld_sum_codes",
    "check_ordered",
    "check_aperiodic",
    "transformation_monoid",
    "find_nonassociative_witness",
    "compare_with_fold",
]


class ClosureTooLarge(RuntimeError):
    pass


# -- gridworld summation ------------------------------------------------------------

def _fixed_point(cfg: PrecisionConfig):
    if cfg.e != 0:
        raise ValueError(f"the overflow-tracking sum is defined for fixed point (e=0), got e={cfg.e}")


def gridworld_sum_codes(codes, s: int) -> np.ndarray:
    """Batched overflow-tracking sum on grid codes of shape ``(batch, n)``.

    Codes are ``value * 2**s``; every row must be nonempty. Prefix sums are
    exact integers, so nothing is rounded until the answer, which is already
    on the grid.
    """
    kern = kernel_for(PrecisionConfig(0, s))
    x = np.asarray(codes)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("expected a nonempty (batch, n) array of codes")
    x = x.astype(np.int64 if kern.dtype is not object else object, copy=False)
    B = kern.bound
    rows = x.shape[0]
    sign = np.where(x[:, 0] >= 0, 1, -1).astype(x.dtype)
    # y_{-2}, y_{-1}, y_0, y_1, ..., y_n
    y = np.empty((rows, x.shape[1] + 3), dtype=x.dtype)
    y[:, 0] = 0
    y[:, 1] = sign * B
    y[:, 2] = sign * B
    y[:, 3] = x[:, 0] - sign * B
    y[:, 4:] = x[:, 1:]
    S = np.cumsum(y, axis=1)  # S[:, j] is S_{j-2}
    U = np.maximum.accumulate(S[:, ::-1], axis=1)[:, ::-1]
    L = np.minimum.accumulate(S[:, ::-1], axis=1)[:, ::-1]
    width = S.shape[1]
    cols = np.arange(width)
    wide = (U - L) >= 2 * B
    # wide[:, 0] always holds: S_{-2} = 0 and S_0 = 2 sign(x_1) B
    i_star = width - 1 - np.argmax(wide[:, ::-1], axis=1)
    r = np.arange(rows)
    at_top = S[r, i_star] == U[r, i_star]
    target = np.where(at_top, L[r, i_star], U[r, i_star])
    hit = (S == target[:, None]) & (cols[None, :] >= i_star[:, None])
    k_star = width - 1 - np.argmax(hit[:, ::-1], axis=1)
    offset = np.where(at_top, -B, B)
    return offset + S[:, -1] - S[r, k_star]


def gridworld_sum(xs: Sequence, s: int | None = None, e: int = 0) -> FpNumber:
    """Left-fold rounded sum of ``xs`` computed from exact prefix sums.

    ``xs`` holds FpNumbers or exactly representable reals. ``s`` defaults to
    the precision of the first FpNumber.

    Examples
    --------
    >>> gridworld_sum([1.5, 1.5, -1.5], s=1).value
    Fraction(0, 1)
    """
    xs = list(xs)
    if not xs:
        raise ValueError("need at least one summand")
    if s is None:
        if not isinstance(xs[0], FpNumber):
            raise ValueError("pass s when the summands are not FpNumbers")
        s = xs[0].cfg.s
        e = xs[0].cfg.e
    cfg = PrecisionConfig(e, s)
    _fixed_point(cfg)
    kern = kernel_for(cfg)
    codes = kern.encode(np.array(xs, dtype=object))[None]
    return cfg.from_units(int(gridworld_sum_codes(codes, s)[0]))


@dataclass
class SumReport:
    s: int
    cases: int = 0
    mismatches: int = 0
    first_mismatch: dict | None = None

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def to_dict(self) -> dict:
        return {"s": self.s, "cases": self.cases, "mismatches": self.mismatches,
                "ok": self.ok, "first_mismatch": self.first_mismatch}


def _sample_codes(rng: np.random.Generator, rows: int, length: int, s: int) -> np.ndarray:
    """Random grid codes at mixed magnitudes so that some rows never overflow."""
    B = kernel_for(PrecisionConfig(0, s)).bound
    scale_bits = rng.integers(0, max(1, B.bit_length()), size=(rows, 1))
    limit = np.maximum(B >> scale_bits, 1)
    return rng.integers(-limit, limit + 1, size=(rows, length), dtype=np.int64)


def compare_with_fold(s: int, trials: int = 1000, length: int = 1000, seed: int = 0,
                      exhaustive_length: int | None = None, chunk: int = 2000) -> SumReport:
    """Check :func:`gridworld_sum_codes` against the rounded left fold.

    With ``exhaustive_length`` every sequence of every length up to it is
    tested; otherwise ``trials`` random sequences of ``length`` are drawn.
    """
    kern = kernel_for(PrecisionConfig(0, s))
    report = SumReport(s)

    def run(block):
        got = gridworld_sum_codes(block, s)
        want = kern.fold(block, axis=1)
        bad = np.flatnonzero(got != want)
        report.cases += len(block)
        report.mismatches += len(bad)
        if len(bad) and report.first_mismatch is None:
            i = bad[0]
            report.first_mismatch = {
                "xs": [str(Fraction(int(c), kern.one)) for c in block[i]],
                "gridworld": str(Fraction(int(got[i]), kern.one)),
                "fold": str(Fraction(int(want[i]), kern.one)),
            }

    if exhaustive_length is not None:
        grid = np.arange(-kern.bound, kern.bound + 1, dtype=np.int64)
        if len(grid) ** exhaustive_length > 10**7:
            raise ValueError("exhaustive comparison too large")
        for n in range(1, exhaustive_length + 1):
            run(np.array(list(itertools.product(grid, repeat=n)), dtype=np.int64))
        return report
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        rows = min(chunk, trials - done)
        run(_sample_codes(rng, rows, length, s))
        done += rows
    return report


# -- automata -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Automaton:
    """Deterministic automaton with ``table[state, letter] = next state``."""

    states: tuple
    letters: tuple
    table: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    def letter_map(self, j: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.table[:, j])


@dataclass(frozen=True, eq=False)
class AdditionAutomaton(Automaton):
    """States and letters are the sorted distinct values of F_{e,s}; the
    transition is rounded addition."""

    cfg: PrecisionConfig = PrecisionConfig()


def addition_automaton(cfg: PrecisionConfig) -> AdditionAutomaton:
    kern = kernel_for(cfg)
    values = sorted(set(cfg.grid()))
    codes = kern.encode(np.array(values, dtype=object))
    sums = kern.add(codes[:, None], codes[None, :])
    table = np.searchsorted(codes.astype(object) if kern.dtype is object else codes, sums)
    states = tuple(values)
    return AdditionAutomaton(states, states, table.astype(np.intp), cfg)


def parity_automaton() -> Automaton:
    """Two states, one letter that swaps them."""
    return Automaton((0, 1), ("flip",), np.array([[1], [0]], dtype=np.intp))


def identity_automaton(n_states: int = 2) -> Automaton:
    return Automaton(tuple(range(n_states)), ("id",), np.arange(n_states, dtype=np.intp)[:, None])


@dataclass
class OrderReport:
    ordered: bool
    counterexample: tuple | None = None

    def __bool__(self):
        return self.ordered


def check_ordered(automaton: Automaton | PrecisionConfig) -> OrderReport:
    """Whether every letter induces an order-preserving map on the states.

    States are assumed listed in increasing order, so it suffices to compare
    neighbours. On failure the counterexample is ``(x, x', letter)`` with
    ``x < x'`` and ``delta(x, letter) > delta(x', letter)``.
    """
    if isinstance(automaton, PrecisionConfig):
        automaton = addition_automaton(automaton)
    t = automaton.table
    drops = t[1:] < t[:-1]
    if not drops.any():
        return OrderReport(True)
    i, j = np.argwhere(drops)[0]
    return OrderReport(False, (automaton.states[i], automaton.states[i + 1], automaton.letters[j]))


def _compose(f, g):
    """``f`` then ``g``."""
    return tuple(g[v] for v in f)


def transformation_monoid(automaton: Automaton, cap: int = 100_000) -> set:
    """All maps induced by words (the empty word included)."""
    gens = {automaton.letter_map(j) for j in range(len(automaton.letters))}
    ident = tuple(range(automaton.n_states))
    seen = {ident}
    queue = deque([ident])
    while queue:
        f = queue.popleft()
        for g in gens:
            h = _compose(f, g)
            if h not in seen:
                seen.add(h)
                if len(seen) > cap:
                    raise ClosureTooLarge(f"transformation monoid exceeds {cap} elements")
                queue.append(h)
    return seen


def _is_aperiodic_element(t, n: int) -> bool:
    power = t
    for _ in range(n + 1):
        nxt = _compose(power, t)
        if nxt == power:
            return True
        power = nxt
    return False


def check_aperiodic(automaton: Automaton | PrecisionConfig, cap: int = 100_000) -> bool:
    """Every element ``t`` of the transformation monoid has ``t^k = t^(k+1)``
    for some ``k <= |Q|``."""
    if isinstance(automaton, PrecisionConfig):
        automaton = addition_automaton(automaton)
    n = automaton.n_states
    return all(_is_aperiodic_element(t, n) for t in transformation_monoid(automaton, cap))


# -- non-associativity ------------------------------------------------------------------

def _probe_values(cfg: PrecisionConfig, limit: int = 64) -> list[Fraction]:
    grid = sorted(set(cfg.grid()))
    if len(grid) <= limit:
        return grid
    B = cfg.bound
    ulp = min(v for v in grid if v > 0)
    probe = {Fraction(0), B, -B, ulp, -ulp, B - ulp, ulp - B, Fraction(1), Fraction(-1)}
    return sorted(v for v in probe if -B <= v <= B)


def find_nonassociative_witness(cfg: PrecisionConfig):
    """Some ``(a, b, c)`` with ``round(round(a+b)+c) != round(a+round(b+c))``.

    Searches all triples of a probe set (the whole grid when it is small)
    and returns ``None`` if none is found.
    """
    values = [FpNumber.from_value(v, cfg) for v in _probe_values(cfg)]
    for a, b, c in itertools.product(values, repeat=3):
        if add(add(a, b), c) != add(a, add(b, c)):
            return a, b, c
    return None


def fold_sum(xs, cfg: PrecisionConfig) -> FpNumber:
    """Scalar left fold, for cross-checking single sequences."""
    return sum_iter([x if isinstance(x, FpNumber) else FpNumber.from_value(x, cfg) for x in xs], cfg)
