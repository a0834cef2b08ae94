"""Self-contained property suites over the kernels, gadgets and summation.

Each suite returns a :class:`CheckResult`; the command-line ``check``
subcommand prints them as JSON lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .compiler import (build_boolean_ff_gate, build_gate_ff, build_selection_qk,
                       build_uniform_copy_attention, interleave_ones)
from .fpnum import FpNumber, PrecisionConfig, exp_rounded, relu, sub
from .grid import kernel_for
from .serialsum import (check_aperiodic, check_ordered, compare_with_fold,
                        find_nonassociative_witness)

__all__ = [
    "CheckResult",
    "rounding_laws",
    "exp_saturation",
    "selection_one_hot",
    "relu_step",
    "boolean_gates",
    "gate_ff_truth_table",
    "uniform_copy",
    "automaton_suite",
    "sum_suite",
    "nonassociativity",
    "lemma_suite",
    "SUITES",
]


@dataclass
class CheckResult:
    name: str
    ok: bool = True
    cases: int = 0
    detail: dict = field(default_factory=dict)

    def fail(self, **info):
        if self.ok:
            self.detail["first_failure"] = {k: str(v) for k, v in info.items()}
        self.ok = False

    def to_dict(self) -> dict:
        return {"check": self.name, "ok": self.ok, "cases": self.cases, **self.detail}


def _lattice(cfg: PrecisionConfig, extra_bits: int = 2):
    """Numerators over a denominator finer than the grid, covering past ±B."""
    kern = kernel_for(cfg)
    den = 3 << extra_bits
    top = (kern.bound + 2 * kern.one) * den
    return np.arange(-top, top + 1, dtype=kern.dtype), den


def rounding_laws(cfg: PrecisionConfig, samples: int | None = None, seed: int = 0) -> CheckResult:
    """Idempotence, monotonicity and odd symmetry of rounding.

    Exhaustive over a lattice finer than the grid when ``samples`` is None,
    otherwise over ``samples`` random rationals.
    """
    kern = kernel_for(cfg)
    res = CheckResult(f"rounding_laws(e={cfg.e},s={cfg.s})")
    if samples is None:
        num, den = _lattice(cfg)
        den = np.full(num.shape, den, dtype=num.dtype)
        upper = num + 1  # neighbouring lattice point
    else:
        rng = np.random.default_rng(seed)
        den = rng.integers(1, 1 << 12, size=samples)
        span = int(min(kern.bound * 3, 1 << 40))
        num = rng.integers(-span, span + 1, size=samples) * den // (1 << 6)
        num = num + rng.integers(-3, 4, size=samples)
        upper = num + rng.integers(0, 1 << 8, size=samples)
        num, den, upper = kern.asarray(num), kern.asarray(den), kern.asarray(upper)
    r = kern.round_ratio(num, den)
    res.cases = len(num)
    closed = kern.representable(r)
    if not closed.all():
        i = int(np.flatnonzero(~closed)[0])
        res.fail(law="closure", x=Fraction(int(num[i]), int(den[i]) * kern.one))
    again = kern.round_ratio(r)
    if (again != r).any():
        i = int(np.flatnonzero(again != r)[0])
        res.fail(law="idempotence", x=Fraction(int(num[i]), int(den[i]) * kern.one))
    # x <= y must give round(x) <= round(y); y shares x's denominator
    drops = np.flatnonzero(kern.round_ratio(upper, den) < r)
    if len(drops):
        i = int(drops[0])
        res.fail(law="monotonicity", x=Fraction(int(num[i]), int(den[i]) * kern.one),
                 y=Fraction(int(upper[i]), int(den[i]) * kern.one))
    neg = kern.round_ratio(-num, den)
    if (neg != -r).any():
        i = int(np.flatnonzero(neg != -r)[0])
        res.fail(law="odd symmetry", x=Fraction(int(num[i]), int(den[i]) * kern.one))
    return res


def exp_saturation(s_values=range(1, 9)) -> CheckResult:
    """``exp`` rounds ``-B`` to 0 and ``B`` to ``B`` at every listed precision."""
    res = CheckResult("exp_saturation")
    for s in s_values:
        cfg = PrecisionConfig(0, s)
        B = FpNumber.from_value(cfg.bound, cfg)
        res.cases += 2
        if not exp_rounded(-B).is_zero():
            res.fail(s=s, case="exp(-B)", got=exp_rounded(-B))
        if exp_rounded(B) != B:
            res.fail(s=s, case="exp(B)", got=exp_rounded(B))
    return res


def selection_one_hot(k_values=range(1, 7), s: int = 2) -> CheckResult:
    """Every query attends exactly to the key with the same id."""
    res = CheckResult(f"selection_one_hot(s={s})")
    for k in k_values:
        gadget = build_selection_qk(k, s)
        kern = gadget.kernel
        ids = list(range(1, 2**k))
        weights = gadget.attention(ids, ids)
        want = np.eye(len(ids), dtype=np.int64) * kern.one
        res.cases += len(ids) ** 2
        bad = np.argwhere(weights != want)
        if len(bad):
            i, j = bad[0]
            res.fail(k=k, query=ids[i], key=ids[j], got=Fraction(int(weights[i, j]), kern.one))
    return res


def relu_step(s: int = 2, lo: int = -2, hi: int = 2) -> CheckResult:
    """``relu(a) - relu(a - 1) == [a > 0]`` on integer grid points."""
    res = CheckResult(f"relu_step(s={s})")
    cfg = PrecisionConfig(0, s)
    one = FpNumber.from_value(1, cfg)
    for a in range(lo, hi + 1):
        x = FpNumber.from_value(a, cfg)
        got = sub(relu(x), relu(sub(x, one)))
        res.cases += 1
        if got.value != (1 if a > 0 else 0):
            res.fail(a=a, got=got)
    return res


def _majority(bits) -> int:
    n = len(bits)
    return math.floor(Fraction(1, 2) + (sum(bits) - Fraction(1, 2)) / n)


_TRUTH = {"AND": lambda b: int(all(b)), "OR": lambda b: int(any(b)), "MAJORITY": _majority}


def boolean_gates(max_fanin: int = 10) -> CheckResult:
    """AND/OR at ``s = 2`` and MAJORITY at ``s = ceil(log2 n) + 1``, exhaustively."""
    res = CheckResult("boolean_gates")
    for kind in ("AND", "OR", "MAJORITY"):
        for n in range(1, max_fanin + 1):
            s = 2 if kind != "MAJORITY" else math.ceil(math.log2(n)) + 1
            gate = build_boolean_ff_gate(kind, n, s)
            xs = np.array(list(product((0, 1), repeat=n)), dtype=np.int64)
            kern = kernel_for(gate.cfg)
            out = gate.apply_codes(interleave_ones(xs) * kern.one)[:, 0]
            want = np.array([_TRUTH[kind](tuple(r)) for r in xs]) * kern.one
            res.cases += len(xs)
            bad = np.flatnonzero(out != want)
            if len(bad):
                res.fail(kind=kind, n=n, s=s, x="".join(map(str, xs[bad[0]])),
                         got=Fraction(int(out[bad[0]]), kern.one))
    return res


def gate_ff_truth_table(s: int = 2) -> CheckResult:
    """The compiled gate net gives NOT a for c = 0 and a AND b for c = 1."""
    res = CheckResult(f"gate_ff(s={s})")
    ff = build_gate_ff(s)
    for a, b, c in product((0, 1), repeat=3):
        got = ff([a, b, c])[0]
        want = (a & b) if c else 1 - a
        res.cases += 1
        if got != want:
            res.fail(a=a, b=b, c=c, got=got)
    return res


def uniform_copy(s_values=range(1, 9), max_len: int = 64) -> CheckResult:
    """Saturated attention scores are exactly 1 over every causal prefix."""
    res = CheckResult("uniform_copy")
    for s in s_values:
        gadget = build_uniform_copy_attention(s)
        kern = kernel_for(gadget.cfg)
        for n in range(1, max_len + 1):
            w = gadget.attention(n)
            res.cases += 1
            if (w != kern.one).any():
                res.fail(s=s, prefix=n, got=[Fraction(int(v), kern.one) for v in w])
    return res


def automaton_suite(e: int = 0, s: int = 1, cap: int = 100_000) -> CheckResult:
    cfg = PrecisionConfig(e, s)
    res = CheckResult(f"automaton(e={e},s={s})", cases=1)
    order = check_ordered(cfg)
    res.detail["ordered"] = order.ordered
    if not order.ordered:
        res.fail(counterexample=order.counterexample)
    aperiodic = check_aperiodic(cfg, cap=cap)
    res.detail["aperiodic"] = aperiodic
    if not aperiodic:
        res.fail(reason="non-aperiodic transformation")
    return res


def sum_suite(s: int, trials: int = 1000, length: int = 1000, seed: int = 0,
              exhaustive_length: int | None = None) -> CheckResult:
    report = compare_with_fold(s, trials=trials, length=length, seed=seed,
                               exhaustive_length=exhaustive_length)
    res = CheckResult(f"gridworld_vs_fold(s={s})", report.ok, report.cases)
    if report.first_mismatch:
        res.detail["first_failure"] = report.first_mismatch
    return res


def nonassociativity(s_values=range(1, 9)) -> CheckResult:
    res = CheckResult("nonassociativity")
    witnesses = {}
    for s in s_values:
        w = find_nonassociative_witness(PrecisionConfig(0, s))
        res.cases += 1
        if w is None:
            res.fail(s=s, reason="no witness found")
        else:
            witnesses[str(s)] = [str(v.value) for v in w]
    res.detail["witnesses"] = witnesses
    return res


def lemma_suite() -> list[CheckResult]:
    return [exp_saturation(), selection_one_hot(), relu_step(), boolean_gates(),
            gate_ff_truth_table(), uniform_copy()]


SUITES = ("rounding", "lemmas", "automaton", "gates", "sum")
