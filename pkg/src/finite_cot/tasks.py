"""Seeded generators for the four benchmark tasks and their dataset format.

Every instance has input tokens ending in ``'='``, a chain of thought whose
final tokens are the label, and per-position hints (one target per input
token, ``None`` where a position has no aligned target). Tokens are always
strings.

Dataset files are line-delimited JSON. The first line is ``# `` followed by
the generator config; each further line is one record.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .circuit import Circuit, Gate, evaluate

__all__ = [
    "TaskInstance",
    "GeneratorConfig",
    "TASKS",
    "VARIANTS",
    "gen_modadd",
    "gen_permcomp",
    "gen_itersq",
    "gen_cvp",
    "compose",
    "primes_below",
    "parse_cvp",
    "cvp_instance",
    "check_instance",
    "generate_dataset",
    "serialize_dataset",
    "write_dataset",
    "read_dataset",
]

VARIANTS = ("base", "cot", "hint")


@dataclass(frozen=True)
class TaskInstance:
    tokens: tuple[str, ...]
    cot: tuple[str, ...]
    hints: tuple[str | None, ...]
    label: tuple[str, ...]
    task: str = ""
    modulus: int | None = None

    def record(self, variant: str) -> dict:
        if variant == "base":
            return {"tokens": list(self.tokens), "label": list(self.label)}
        if variant == "cot":
            return {"tokens": list(self.tokens), "cot": list(self.cot)}
        if variant == "hint":
            return {"tokens": list(self.tokens), "hints": list(self.hints)}
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# -- modular addition -----------------------------------------------------------------

def gen_modadd(p: int, n: int, seed=0, *, x: Iterable[int] | None = None) -> TaskInstance:
    """``n - 1`` uniform residues mod ``p`` then ``'='``; label is their sum mod ``p``.

    >>> gen_modadd(7, 4, x=[3, 5, 6]).cot
    ('3', '1', '0')
    """
    if p < 2:
        raise ValueError("modulus must be at least 2")
    if x is None:
        if n < 2:
            raise ValueError("length must be at least 2")
        terms = [int(v) for v in _rng(seed).integers(0, p, size=n - 1)]
    else:
        terms = [int(v) for v in x]
        if not terms or any(not 0 <= v < p for v in terms):
            raise ValueError(f"terms must be residues mod {p}")
    cot = []
    acc = 0
    for v in terms:
        acc = (acc + v) % p
        cot.append(str(acc))
    label = (cot[-1],)
    return TaskInstance(tuple(map(str, terms)) + ("=",), tuple(cot), tuple(cot) + label, label, "modadd", p)


# -- permutation composition ------------------------------------------------------------

def compose(sigma, pi) -> tuple[int, ...]:
    """``sigma o pi = (sigma[pi_1], ..., sigma[pi_p])`` with 1-based entries."""
    return tuple(sigma[j - 1] for j in pi)


def gen_permcomp(m: int, seed=0, p: int = 5, *, perms=None) -> TaskInstance:
    """``m`` permutations written ``( s_1 ... s_p )`` then ``'='``.

    The CoT lists the running compositions ``s_1 o ... o s_j`` one after
    another; the label is the last one. Hints sit on the entries of each
    permutation: entry ``t`` of ``s_j`` is labelled with entry ``t`` of the
    ``j``-th running composition.
    """
    if perms is None:
        if m < 1:
            raise ValueError("need at least one permutation")
        rng = _rng(seed)
        perms = [tuple(int(v) + 1 for v in rng.permutation(p)) for _ in range(m)]
    else:
        perms = [tuple(int(v) for v in s) for s in perms]
        if not perms or any(sorted(s) != list(range(1, p + 1)) for s in perms):
            raise ValueError(f"each entry must be a permutation of 1..{p}")
    tokens: list[str] = []
    cot: list[str] = []
    hints: list[str | None] = []
    running = None
    for s in perms:
        running = s if running is None else compose(running, s)
        tokens += ["("] + [str(v) for v in s] + [")"]
        cot += [str(v) for v in running]
        hints += [None] + [str(v) for v in running] + [None]
    tokens.append("=")
    hints.append(None)
    label = tuple(str(v) for v in running)
    return TaskInstance(tuple(tokens), tuple(cot), tuple(hints), label, "permcomp")


# -- iterated squaring ----------------------------------------------------------------------

def primes_below(bound: int) -> np.ndarray:
    if bound <= 2:
        return np.zeros(0, dtype=np.int64)
    sieve = np.ones(bound, dtype=bool)
    sieve[:2] = False
    for q in range(2, math.isqrt(bound - 1) + 1):
        if sieve[q]:
            sieve[q * q:: q] = False
    return np.flatnonzero(sieve)


def gen_itersq(T_bound: int = 1000, max_squarings: int = 8, seed=0, *, p: int | None = None,
               r: int | None = None, squarings: int | None = None) -> TaskInstance:
    """``(p, r, '^2' x c, '=')`` with label ``r^(2^c) mod p``.

    ``p`` is a uniform prime below ``T_bound``, ``r`` uniform in
    ``[1, T_bound - 1]`` and ``c`` uniform in ``[1, max_squarings]`` unless
    given. The CoT is ``r^2, r^4, ..., r^(2^c)`` mod ``p``.
    """
    rng = _rng(seed)
    if p is None:
        primes = primes_below(T_bound)
        if len(primes) == 0:
            raise ValueError(f"no primes below {T_bound}")
        p = int(primes[rng.integers(len(primes))])
    if r is None:
        r = int(rng.integers(1, T_bound))
    if squarings is None:
        if max_squarings < 1:
            raise ValueError("need at least one squaring")
        squarings = int(rng.integers(1, max_squarings + 1))
    if squarings < 1:
        raise ValueError("need at least one squaring")
    cot = []
    acc = r % p
    for _ in range(squarings):
        acc = acc * acc % p
        cot.append(str(acc))
    tokens = (str(p), str(r)) + ("^2",) * squarings + ("=",)
    hints = (None, None) + tuple(cot) + (cot[-1],)
    return TaskInstance(tokens, tuple(cot), hints, (cot[-1],), "itersq")


# -- circuit value problem ---------------------------------------------------------------

_TRUTH = {True: "TRUE", False: "FALSE"}


def gen_cvp(m: int, seed=0) -> TaskInstance:
    """A random topologically sorted circuit of ``m`` gates, four tokens each.

    The first ``ceil(m / 4)`` gates are TRUE/FALSE constants; the rest are
    uniform over AND/OR/NOT with fan-ins uniform over earlier gates. Unused
    fan-in slots hold ``NA``. The CoT gives, per gate, its type, the values
    of its inputs and its own value.
    """
    if m < 1:
        raise ValueError("need at least one gate")
    rng = _rng(seed)
    n_const = math.ceil(m / 4)
    tokens: list[str] = []
    for gid in range(1, m + 1):
        if gid <= n_const:
            tokens += [_TRUTH[bool(rng.integers(2))], "NA", "NA", str(gid)]
            continue
        kind = ("AND", "OR", "NOT")[int(rng.integers(3))]
        a = int(rng.integers(1, gid))
        b = str(int(rng.integers(1, gid))) if kind != "NOT" else "NA"
        tokens += [kind, str(a), b, str(gid)]
    tokens.append("=")
    return cvp_instance(tokens)


def parse_cvp(tokens) -> tuple[Circuit, tuple[int, ...], list[list[str]]]:
    """Read a CVP token stream back into a circuit whose inputs are the constants.

    Returns the circuit, the constant input bits and the raw 4-token gate
    groups.
    """
    tokens = list(tokens)
    if not tokens or tokens[-1] != "=" or (len(tokens) - 1) % 4:
        raise ValueError("a CVP instance is 4 tokens per gate followed by '='")
    groups = [tokens[i: i + 4] for i in range(0, len(tokens) - 1, 4)]
    bits: list[int] = []
    gates: list[Gate] = []
    for pos, (kind, a, b, gid) in enumerate(groups, start=1):
        if gid != str(pos):
            raise ValueError(f"gate {pos} carries id {gid!r}")
        if kind in ("TRUE", "FALSE"):
            if gates:
                raise ValueError("constants must precede logic gates")
            if (a, b) != ("NA", "NA"):
                raise ValueError(f"constant gate {pos} has fan-in")
            bits.append(int(kind == "TRUE"))
        elif kind in ("AND", "OR"):
            gates.append(Gate(pos, kind, int(a), int(b)))
        elif kind == "NOT":
            if b != "NA":
                raise ValueError(f"NOT gate {pos} has two inputs")
            gates.append(Gate(pos, kind, int(a)))
        else:
            raise ValueError(f"unknown gate type {kind!r}")
    if not bits:
        raise ValueError("a CVP instance needs at least one constant")
    return Circuit(len(bits), tuple(gates), len(groups)), tuple(bits), groups


def cvp_instance(tokens) -> TaskInstance:
    circuit, bits, groups = parse_cvp(tokens)
    values = evaluate(circuit, bits).values
    val = lambda ref: "NA" if ref == "NA" else _TRUTH[bool(values[int(ref) - 1])]  # noqa: E731
    cot: list[str] = []
    for kind, a, b, gid in groups:
        cot += [kind, val(a), val(b), val(gid)]
    label = (cot[-1],)
    return TaskInstance(tuple(tokens), tuple(cot), tuple(cot) + label, label, "cvp")


# -- invariants ---------------------------------------------------------------------------

def check_instance(inst: TaskInstance) -> list[str]:
    """Violations of the structural invariants of ``inst`` (empty when sound)."""
    problems = []
    t = inst.tokens
    if not t or t[-1] != "=":
        problems.append("input does not end with '='")
    if tuple(inst.cot[-len(inst.label):]) != tuple(inst.label):
        problems.append("CoT does not end with the label")
    if len(inst.hints) != len(t):
        problems.append(f"{len(inst.hints)} hints for {len(t)} tokens")
    if inst.task == "modadd":
        acc = 0
        for i, (x, c) in enumerate(zip(t[:-1], inst.cot)):
            acc = (acc + int(x)) % inst.modulus
            if acc != int(c):
                problems.append(f"prefix recurrence fails at step {i + 1}")
                break
    elif inst.task == "permcomp":
        perms = _perms_of(t)
        steps = [tuple(int(v) for v in inst.cot[i: i + 5]) for i in range(0, len(inst.cot), 5)]
        if len(steps) != len(perms) or steps[0] != perms[0]:
            problems.append("first CoT step is not the first permutation")
        for j in range(1, min(len(steps), len(perms))):
            if steps[j] != compose(steps[j - 1], perms[j]):
                problems.append(f"composition recurrence fails at step {j + 1}")
                break
    elif inst.task == "itersq":
        p, r = int(t[0]), int(t[1])
        c = len(t) - 3
        if [int(v) for v in inst.cot] != [pow(r, 2**i, p) for i in range(1, c + 1)]:
            problems.append("CoT is not the sequence of successive squares")
    elif inst.task == "cvp":
        redo = cvp_instance(t)
        if redo.cot != inst.cot or redo.label != inst.label:
            problems.append("re-evaluating the circuit changes the CoT or label")
    return problems


def _perms_of(tokens) -> list[tuple[int, ...]]:
    perms, cur = [], None
    for tok in tokens:
        if tok == "(":
            cur = []
        elif tok == ")":
            perms.append(tuple(cur))
            cur = None
        elif cur is not None:
            cur.append(int(tok))
    return perms


# -- datasets -----------------------------------------------------------------------------

TASKS = {
    "modadd": (gen_modadd, ("p", "n")),
    "permcomp": (gen_permcomp, ("m",)),
    "itersq": (gen_itersq, ("T_bound", "max_squarings")),
    "cvp": (gen_cvp, ("m",)),
}


@dataclass(frozen=True)
class GeneratorConfig:
    """Which task, its parameters, how many instances and the base seed.

    Instance ``i`` is drawn from ``numpy.random.default_rng((seed, i))`` so any
    subset can be regenerated independently.
    """

    task: str
    params: dict = field(default_factory=dict)
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {sorted(TASKS)}")
        need = TASKS[self.task][1]
        missing = [k for k in need if k not in self.params]
        extra = [k for k in self.params if k not in need]
        if missing or extra:
            raise ValueError(f"task {self.task} takes parameters {need}, got {sorted(self.params)}")
        if self.count < 0:
            raise ValueError("count must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def instance(self, index: int) -> TaskInstance:
        fn = TASKS[self.task][0]
        return fn(**self.params, seed=np.random.default_rng((self.seed, index)))


def generate_dataset(config: GeneratorConfig) -> list[TaskInstance]:
    return [config.instance(i) for i in range(config.count)]


def serialize_dataset(config: GeneratorConfig, instances, variant: str) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    head = dict(config.to_dict(), variant=variant)
    lines = ["# " + json.dumps(head, sort_keys=True)]
    for inst in instances:
        if inst.task != config.task:
            raise ValueError(f"instance of task {inst.task!r} in a {config.task!r} dataset")
        lines.append(json.dumps(inst.record(variant), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_dataset(config: GeneratorConfig, variant: str, path) -> int:
    """Generate and write atomically; returns the number of records."""
    instances = generate_dataset(config)
    text = serialize_dataset(config, instances, variant)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(instances)


def read_dataset(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing config header line")
    return json.loads(lines[0][2:]), [json.loads(line) for line in lines[1:] if line]
