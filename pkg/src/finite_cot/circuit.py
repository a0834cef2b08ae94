"""Fan-in-2 boolean circuits: IR, text format, validation and evaluation.

Text format (line oriented, ``#`` starts a comment)::

    inputs 2
    3 AND 1 2
    4 NOT 3
    output 4

Inputs are gates ``1..n``; every other gate id is consecutive from ``n+1``
and may only reference smaller ids.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CircuitError",
    "ParseError",
    "TopologyError",
    "ArityError",
    "InputLengthMismatch",
    "Gate",
    "Circuit",
    "GateValueRow",
    "parse_circuit",
    "format_circuit",
    "validate",
    "evaluate",
    "evaluate_batch",
    "lower_to_and_not",
    "random_circuit",
]

KINDS = {"AND": 2, "OR": 2, "NOT": 1}


class CircuitError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ParseError(CircuitError):
    pass


class TopologyError(CircuitError):
    pass


class ArityError(CircuitError):
    pass


class InputLengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    id: int
    kind: str
    a: int
    b: int | None = None

    @property
    def fanin(self) -> tuple[int, ...]:
        return (self.a,) if self.b is None else (self.a, self.b)


@dataclass(frozen=True)
class Circuit:
    n_inputs: int
    gates: tuple[Gate, ...]
    output: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))

    @property
    def size(self) -> int:
        """Total node count, inputs included."""
        return self.n_inputs + len(self.gates)

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    def kinds(self) -> set[str]:
        return {g.kind for g in self.gates}

    def __str__(self):
        return format_circuit(self)


@dataclass(frozen=True)
class GateValueRow:
    """Values of every node (inputs first) for one input assignment."""

    inputs: tuple[int, ...]
    values: tuple[int, ...]
    output_id: int

    @property
    def output(self) -> int:
        return self.values[self.output_id - 1]

    @property
    def gate_values(self) -> tuple[int, ...]:
        """Values of the non-input gates only, in topological order."""
        return self.values[len(self.inputs):]


def parse_circuit(text: str) -> Circuit:
    """Parse and validate the text format.

    Raises
    ------
    ParseError
        Malformed line or missing header/footer.
    TopologyError
        Forward reference, bad fan-in id, or non-consecutive gate id.
    ArityError
        Wrong number of operands for the gate kind.
    """
    n_inputs = None
    output = None
    gates: list[Gate] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if output is not None:
            raise ParseError("content after output line", lineno)
        if n_inputs is None:
            if parts[0] != "inputs" or len(parts) != 2:
                raise ParseError("expected 'inputs <n>' header", lineno)
            n_inputs = _int(parts[1], lineno)
            if n_inputs < 1:
                raise ParseError("a circuit needs at least one input", lineno)
            continue
        if parts[0] == "output":
            if len(parts) != 2:
                raise ParseError("expected 'output <id>'", lineno)
            output = _int(parts[1], lineno)
            if not 1 <= output <= n_inputs + len(gates):
                raise TopologyError(f"output id {output} does not name a gate", lineno)
            continue
        if len(parts) < 2:
            raise ParseError(f"cannot read gate line {line!r}", lineno)
        gid = _int(parts[0], lineno)
        kind = parts[1].upper()
        if kind not in KINDS:
            raise ParseError(f"unknown gate kind {parts[1]!r}", lineno)
        args = [_int(p, lineno) for p in parts[2:]]
        if len(args) != KINDS[kind]:
            raise ArityError(f"{kind} takes {KINDS[kind]} operand(s), got {len(args)}", lineno)
        expected = n_inputs + len(gates) + 1
        if gid != expected:
            raise TopologyError(f"gate id {gid} out of sequence (expected {expected})", lineno)
        for ref in args:
            if not 1 <= ref < gid:
                raise TopologyError(f"gate {gid} references {ref}, not an earlier gate", lineno)
        gates.append(Gate(gid, kind, args[0], args[1] if len(args) > 1 else None))
    if n_inputs is None:
        raise ParseError("empty circuit")
    if output is None:
        raise ParseError("missing 'output <id>' line")
    return Circuit(n_inputs, tuple(gates), output)


def _int(token, lineno):
    try:
        return int(token, 10)
    except ValueError:
        raise ParseError(f"expected a decimal integer, got {token!r}", lineno) from None


def format_circuit(c: Circuit) -> str:
    lines = [f"inputs {c.n_inputs}"]
    for g in c.gates:
        lines.append(" ".join(str(x) for x in (g.id, g.kind, *g.fanin)))
    lines.append(f"output {c.output}")
    return "\n".join(lines) + "\n"


def validate(c: Circuit) -> list[str]:
    """Every invariant violation in ``c``; an empty list means valid."""
    problems = []
    if c.n_inputs < 1:
        problems.append("circuit has no inputs")
    for pos, g in enumerate(c.gates):
        expected = c.n_inputs + pos + 1
        if g.id != expected:
            problems.append(f"gate at position {pos} has id {g.id}, expected {expected}")
        if g.kind not in KINDS:
            problems.append(f"gate {g.id}: unknown kind {g.kind!r}")
            continue
        if len(g.fanin) != KINDS[g.kind]:
            problems.append(f"gate {g.id}: {g.kind} needs {KINDS[g.kind]} fan-in, has {len(g.fanin)}")
        for ref in g.fanin:
            if not 1 <= ref < g.id:
                problems.append(f"gate {g.id}: fan-in out of range ({ref})")
    if not 1 <= c.output <= c.size:
        problems.append(f"output id {c.output} out of range [1, {c.size}]")
    return problems


def _check_bits(c: Circuit, x: Sequence[int]) -> tuple[int, ...]:
    bits = tuple(int(v) for v in x)
    if len(bits) != c.n_inputs:
        raise InputLengthMismatch(f"circuit has {c.n_inputs} inputs, got {len(bits)} bits")
    if any(b not in (0, 1) for b in bits):
        raise ValueError(f"inputs must be 0/1, got {bits}")
    return bits


def evaluate(c: Circuit, x: Sequence[int]) -> GateValueRow:
    bits = _check_bits(c, x)
    values = list(bits)
    for g in c.gates:
        a = values[g.a - 1]
        if g.kind == "NOT":
            v = 1 - a
        elif g.kind == "AND":
            v = a & values[g.b - 1]
        else:
            v = a | values[g.b - 1]
        values.append(v)
    return GateValueRow(bits, tuple(values), c.output)


def evaluate_batch(c: Circuit, xs) -> np.ndarray:
    """Node values for many inputs at once: shape ``(len(xs), c.size)``."""
    xs = np.asarray(xs, dtype=np.int8)
    if xs.ndim != 2 or xs.shape[1] != c.n_inputs:
        raise InputLengthMismatch(f"expected shape (m, {c.n_inputs}), got {xs.shape}")
    out = np.zeros((xs.shape[0], c.size), dtype=np.int8)
    out[:, : c.n_inputs] = xs
    for g in c.gates:
        a = out[:, g.a - 1]
        if g.kind == "NOT":
            out[:, g.id - 1] = 1 - a
        elif g.kind == "AND":
            out[:, g.id - 1] = a & out[:, g.b - 1]
        else:
            out[:, g.id - 1] = a | out[:, g.b - 1]
    return out


def lower_to_and_not(c: Circuit) -> Circuit:
    """Rewrite every OR as NOT(AND(NOT a, NOT b)); other gates are renumbered."""
    if "OR" not in c.kinds():
        return c
    remap = {i: i for i in range(1, c.n_inputs + 1)}
    gates: list[Gate] = []

    def emit(kind, a, b=None):
        gid = c.n_inputs + len(gates) + 1
        gates.append(Gate(gid, kind, a, b))
        return gid

    for g in c.gates:
        a = remap[g.a]
        if g.kind == "OR":
            b = remap[g.b]
            na = emit("NOT", a)
            nb = emit("NOT", b)
            remap[g.id] = emit("NOT", emit("AND", na, nb))
        else:
            remap[g.id] = emit(g.kind, a, remap[g.b] if g.b is not None else None)
    return Circuit(c.n_inputs, tuple(gates), remap[c.output])


def random_circuit(n_inputs: int, n_gates: int, rng: random.Random | None = None,
                   kinds: Iterable[str] = ("AND", "NOT")) -> Circuit:
    """Uniformly wired random circuit whose output is its last gate."""
    rng = rng or random.Random()
    kinds = tuple(kinds)
    gates = []
    for pos in range(n_gates):
        gid = n_inputs + pos + 1
        kind = rng.choice(kinds)
        a = rng.randint(1, gid - 1)
        b = rng.randint(1, gid - 1) if KINDS[kind] == 2 else None
        gates.append(Gate(gid, kind, a, b))
    return Circuit(n_inputs, tuple(gates), n_inputs + n_gates)
