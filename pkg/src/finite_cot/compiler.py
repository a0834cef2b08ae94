"""Compile AND/NOT circuits into two-layer finite-precision transformers.

The compiled model evaluates one gate per generated token. Position ``p``
carries, in its position encoding, the signed-binary id of ``p`` together with
the ids of both operands of gate ``p + 1`` and that gate's type bit. Layer 1
attention fetches the first operand's value, layer 2 attention the second,
and the layer 2 feed-forward net computes the gate.

Embedding layout (0-based, ``k`` id bits, ``d = 3k + 6``)::

    0      token value            4            gate type c (0 NOT, 1 AND)
    1      first operand value    5..k+4       sbin_k(position)
    2      second operand value   k+5..2k+4    sbin_k(first operand id)
    3      gate output            2k+5..3k+4   sbin_k(second operand id)
                                  3k+5         constant 1

The standalone gadget builders (selection attention, gate feed-forward,
boolean threshold nets, uniform-copy attention) are exposed for testing and
reuse.
"""

from __future__ import annotations

import functools
import json
import math
import random
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .circuit import Circuit, evaluate_batch, validate
from .fpnum import PrecisionConfig
from .grid import GridKernel, kernel_for
from .transformer import LayerParams, TransformerParams, _Sparse, _ff_codes, decode_batch

__all__ = [
    "CompileError",
    "UnsupportedGate",
    "TooManyGates",
    "PrecisionTooSmall",
    "CompiledArtifact",
    "GateRow",
    "SelectionGadget",
    "FFWeights",
    "UniformCopyGadget",
    "VerifyReport",
    "sbin",
    "compile_circuit",
    "build_selection_qk",
    "build_gate_ff",
    "build_boolean_ff_gate",
    "build_uniform_copy_attention",
    "verify_compiled",
]


class CompileError(ValueError):
    pass


class UnsupportedGate(CompileError):
    pass


class TooManyGates(CompileError):
    pass


class PrecisionTooSmall(CompileError):
    pass


def sbin(x: int, k: int) -> list[int]:
    """Signed binary encoding of ``x`` on ``k`` bits, most significant first."""
    if not 0 <= x < 2**k:
        raise ValueError(f"{x} does not fit in {k} bits")
    return [1 if (x >> (k - 1 - i)) & 1 else -1 for i in range(k)]


# -- gadgets -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SelectionGadget:
    """Query/key maps whose rounded attention is one-hot on matching ids.

    Both maps act on ``(sbin_k(id), 1)``. The query is ``sbin_k(id)``
    interleaved with ones, the key is ``B * (sbin_k(id)`` interleaved with
    minus ones``)``. The rounded inner product is 0 on a match and saturates at
    ``-B`` otherwise, and ``exp`` rounds ``-B`` to 0.
    """

    k: int
    cfg: PrecisionConfig
    w_q: np.ndarray
    w_k: np.ndarray

    @property
    def kernel(self) -> GridKernel:
        return kernel_for(self.cfg)

    def _layout(self, ids) -> np.ndarray:
        kern = self.kernel
        rows = [sbin(i, self.k) + [1] for i in ids]
        return kern.encode(np.array(rows, dtype=object))

    def queries(self, ids) -> np.ndarray:
        return _Sparse(self.w_q).matvec(self.kernel, self._layout(ids))

    def keys(self, ids) -> np.ndarray:
        return _Sparse(self.w_k).matvec(self.kernel, self._layout(ids))

    def raw_scores(self, query_ids, key_ids) -> np.ndarray:
        kern = self.kernel
        q = self.queries(query_ids)
        k = self.keys(key_ids)
        return kern.fold(kern.mul(q[:, None, :], k[None, :, :]), axis=-1)

    def attention(self, query_ids, key_ids) -> np.ndarray:
        """Rounded softmax weights, one row per query, as grid codes."""
        weights, failed = self.kernel.softmax(self.raw_scores(query_ids, key_ids), axis=-1)
        if failed.any():
            from .fpnum import DivisionByZero
            raise DivisionByZero("no key matched a query id")
        return weights


def build_selection_qk(k: int, s: int) -> SelectionGadget:
    if k < 1:
        raise ValueError("need at least one id bit")
    cfg = PrecisionConfig(0, s)
    kern = kernel_for(cfg)
    B = kern.bound
    one = kern.one
    w_q = np.zeros((2 * k, k + 1), dtype=object)
    w_k = np.zeros((2 * k, k + 1), dtype=object)
    for l in range(k):
        w_q[2 * l, l] = one
        w_q[2 * l + 1, k] = one
        w_k[2 * l, l] = B
        w_k[2 * l + 1, k] = -B
    return SelectionGadget(k, cfg, kern.asarray(w_q), kern.asarray(w_k))


@dataclass(frozen=True, eq=False)
class FFWeights:
    """A feed-forward block ``round(W_2 relu(round(W_1 h + b_1)) + b_2)``."""

    cfg: PrecisionConfig
    w_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray

    @functools.cached_property
    def sparse(self):
        return {"w_1": _Sparse(self.w_1), "w_2": _Sparse(self.w_2)}

    def apply_codes(self, h: np.ndarray) -> np.ndarray:
        return _ff_codes(kernel_for(self.cfg), self, h)

    def __call__(self, values) -> np.ndarray:
        """Evaluate on real-valued inputs (last axis is the feature axis)."""
        kern = kernel_for(self.cfg)
        return kern.to_fractions(self.apply_codes(kern.encode(np.asarray(values, dtype=object))))


def _check_gate_precision(s: int):
    if s < 2:
        raise PrecisionTooSmall(f"the gate constants need s >= 2, got s={s}")


def build_gate_ff(s: int) -> FFWeights:
    """Feed-forward net on ``(a, b, c)`` computing ``relu(1-a-c) + relu(a+b+c-2)``.

    On bits this is NOT a when c = 0 and a AND b when c = 1.
    """
    _check_gate_precision(s)
    cfg = PrecisionConfig(0, s)
    kern = kernel_for(cfg)
    enc = lambda rows: kern.encode(np.array(rows, dtype=object))  # noqa: E731
    return FFWeights(
        cfg,
        w_1=enc([[-1, 0, -1], [1, 1, 1]]),
        b_1=enc([1, -2]),
        w_2=enc([[1, 1]]),
        b_2=enc([0]),
    )


_BOOLEAN_WEIGHTS = {
    # (input weight, constant weight), (bias of unit 1, bias of unit 2)
    "AND": ((1, -1), (1, 0)),
    "OR": ((1, 0), (0, -1)),
    "MAJORITY": ((2, -1), (0, -1)),
}


def build_boolean_ff_gate(kind: str, n: int, s: int) -> FFWeights:
    """Threshold gate over the interleaved input ``(x1, 1, x2, 1, ..., xn, 1)``.

    Both hidden units read the same rounded inner product ``z``; the output
    ``relu(z + b) - relu(z + b - 1)`` is the indicator of ``z + b > 0``.
    """
    kind = kind.upper()
    if kind not in _BOOLEAN_WEIGHTS:
        raise ValueError(f"unknown gate kind {kind!r}")
    if n < 1:
        raise ValueError("fan-in must be positive")
    if kind == "MAJORITY":
        if 2 ** (s - 1) < n:
            raise PrecisionTooSmall(f"MAJORITY of {n} inputs needs s >= log2(n) + 1, got s={s}")
    else:
        _check_gate_precision(s)
    cfg = PrecisionConfig(0, s)
    kern = kernel_for(cfg)
    (wx, wc), (b1, b2) = _BOOLEAN_WEIGHTS[kind]
    if kind == "MAJORITY" and n == 1:
        # majority of one bit is the bit itself; weight 2 would not fit at s = 1
        (wx, wc), (b1, b2) = (1, 0), (0, -1)
    row = [wx, wc] * n
    return FFWeights(
        cfg,
        w_1=kern.encode(np.array([row, row], dtype=object)),
        b_1=kern.encode(np.array([b1, b2], dtype=object)),
        w_2=kern.encode(np.array([[1, -1]], dtype=object)),
        b_2=kern.encode(np.array([0], dtype=object)),
    )


def interleave_ones(bits) -> np.ndarray:
    bits = np.asarray(bits)
    out = np.ones(bits.shape[:-1] + (2 * bits.shape[-1],), dtype=bits.dtype)
    out[..., 0::2] = bits
    return out


@dataclass(frozen=True, eq=False)
class UniformCopyGadget:
    """Attention whose every causal score is exactly 1.

    With query ``B`` and key ``1`` each logit is ``B``; ``exp`` saturates to
    ``B``, the rounded sum saturates to ``B`` and ``B / B`` is 1, for any
    prefix length. The weights are deliberately not normalized.
    """

    cfg: PrecisionConfig
    w_q: np.ndarray
    w_k: np.ndarray

    def attention(self, prefix_len: int) -> np.ndarray:
        kern = kernel_for(self.cfg)
        h = np.full((prefix_len, 1), kern.one, dtype=object)
        h = kern.asarray(h)
        q = _Sparse(self.w_q).matvec(kern, h[-1:])
        k = _Sparse(self.w_k).matvec(kern, h)
        scores = kern.fold(kern.mul(q[:, None, :], k[None, :, :]), axis=-1)
        weights, failed = kern.softmax(scores, axis=-1)
        return weights[0]


def build_uniform_copy_attention(s: int) -> UniformCopyGadget:
    cfg = PrecisionConfig(0, s)
    kern = kernel_for(cfg)
    return UniformCopyGadget(cfg, kern.asarray(np.array([[kern.bound]], dtype=object)),
                             kern.asarray(np.array([[kern.one]], dtype=object)))


# -- circuit compiler ------------------------------------------------------------

@dataclass(frozen=True)
class GateRow:
    """What position ``position`` prepares: gate ``gate = position + 1``."""

    position: int
    gate: int
    c: int
    a: int
    b: int


@dataclass(frozen=True, eq=False)
class CompiledArtifact:
    params: TransformerParams
    circuit: Circuit
    k: int
    n: int
    T: int
    gate_table: tuple[GateRow, ...]

    @property
    def d(self) -> int:
        return self.params.d

    def metadata(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "T": self.T,
            "d": self.d,
            "s": self.params.cfg.s,
            "gates": [
                {"position": r.position, "gate": r.gate, "c": r.c, "a": r.a, "b": r.b}
                for r in self.gate_table
            ],
        }

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=1) + "\n"


def _layout(k: int) -> dict[str, int]:
    return {"x": 0, "a": 1, "b": 2, "out": 3, "c": 4, "id": 5, "aid": 5 + k, "bid": 5 + 2 * k,
            "one": 3 * k + 5}


def compile_circuit(c: Circuit, s: int = 2) -> CompiledArtifact:
    """Build the two-layer transformer whose CoT lists the gate values of ``c``.

    Raises
    ------
    UnsupportedGate
        ``c`` contains OR gates (lower them first).
    PrecisionTooSmall
        ``s < 2``.
    CompileError
        ``c`` is invalid, has no gates, or its output is not the last gate.
    """
    problems = validate(c)
    if problems:
        raise CompileError("invalid circuit: " + "; ".join(problems))
    bad = c.kinds() - {"AND", "NOT"}
    if bad:
        raise UnsupportedGate(f"only AND/NOT gates compile, found {sorted(bad)}; lower the circuit first")
    if s < 2:
        raise PrecisionTooSmall(f"compilation needs s >= 2, got s={s}")
    if c.n_gates == 0:
        raise CompileError("circuit has no gates to simulate")
    if c.output != c.size:
        raise CompileError(f"output gate {c.output} must be the last gate {c.size}")

    n, T = c.n_inputs, c.n_gates
    total = n + T
    k = max(1, math.ceil(math.log2(total)))
    if total - 1 > 2**k - 1:
        raise TooManyGates(f"{total - 1} positions do not fit {k}-bit ids")
    d = 3 * k + 6
    L = _layout(k)
    cfg = PrecisionConfig(0, s)
    kern = kernel_for(cfg)
    one = kern.one

    gates = {g.id: g for g in c.gates}
    rows = []
    for p in range(1, total):
        gid = p + 1
        g = gates.get(gid)
        if g is None:
            # input gate: never read; dummy operands must name a live position
            rows.append(GateRow(p, gid, 0, 1, 1))
        elif g.kind == "NOT":
            rows.append(GateRow(p, gid, 0, g.a, 1))
        else:
            rows.append(GateRow(p, gid, 1, g.a, g.b))

    pe = np.zeros((total, d), dtype=object)
    for r in rows:
        vec = pe[r.position - 1]
        vec[L["c"]] = r.c * one
        vec[L["id"]: L["id"] + k] = [v * one for v in sbin(r.position, k)]
        vec[L["aid"]: L["aid"] + k] = [v * one for v in sbin(r.a, k)]
        vec[L["bid"]: L["bid"] + k] = [v * one for v in sbin(r.b, k)]
        vec[L["one"]] = one
    # row for position n+T exists only so that n_max = n+T; it is never decoded from

    te = np.zeros((2, d), dtype=object)
    te[1, L["x"]] = one

    sel = build_selection_qk(k, s)

    def attention(query_block, value_slot):
        w_q = np.zeros((d, d), dtype=object)
        w_k = np.zeros((d, d), dtype=object)
        q_cols = list(range(L[query_block], L[query_block] + k)) + [L["one"]]
        k_cols = list(range(L["id"], L["id"] + k)) + [L["one"]]
        w_q[: 2 * k, q_cols] = np.asarray(sel.w_q, dtype=object)
        w_k[: 2 * k, k_cols] = np.asarray(sel.w_k, dtype=object)
        w_v = np.zeros((d, d), dtype=object)
        w_v[L[value_slot], L["x"]] = one
        w_o = np.eye(d, dtype=np.int64).astype(object) * one
        return w_q, w_k, w_v, w_o

    gate = build_gate_ff(s)
    w_1 = np.zeros((d, d), dtype=object)
    w_1[:2, [L["a"], L["b"], L["c"]]] = np.asarray(gate.w_1, dtype=object)
    b_1 = np.zeros(d, dtype=object)
    b_1[:2] = np.asarray(gate.b_1, dtype=object)
    w_2 = np.zeros((d, d), dtype=object)
    w_2[L["out"], :2] = np.asarray(gate.w_2, dtype=object)[0]
    zeros_dd = np.zeros((d, d), dtype=object)
    zeros_d = np.zeros(d, dtype=object)

    A = kern.asarray
    layer1 = LayerParams(*map(A, attention("aid", "a")), A(zeros_dd), A(zeros_d), A(zeros_dd), A(zeros_d))
    layer2 = LayerParams(*map(A, attention("bid", "b")), A(w_1), A(b_1), A(w_2), A(zeros_d))

    out = np.zeros((2, d), dtype=object)
    out[1, L["out"]] = one

    params = TransformerParams(cfg, ("0", "1"), d, total, A(te), A(pe), (layer1, layer2), A(out))
    return CompiledArtifact(params, c, k, n, T, tuple(rows))


# -- verification -------------------------------------------------------------------

@dataclass
class VerifyReport:
    total: int = 0
    agree: int = 0
    mismatches: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total == self.agree

    def summary(self) -> str:
        return f"{self.agree}/{self.total} agree"

    def to_dict(self) -> dict:
        return {"total": self.total, "agree": self.agree, "ok": self.ok, "mismatches": self.mismatches}


def _inputs(n: int, mode: str, samples: int, seed: int) -> np.ndarray:
    if mode == "exhaustive":
        if n > 20:
            raise ValueError("exhaustive verification is limited to n <= 20 inputs")
        return np.array(list(product((0, 1), repeat=n)), dtype=np.intp)
    if mode == "sampled":
        rng = random.Random(seed)
        return np.array([[rng.randint(0, 1) for _ in range(n)] for _ in range(samples)], dtype=np.intp)
    raise ValueError(f"unknown verification mode {mode!r}")


def verify_compiled(artifact: CompiledArtifact, mode: str = "exhaustive", samples: int = 256,
                    seed: int = 0, params: TransformerParams | None = None,
                    chunk: int = 4096, max_mismatches: int = 20) -> VerifyReport:
    """Decode every chosen input and compare the trace to the circuit's gate values.

    ``params`` overrides the compiled weights (e.g. a weights file loaded from
    disk). Each mismatch names the input, the first divergent decoding
    position and gate, and the expected and produced bits.
    """
    params = params or artifact.params
    c = artifact.circuit
    xs = _inputs(c.n_inputs, mode, samples, seed)
    report = VerifyReport()
    vocab_bits = np.array([int(v) if v in ("0", "1") else -1 for v in params.vocab])
    for start in range(0, len(xs), chunk):
        block = xs[start: start + chunk]
        expected = evaluate_batch(c, block)[:, c.n_inputs:]
        prompts = params.encode_tokens(["0", "1"])[block]
        trace = decode_batch(params, prompts, artifact.T)
        produced = np.where(trace.tokens >= 0, vocab_bits[np.maximum(trace.tokens, 0)], -1)
        good = (produced == expected).all(axis=1)
        report.total += len(block)
        report.agree += int(good.sum())
        for row in np.flatnonzero(~good):
            if len(report.mismatches) >= max_mismatches:
                break
            step = int(np.flatnonzero(produced[row] != expected[row])[0])
            report.mismatches.append({
                "input": "".join(str(int(b)) for b in block[row]),
                "step": step,
                "position": c.n_inputs + step,
                "gate": c.n_inputs + step + 1,
                "expected": int(expected[row, step]),
                "got": int(produced[row, step]),
                "division_by_zero": bool(trace.failed_at[row] >= 0 and trace.failed_at[row] <= step),
            })
    return report
