"""Finite-precision decoder-only transformer and greedy chain-of-thought decoding.

Every arithmetic step rounds to the model's grid: matrix products are rounded
inner products (rounded elementwise products folded left to right), softmax
is the rounded quotient of rounded exponentials, and residual additions are
rounded. There is a single attention head and no LayerNorm.

Parameters are held as integer grid codes (see :mod:`finite_cot.grid`).
"""

from __future__ import annotations

import functools
import io
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fpnum import DivisionByZero, FpNumber, PrecisionConfig, parse_fp
from .grid import GridKernel, kernel_for

__all__ = [
    "UnknownToken",
    "CapacityError",
    "LayerParams",
    "TransformerParams",
    "CotTrace",
    "BatchTrace",
    "attention_layer",
    "ff_layer",
    "forward",
    "hidden_states",
    "next_token",
    "decode_cot",
    "decode_batch",
    "save_params",
    "load_params",
    "params_to_json",
    "params_from_json",
]

WEIGHTS_FORMAT = "finite-cot-weights/1"
LAYER_FIELDS = ("w_q", "w_k", "w_v", "w_o", "w_1", "b_1", "w_2", "b_2")


class UnknownToken(KeyError):
    pass


class CapacityError(ValueError):
    """Sequence would exceed the model's maximum length."""


class _Sparse:
    """Row-compressed view of a weight matrix (nonzero columns in order).

    Skipping zero weights is exact: a zero product adds nothing to a fold.
    """

    def __init__(self, w: np.ndarray):
        rows, cols = w.shape
        nz = [np.flatnonzero(w[r] != 0) for r in range(rows)]
        width = max((len(c) for c in nz), default=0)
        self.shape = w.shape
        self.width = width
        self.idx = np.zeros((rows, width), dtype=np.intp)
        self.val = np.zeros((rows, width), dtype=w.dtype)
        for r, c in enumerate(nz):
            self.idx[r, : len(c)] = c
            self.val[r, : len(c)] = w[r, c]
        self.active_rows = np.array([len(c) > 0 for c in nz], dtype=bool)

    def matvec(self, kern: GridKernel, h: np.ndarray) -> np.ndarray:
        """Rounded ``W @ h`` over the last axis of ``h``."""
        lead = h.shape[:-1]
        if self.width == 0:
            return np.zeros(lead + (self.shape[0],), dtype=h.dtype)
        gathered = h[..., self.idx]
        return kern.fold(kern.mul(gathered, self.val), axis=-1)


@dataclass(frozen=True, eq=False)
class LayerParams:
    """One decoder block: attention ``W_Q, W_K, W_V, W_O`` and feed-forward
    ``W_1, b_1, W_2, b_2``, all as grid codes."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray

    @functools.cached_property
    def sparse(self) -> dict[str, _Sparse]:
        return {name: _Sparse(getattr(self, name)) for name in ("w_q", "w_k", "w_v", "w_o", "w_1", "w_2")}

    @functools.cached_property
    def score_coords(self) -> np.ndarray:
        """Coordinates where both query and key can be nonzero."""
        sp = self.sparse
        return np.flatnonzero(sp["w_q"].active_rows & sp["w_k"].active_rows)

    @functools.cached_property
    def value_coords(self) -> np.ndarray:
        return np.flatnonzero(self.sparse["w_v"].active_rows)


@dataclass(frozen=True, eq=False)
class TransformerParams:
    """All weights of a finite-precision decoder-only transformer.

    ``position_embedding[i - 1]`` is the encoding of position ``i``.
    """

    cfg: PrecisionConfig
    vocab: tuple[str, ...]
    d: int
    n_max: int
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    layers: tuple[LayerParams, ...]
    output: np.ndarray
    kernel: GridKernel = field(init=False, repr=False)

    def __post_init__(self):
        kern = kernel_for(self.cfg)
        object.__setattr__(self, "kernel", kern)
        object.__setattr__(self, "vocab", tuple(str(v) for v in self.vocab))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary entries must be distinct")
        V, d = len(self.vocab), self.d
        _expect(self.token_embedding, (V, d), "token_embedding")
        _expect(self.position_embedding, (self.n_max, d), "position_embedding")
        _expect(self.output, (V, d), "output")
        for i, layer in enumerate(self.layers):
            for name in ("w_q", "w_k", "w_v", "w_o"):
                _expect(getattr(layer, name), (d, d), f"layers[{i}].{name}")
            hidden = layer.w_1.shape[0]
            _expect(layer.w_1, (hidden, d), f"layers[{i}].w_1")
            _expect(layer.b_1, (hidden,), f"layers[{i}].b_1")
            _expect(layer.w_2, (d, hidden), f"layers[{i}].w_2")
            _expect(layer.b_2, (d,), f"layers[{i}].b_2")
        for name, arr in self.arrays():
            if not kern.representable(arr).all():
                raise ValueError(f"{name} holds values outside F_{{{self.cfg.e},{self.cfg.s}}}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @functools.cached_property
    def token_index(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.vocab)}

    @functools.cached_property
    def output_sparse(self) -> _Sparse:
        return _Sparse(self.output)

    def arrays(self):
        """``(name, codes)`` for every weight table, in file order."""
        yield "token_embedding", self.token_embedding
        yield "position_embedding", self.position_embedding
        for i, layer in enumerate(self.layers):
            for name in LAYER_FIELDS:
                yield f"layers[{i}].{name}", getattr(layer, name)
        yield "output", self.output

    def encode_tokens(self, tokens: Sequence) -> np.ndarray:
        try:
            return np.array([self.token_index[str(t)] for t in tokens], dtype=np.intp)
        except KeyError as exc:
            raise UnknownToken(f"token {exc.args[0]!r} not in vocabulary {self.vocab}") from None

    def replace(self, **changes) -> "TransformerParams":
        kw = {k: getattr(self, k) for k in
              ("cfg", "vocab", "d", "n_max", "token_embedding", "position_embedding", "layers", "output")}
        kw.update(changes)
        return TransformerParams(**kw)

    @classmethod
    def zeros(cls, cfg: PrecisionConfig, vocab, d: int, n_layers: int, n_max: int, hidden=None):
        kern = kernel_for(cfg)
        hidden = d if hidden is None else hidden
        z = lambda *shape: kern.asarray(np.zeros(shape, dtype=np.int64))  # noqa: E731
        layers = [LayerParams(z(d, d), z(d, d), z(d, d), z(d, d), z(hidden, d), z(hidden), z(d, hidden), z(d))
                  for _ in range(n_layers)]
        V = len(vocab)
        return cls(cfg, tuple(vocab), d, n_max, z(V, d), z(n_max, d), tuple(layers), z(V, d))


def _expect(arr, shape, name):
    if tuple(np.shape(arr)) != tuple(shape):
        raise ValueError(f"{name} has shape {np.shape(arr)}, expected {tuple(shape)}")


@dataclass
class CotTrace:
    """Result of greedy chain-of-thought decoding.

    ``logits[t]`` are the final-position scores that produced ``tokens[t]``.
    ``division_by_zero[t]`` is set on the step where a rounded softmax
    divided by zero; decoding stops there, so that step has no token.
    """

    prompt: tuple[str, ...]
    tokens: list[str] = field(default_factory=list)
    logits: list[tuple[FpNumber, ...]] = field(default_factory=list)
    division_by_zero: list[bool] = field(default_factory=list)

    @property
    def aborted(self) -> bool:
        return any(self.division_by_zero)

    @property
    def last(self):
        return self.tokens[-1] if self.tokens else None


@dataclass
class BatchTrace:
    """Greedy decoding of many prompts at once.

    ``tokens`` holds vocabulary indices with ``-1`` after a lane aborted;
    ``failed_at`` is the step index of the first division by zero, or -1.
    """

    tokens: np.ndarray
    logits: np.ndarray
    failed_at: np.ndarray


# -- layers on code arrays ---------------------------------------------------

def _ff_codes(kern: GridKernel, layer: LayerParams, h: np.ndarray) -> np.ndarray:
    sp = layer.sparse
    pre = kern.add(sp["w_1"].matvec(kern, h), layer.b_1)
    return kern.add(sp["w_2"].matvec(kern, kern.relu(pre)), layer.b_2)


def _attention_full(kern: GridKernel, layer: LayerParams, h: np.ndarray):
    """Causal self-attention over all positions; ``h`` is ``(B, n, d)``."""
    sp = layer.sparse
    B, n, d = h.shape
    q = sp["w_q"].matvec(kern, h)
    k = sp["w_k"].matvec(kern, h)
    v = sp["w_v"].matvec(kern, h)
    coords = layer.score_coords
    if len(coords):
        prod = kern.mul(q[:, :, None, coords], k[:, None, :, coords])
        scores = kern.fold(prod, axis=-1)
    else:
        scores = kern.asarray(np.zeros((B, n, n), dtype=np.int64))
    causal = np.tril(np.ones((n, n), dtype=bool))
    weights, failed = kern.softmax(scores, mask=causal[None], axis=-1)
    agg = kern.asarray(np.zeros((B, n, d), dtype=np.int64))
    rows = layer.value_coords
    if len(rows):
        # agg[b, i, r] = fold_j v[b, j, r] * w[b, i, j]
        prod = kern.mul(v[:, None, :, rows], weights[:, :, :, None])
        agg[:, :, rows] = kern.fold(prod, axis=2)
    return sp["w_o"].matvec(kern, agg), failed.any(axis=1)


def _embed(params: TransformerParams, ids: np.ndarray, positions: np.ndarray) -> np.ndarray:
    kern = params.kernel
    return kern.add(params.token_embedding[ids], params.position_embedding[positions])


def _forward_codes(params: TransformerParams, ids: np.ndarray, collect: list | None = None):
    """Logit codes ``(B, n, |V|)`` and per-lane failure flags for ``ids``.

    With ``collect`` the embedding and the state after every attention and
    feed-forward sublayer are appended to it.
    """
    kern = params.kernel
    B, n = ids.shape
    if not 1 <= n <= params.n_max:
        raise CapacityError(f"sequence length {n} outside [1, {params.n_max}]")
    h = _embed(params, ids, np.arange(n))
    trail = collect if collect is not None else []
    trail.append(h)
    failed = np.zeros(B, dtype=bool)
    for layer in params.layers:
        attn, f = _attention_full(kern, layer, h)
        failed |= f
        h = kern.add(h, attn)
        trail.append(h)
        h = kern.add(h, _ff_codes(kern, layer, h))
        trail.append(h)
    return params.output_sparse.matvec(kern, h), failed


# -- public API ----------------------------------------------------------------

def _as_codes(kern: GridKernel, values) -> np.ndarray:
    return kern.encode(np.asarray(values, dtype=object))


def attention_layer(layer: LayerParams, h, cfg: PrecisionConfig) -> np.ndarray:
    """Causal self-attention on a sequence of d-vectors (values or FpNumbers).

    Raises :class:`DivisionByZero` if any position's softmax denominator
    rounds to zero.
    """
    kern = kernel_for(cfg)
    codes = _as_codes(kern, h)[None]
    out, failed = _attention_full(kern, layer, codes)
    if failed.any():
        raise DivisionByZero("attention softmax denominator rounded to zero")
    return kern.decode(out[0])


def ff_layer(layer: LayerParams, h, cfg: PrecisionConfig) -> np.ndarray:
    """``round(W_2 x relu(round(W_1 x h + b_1)) + b_2)`` for one d-vector."""
    kern = kernel_for(cfg)
    return kern.decode(_ff_codes(kern, layer, _as_codes(kern, h)))


def forward(params: TransformerParams, tokens: Sequence) -> np.ndarray:
    """Output-layer logits at every position, as an ``(n, |V|)`` array of FpNumbers."""
    ids = params.encode_tokens(tokens)[None]
    logits, failed = _forward_codes(params, ids)
    if failed[0]:
        raise DivisionByZero("attention softmax denominator rounded to zero")
    return params.kernel.decode(logits[0])


def hidden_states(params: TransformerParams, tokens: Sequence) -> list[np.ndarray]:
    """Residual stream snapshots ``[h0, h0.5, h1, ..., hL]`` as FpNumber arrays.

    ``h(l+0.5)`` is the state after layer ``l + 1``'s attention and ``h(l+1)``
    after its feed-forward block; each has shape ``(n, d)``.
    """
    ids = params.encode_tokens(tokens)[None]
    trail: list = []
    _, failed = _forward_codes(params, ids, trail)
    if failed[0]:
        raise DivisionByZero("attention softmax denominator rounded to zero")
    return [params.kernel.decode(h[0]) for h in trail]


def next_token(logits, vocab: Sequence[str] | None = None):
    """Greedy choice; ties go to the lowest vocabulary index."""
    values = [v.value if isinstance(v, FpNumber) else v for v in logits]
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    return vocab[best] if vocab is not None else best


class _Cache:
    """Per-layer keys, values and hidden states for an incremental decode."""

    def __init__(self, params: TransformerParams, batch: int, length: int):
        kern = params.kernel
        d = params.d
        self.keys = [kern.asarray(np.zeros((batch, length, d), dtype=np.int64)) for _ in params.layers]
        self.values = [kern.asarray(np.zeros((batch, length, d), dtype=np.int64)) for _ in params.layers]
        self.n = 0


def _step(params: TransformerParams, cache: _Cache, ids: np.ndarray):
    """Process one new position for every lane; returns logits and failures."""
    kern = params.kernel
    p = cache.n
    h = _embed(params, ids, np.full(ids.shape, p))
    failed = np.zeros(ids.shape[0], dtype=bool)
    for li, layer in enumerate(params.layers):
        sp = layer.sparse
        q = sp["w_q"].matvec(kern, h)
        cache.keys[li][:, p] = sp["w_k"].matvec(kern, h)
        v = cache.values[li]
        v[:, p] = sp["w_v"].matvec(kern, h)
        keys = cache.keys[li][:, : p + 1]
        coords = layer.score_coords
        if len(coords):
            scores = kern.fold(kern.mul(q[:, None, coords], keys[:, :, coords]), axis=-1)
        else:
            scores = kern.asarray(np.zeros(keys.shape[:2], dtype=np.int64))
        weights, f = kern.softmax(scores, axis=-1)
        failed |= f
        agg = kern.asarray(np.zeros(h.shape, dtype=np.int64))
        rows = layer.value_coords
        if len(rows):
            prod = kern.mul(v[:, : p + 1, rows], weights[:, :, None])
            agg[:, rows] = kern.fold(prod, axis=1)
        h = kern.add(h, sp["w_o"].matvec(kern, agg))
        h = kern.add(h, _ff_codes(kern, layer, h))
    cache.n += 1
    return params.output_sparse.matvec(kern, h), failed


def decode_batch(params: TransformerParams, prompts, steps: int) -> BatchTrace:
    """Greedy CoT for a batch of equal-length prompts of vocabulary indices.

    Earlier positions never see later ones, so their keys and values are
    cached; the result is bit-identical to re-running :func:`forward` on the
    growing sequence.
    """
    ids = np.asarray(prompts, dtype=np.intp)
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise ValueError("prompts must be a non-empty (batch, length) array")
    B, n = ids.shape
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if n + steps > params.n_max:
        raise CapacityError(f"{n} prompt tokens + {steps} steps exceed n_max={params.n_max}")
    if ids.min() < 0 or ids.max() >= len(params.vocab):
        raise UnknownToken("token index outside the vocabulary")
    V = len(params.vocab)
    tokens = np.full((B, steps), -1, dtype=np.intp)
    logits = params.kernel.asarray(np.zeros((B, steps, V), dtype=np.int64))
    failed_at = np.full(B, -1, dtype=np.intp)
    if steps == 0:
        return BatchTrace(tokens, logits, failed_at)
    cache = _Cache(params, B, n + steps)
    dead = np.zeros(B, dtype=bool)
    out = None
    for p in range(n):
        out, f = _step(params, cache, ids[:, p])
        dead |= f
    for t in range(steps):
        newly = dead & (failed_at < 0)
        failed_at[newly] = t
        logits[:, t] = out
        # np.argmax returns the first maximum: lowest vocabulary index wins ties
        nxt = np.argmax(out, axis=-1) if out.dtype != object else np.array(
            [next_token(list(row)) for row in out], dtype=np.intp)
        tokens[:, t] = np.where(dead, -1, nxt)
        if t + 1 < steps:
            out, f = _step(params, cache, np.where(dead, 0, nxt))
            dead |= f
    return BatchTrace(tokens, logits, failed_at)


def decode_cot(params: TransformerParams, tokens: Sequence, steps: int) -> CotTrace:
    """Append ``steps`` greedily generated tokens to ``tokens``."""
    prompt = tuple(str(t) for t in tokens)
    ids = params.encode_tokens(prompt)
    trace = CotTrace(prompt)
    if steps == 0:
        return trace
    batch = decode_batch(params, ids[None], steps)
    kern = params.kernel
    stop = batch.failed_at[0]
    for t in range(steps):
        if t == stop:
            trace.division_by_zero.append(True)
            break
        trace.tokens.append(params.vocab[batch.tokens[0, t]])
        trace.logits.append(tuple(kern.decode(batch.logits[0, t])))
        trace.division_by_zero.append(False)
    return trace


# -- weights file -----------------------------------------------------------------

def _pairs(kern: GridKernel, arr: np.ndarray):
    return [list(v.to_pair()) for v in kern.decode(arr).ravel()]


def _emit(value, indent=0) -> str:
    pad = " " * indent
    if isinstance(value, dict):
        items = [f'{pad}  {json.dumps(k)}: {_emit(v, indent + 2).lstrip()}' for k, v in value.items()]
        return pad + "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, list) and value and isinstance(value[0], list) and value[0] and isinstance(value[0][0], list):
        rows = [pad + "  " + json.dumps(r, separators=(",", ":")) for r in value]
        return pad + "[\n" + ",\n".join(rows) + "\n" + pad + "]"
    if isinstance(value, list) and value and isinstance(value[0], dict):
        return pad + "[\n" + ",\n".join(_emit(v, indent + 2) for v in value) + "\n" + pad + "]"
    return pad + json.dumps(value, separators=(",", ":"))


def _table(kern, arr):
    flat = _pairs(kern, arr)
    if arr.ndim == 1:
        return flat
    cols = arr.shape[1]
    return [flat[i: i + cols] for i in range(0, len(flat), cols)]


def params_to_json(params: TransformerParams) -> str:
    """Canonical text form; entries are ``[signed significand, exponent]`` pairs."""
    kern = params.kernel
    doc = {
        "format": WEIGHTS_FORMAT,
        "cfg": {"e": params.cfg.e, "s": params.cfg.s},
        "vocab": list(params.vocab),
        "d": params.d,
        "n_layers": params.n_layers,
        "n_max": params.n_max,
        "token_embedding": _table(kern, params.token_embedding),
        "position_embedding": _table(kern, params.position_embedding),
        "layers": [{name: _table(kern, getattr(layer, name)) for name in LAYER_FIELDS}
                   for layer in params.layers],
        "output": _table(kern, params.output),
    }
    return _emit(doc) + "\n"


def _read_table(kern, cfg, rows, shape):
    arr = np.empty(shape, dtype=object)
    flat = arr.reshape(-1)
    entries = rows if len(shape) == 1 else [e for row in rows for e in row]
    if len(entries) != flat.size:
        raise ValueError(f"table has {len(entries)} entries, expected shape {shape}")
    for i, e in enumerate(entries):
        flat[i] = parse_fp(e, cfg).units
    return kern.asarray(arr)


def params_from_json(text: str) -> TransformerParams:
    """Inverse of :func:`params_to_json`; raises ValueError on malformed input."""
    try:
        return _params_from_doc(json.loads(text))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed weights document: {exc!r}") from None


def _params_from_doc(doc) -> TransformerParams:
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"not a weights document (format={doc.get('format')!r})")
    cfg = PrecisionConfig(int(doc["cfg"]["e"]), int(doc["cfg"]["s"]))
    kern = kernel_for(cfg)
    d, n_max, vocab = int(doc["d"]), int(doc["n_max"]), doc["vocab"]
    V = len(vocab)
    if len(doc["layers"]) != int(doc["n_layers"]):
        raise ValueError("n_layers disagrees with the layer list")
    layers = []
    for lay in doc["layers"]:
        hidden = len(lay["b_1"])
        shapes = {"w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
                  "w_1": (hidden, d), "b_1": (hidden,), "w_2": (d, hidden), "b_2": (d,)}
        layers.append(LayerParams(**{k: _read_table(kern, cfg, lay[k], shapes[k]) for k in LAYER_FIELDS}))
    return TransformerParams(
        cfg, tuple(vocab), d, n_max,
        _read_table(kern, cfg, doc["token_embedding"], (V, d)),
        _read_table(kern, cfg, doc["position_embedding"], (n_max, d)),
        tuple(layers),
        _read_table(kern, cfg, doc["output"], (V, d)),
    )


def save_params(params: TransformerParams, path) -> None:
    text = params_to_json(params)
    if isinstance(path, io.TextIOBase):
        path.write(text)
        return
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        fh.write(text)


def load_params(path) -> TransformerParams:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return params_from_json(fh.read())
