"""scikit-learn style wrapper around a compiled circuit transformer.

``fit`` takes a circuit (object, text, or path) and compiles it; ``predict``
decodes the output bit for each row of input bits and ``transform`` returns
the full chain of thought, one gate value per column.
"""

from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .circuit import Circuit, lower_to_and_not, parse_circuit
from .compiler import compile_circuit, verify_compiled
from .transformer import decode_batch

__all__ = ["CoTCircuitModel", "check_bit_matrix", "as_circuit"]


def check_bit_matrix(X, n_features: int | None = None) -> np.ndarray:
    """Validate a 2-D array of 0/1 inputs and return it as ``intp``.

    Strings such as ``"0110"`` are accepted as rows.
    """
    if isinstance(X, str):
        X = [X]
    rows = [list(r) if isinstance(r, str) else r for r in X]
    arr = np.asarray(rows)
    if arr.ndim == 1:
        arr = arr[None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array of bits, got shape {arr.shape}")
    try:
        bits = arr.astype(np.intp)
    except (TypeError, ValueError):
        raise ValueError("inputs must be 0/1 values") from None
    if arr.dtype.kind == "f" and not np.array_equal(bits, arr):
        raise ValueError("inputs must be 0/1 values")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("inputs must be 0/1 values")
    if n_features is not None and bits.shape[1] != n_features:
        raise ValueError(f"X has {bits.shape[1]} features, but the circuit has {n_features} inputs")
    return bits


def as_circuit(source) -> Circuit:
    """A :class:`Circuit` from an object, circuit text, or a path to a file."""
    if isinstance(source, Circuit):
        return source
    if isinstance(source, (str, os.PathLike)):
        text = os.fspath(source)
        if "\n" not in text and os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        return parse_circuit(text)
    raise TypeError(f"cannot read a circuit from {type(source).__name__}")


class CoTCircuitModel(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Two-layer finite-precision transformer that evaluates one circuit.

    Parameters
    ----------
    precision : int, default=2
        Significand parameter ``s`` of the fixed-point grid (``e = 0``).
    lower : bool, default=False
        Rewrite OR gates into AND/NOT before compiling.

    Attributes
    ----------
    artifact_ : CompiledArtifact
    circuit_ : Circuit
        The circuit actually compiled (after lowering).
    n_features_in_ : int
    classes_ : ndarray of shape (2,)
    """

    def __init__(self, precision: int = 2, lower: bool = False):
        self.precision = precision
        self.lower = lower

    def fit(self, X, y=None):
        circuit = as_circuit(X)
        if self.lower:
            circuit = lower_to_and_not(circuit)
        self.artifact_ = compile_circuit(circuit, s=self.precision)
        self.circuit_ = circuit
        self.n_features_in_ = circuit.n_inputs
        self.classes_ = np.array([0, 1])
        return self

    def transform(self, X) -> np.ndarray:
        """Generated gate values, shape ``(n_samples, n_gates)``; -1 after a
        softmax division by zero."""
        check_is_fitted(self, "artifact_")
        bits = check_bit_matrix(X, self.n_features_in_)
        params = self.artifact_.params
        trace = decode_batch(params, params.encode_tokens(["0", "1"])[bits], self.artifact_.T)
        vocab_bits = np.array([int(v) for v in params.vocab])
        return np.where(trace.tokens >= 0, vocab_bits[np.maximum(trace.tokens, 0)], -1)

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, -1]

    def verify(self, mode: str = "exhaustive", samples: int = 256, seed: int = 0):
        check_is_fitted(self, "artifact_")
        return verify_compiled(self.artifact_, mode=mode, samples=samples, seed=seed)
