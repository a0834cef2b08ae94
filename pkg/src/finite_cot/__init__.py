"""Exact finite-precision transformers that run chain-of-thought over circuits."""

from .fpnum import DivisionByZero, FpNumber, PrecisionConfig, round_to_grid
from .circuit import Circuit, Gate, evaluate, parse_circuit
from .transformer import TransformerParams, decode_cot, forward, load_params, save_params
from .compiler import CompiledArtifact, compile_circuit, verify_compiled

__version__ = "0.1.0"

__all__ = [
    "DivisionByZero",
    "FpNumber",
    "PrecisionConfig",
    "round_to_grid",
    "Circuit",
    "Gate",
    "evaluate",
    "parse_circuit",
    "TransformerParams",
    "decode_cot",
    "forward",
    "load_params",
    "save_params",
    "CompiledArtifact",
    "compile_circuit",
    "verify_compiled",
]
