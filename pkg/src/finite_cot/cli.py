"""Command-line front end: ``finite-cot <command> ...``.

Exit status is 0 on success, 1 when a check or verification fails, 2 on bad
input (unreadable files, parse and compile errors, capacity errors) and 3 when
a run hits a softmax division by zero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from . import checks
from .circuit import CircuitError, evaluate, lower_to_and_not, parse_circuit
from .compiler import CompileError, compile_circuit, verify_compiled
from .fpnum import DivisionByZero, PrecisionConfig, parse_fp, sum_iter
from .serialsum import gridworld_sum
from .tasks import TASKS, VARIANTS, GeneratorConfig, write_dataset
from .transformer import CapacityError, UnknownToken, decode_cot, load_params, params_to_json

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DIVZERO = 0, 1, 2, 3


class InputProblem(Exception):
    pass


def _read(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputProblem(f"{path}: {exc.strerror or exc}") from None


def _load_circuit(path, lower=False):
    try:
        circuit = parse_circuit(_read(path))
    except CircuitError as exc:
        where = f"{path}:{exc.line}" if exc.line is not None else str(path)
        raise InputProblem(f"{where}: {exc.args[0].split(': ', 1)[-1]}") from None
    return lower_to_and_not(circuit) if lower else circuit


def _compile(path, s, lower):
    circuit = _load_circuit(path, lower)
    try:
        return compile_circuit(circuit, s=s)
    except CompileError as exc:
        raise InputProblem(f"{path}: {exc}") from None


def _write_atomic(files: dict) -> None:
    """Write every ``path -> text`` pair or none of them."""
    staged = []
    try:
        for path, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _bits(text: str) -> list[str]:
    text = text.replace(" ", "").replace(",", "")
    if any(ch not in "01" for ch in text):
        raise InputProblem(f"input must be a string of 0/1 bits, got {text!r}")
    return list(text)


def _emit(record: dict, stream=None):
    print(json.dumps(record, sort_keys=True), file=stream or sys.stdout)


# -- commands ---------------------------------------------------------------------

def cmd_compile(args) -> int:
    artifact = _compile(args.circuit, args.s, args.lower)
    meta_path = args.meta or os.path.splitext(args.out)[0] + ".meta.json"
    _write_atomic({args.out: params_to_json(artifact.params), meta_path: artifact.metadata_json()})
    print(f"wrote {args.out} (d={artifact.d}, L={artifact.params.n_layers}, n_max={artifact.params.n_max}) "
          f"and {meta_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        params = load_params(args.weights)
    except OSError as exc:
        raise InputProblem(f"{args.weights}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise InputProblem(f"{args.weights}: {exc}") from None
    tokens = _bits(args.input) if set(params.vocab) == {"0", "1"} else args.input.split()
    try:
        trace = decode_cot(params, tokens, args.steps)
    except CapacityError as exc:
        raise InputProblem(str(exc)) from None
    except UnknownToken as exc:
        raise InputProblem(f"unknown token {exc}") from None
    if args.trace:
        for t, logits in enumerate(trace.logits):
            _emit({"step": t, "token": trace.tokens[t], "logits": [str(v.value) for v in logits]})
    print(" ".join(trace.tokens))
    if trace.aborted:
        print(f"error: softmax denominator rounded to zero at step {len(trace.tokens)}", file=sys.stderr)
        return EXIT_DIVZERO
    return EXIT_OK


def cmd_eval(args) -> int:
    circuit = _load_circuit(args.circuit)
    try:
        row = evaluate(circuit, [int(b) for b in _bits(args.input)])
    except ValueError as exc:
        raise InputProblem(str(exc)) from None
    if args.all:
        print(" ".join(str(v) for v in row.gate_values))
    else:
        print(row.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    artifact = _compile(args.circuit, args.s, args.lower)
    params = None
    if args.weights:
        try:
            params = load_params(args.weights)
        except (OSError, ValueError) as exc:
            raise InputProblem(f"{args.weights}: {exc}") from None
    mode = "sampled" if args.random is not None else "exhaustive"
    report = verify_compiled(artifact, mode=mode, samples=args.random or 0, seed=args.seed, params=params)
    print(report.summary())
    for m in report.mismatches:
        _emit(m)
    if args.report:
        _write_atomic({args.report: json.dumps(report.to_dict(), sort_keys=True) + "\n"})
    return EXIT_OK if report.ok else EXIT_FAIL


def _suite_results(args) -> list:
    suite = args.suite
    if suite == "rounding":
        if args.e is None and args.s is None:
            return [checks.rounding_laws(PrecisionConfig(e, s)) for e in range(3) for s in range(1, 4)]
        cfg = PrecisionConfig(args.e or 0, args.s or 2)
        return [checks.rounding_laws(cfg, samples=args.trials, seed=args.seed)]
    if suite == "lemmas":
        return checks.lemma_suite()
    if suite == "automaton":
        return [checks.automaton_suite(args.e or 0, args.s or 1)]
    if suite == "gates":
        return [checks.boolean_gates(), checks.gate_ff_truth_table()]
    if suite == "sum":
        if args.s is None:
            return [checks.sum_suite(1, exhaustive_length=4)]
        return [checks.sum_suite(args.s, trials=args.trials or 1000, length=args.length, seed=args.seed)]
    raise InputProblem(f"unknown suite {suite!r}")


def cmd_check(args) -> int:
    results = _suite_results(args)
    for r in results:
        _emit(r.to_dict())
    ok = all(r.ok for r in results)
    print(f"{args.suite}: {'pass' if ok else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


_TASK_FLAGS = {"p": "p", "n": "n", "m": "m", "T_bound": "t_bound", "max_squarings": "max_squarings"}


def cmd_gen(args) -> int:
    need = TASKS[args.task][1]
    params = {}
    for name in need:
        value = getattr(args, _TASK_FLAGS[name])
        if value is None:
            raise InputProblem(f"task {args.task} needs --{_TASK_FLAGS[name].replace('_', '-')}")
        params[name] = value
    config = GeneratorConfig(args.task, params, args.count, args.seed)
    try:
        count = write_dataset(config, args.variant, args.out)
    except OSError as exc:
        raise InputProblem(f"{args.out}: {exc.strerror or exc}") from None
    print(f"wrote {count} {args.task} records ({args.variant}) to {args.out}")
    return EXIT_OK


def cmd_sum(args) -> int:
    cfg = PrecisionConfig(0, args.s)
    try:
        xs = [parse_fp(v, cfg) for v in args.values]
    except ValueError as exc:
        raise InputProblem(str(exc)) from None
    fast = gridworld_sum(xs)
    fold = sum_iter(xs, cfg)
    _emit({"gridworld": str(fast.value), "fold": str(fold.value), "agree": fast == fold})
    return EXIT_OK if fast == fold else EXIT_FAIL


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finite-cot", description="Finite-precision transformer toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile an AND/NOT circuit into transformer weights")
    p.add_argument("circuit")
    p.add_argument("--s", type=int, default=2, help="precision parameter (default 2)")
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--meta", help="metadata file (default: <out stem>.meta.json)")
    p.add_argument("--lower", action="store_true", help="rewrite OR gates into AND/NOT first")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="greedy chain-of-thought decoding from a weights file")
    p.add_argument("weights")
    p.add_argument("--input", required=True, help="prompt: a bit string, or space separated tokens")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--trace", action="store_true", help="print per-step logits as JSON lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a circuit directly")
    p.add_argument("circuit")
    p.add_argument("--input", required=True)
    p.add_argument("--all", action="store_true", help="print every gate value, not just the output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="check compiled decoding against circuit evaluation")
    p.add_argument("circuit")
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--lower", action="store_true")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true", help="all 2^n inputs (default)")
    mode.add_argument("--random", type=int, metavar="N", help="N random inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", help="verify these weights instead of freshly compiled ones")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("check", help="run a property suite")
    p.add_argument("suite", choices=checks.SUITES)
    p.add_argument("--e", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen", help="generate a task dataset")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=int, help="modulus (modadd)")
    p.add_argument("--n", type=int, help="sequence length including '=' (modadd)")
    p.add_argument("--m", type=int, help="permutation count (permcomp) or gate count (cvp)")
    p.add_argument("--t-bound", type=int, dest="t_bound", help="prime and base bound (itersq)")
    p.add_argument("--max-squarings", type=int, help="largest squaring count (itersq)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sum", help="compare the overflow-tracking sum with the left fold")
    p.add_argument("values", nargs="+", help="decimal values or (significand,exponent) pairs")
    p.add_argument("--s", type=int, required=True)
    p.set_defaults(func=cmd_sum)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivisionByZero as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVZERO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
