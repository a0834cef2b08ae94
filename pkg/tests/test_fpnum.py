from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import grid_values, oracle_exp, oracle_fold, oracle_round
from finite_cot.fpnum import (DivisionByZero, FpNumber, PrecisionConfig, add, binop_rounded, div,
                              exp_rounded, inner_rounded, matmul_rounded, mul, parse_fp, relu,
                              round_to_grid, softmax_rounded, sub, sum_iter, vector)
from finite_cot.grid import kernel_for

S1 = PrecisionConfig(0, 1)
S2 = PrecisionConfig(0, 2)
SMALL = [PrecisionConfig(e, s) for e in range(3) for s in range(1, 4)]


def fp(x, cfg=S2):
    return FpNumber.from_value(x, cfg)


# -- configuration ----------------------------------------------------------------------

def test_fixed_point_bound():
    for s in range(1, 9):
        assert PrecisionConfig(0, s).bound == 2**s - Fraction(1, 2**s)


@pytest.mark.parametrize("cfg", SMALL, ids=str)
def test_grid_matches_definition(cfg):
    assert tuple(cfg.grid()) == grid_values(cfg.e, cfg.s)


def test_invalid_configs():
    with pytest.raises(ValueError):
        PrecisionConfig(0, 0)
    with pytest.raises(ValueError):
        PrecisionConfig(-1, 2)


# -- representation ----------------------------------------------------------------------

def test_value_formula_and_canonical_form():
    cfg = PrecisionConfig(2, 2)
    for v in cfg.grid():
        x = FpNumber.from_value(v, cfg)
        assert x.sign * x.significand * Fraction(2) ** (x.exponent - cfg.s) == v
        # no representation of the same value has a smaller |exponent|
        for E in range(-2, 2):
            if abs(E) < abs(x.exponent):
                S = abs(v) / Fraction(2) ** (E - cfg.s)
                assert S.denominator != 1 or S > cfg.max_significand


def test_zero_is_positive():
    z = FpNumber.from_value(0, PrecisionConfig(1, 2))
    assert (z.sign, z.significand, z.exponent) == (1, 0, 0)
    assert sub(fp(1), fp(1)).sign == 1


def test_non_canonical_rejected():
    cfg = PrecisionConfig(1, 1)
    with pytest.raises(ValueError):
        FpNumber(1, 2, -1, cfg)  # 1/2 is stored with exponent 0
    with pytest.raises(ValueError):
        FpNumber(-1, 0, 0, cfg)


def test_unrepresentable_rejected():
    with pytest.raises(ValueError):
        FpNumber.from_value(Fraction(1, 8), S2)
    with pytest.raises(ValueError):
        FpNumber.from_value(4, S2)


def test_parse_forms():
    assert parse_fp("1.25", S2).value == Fraction(5, 4)
    assert parse_fp("(-5,0)", S2).value == Fraction(-5, 4)
    assert parse_fp([3, 0], S2).value == Fraction(3, 4)
    assert parse_fp("-15/4", S2).value == -S2.bound
    x = fp(Fraction(-7, 4))
    assert parse_fp(list(x.to_pair()), S2) == x


# -- rounding ------------------------------------------------------------------------------

@pytest.mark.parametrize("x,want", [(Fraction(16, 10), Fraction(3, 2)), (Fraction(1, 4), 0), (7, Fraction(3, 2))])
def test_round_examples(x, want):
    assert round_to_grid(x, S1).value == want


@pytest.mark.parametrize("cfg", SMALL, ids=str)
def test_round_matches_oracle_on_fine_lattice(cfg):
    B = cfg.bound
    step = Fraction(1, 2 ** (cfg.ulp_shift + 2))
    k = int((B + 2) / step)
    for i in range(-k, k + 1, 3 if k > 600 else 1):
        x = i * step
        assert round_to_grid(x, cfg).value == oracle_round(x, cfg), x


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(SMALL), st.fractions(min_value=-40, max_value=40, max_denominator=1000))
def test_round_matches_oracle_random(cfg, x):
    assert round_to_grid(x, cfg).value == oracle_round(x, cfg)


@pytest.mark.parametrize("cfg", [PrecisionConfig(e, s) for e in range(2) for s in range(1, 4)], ids=str)
def test_grid_points_are_fixed(cfg):
    for v in cfg.grid():
        assert round_to_grid(v, cfg).value == v


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(SMALL + [PrecisionConfig(3, 4), PrecisionConfig(0, 8)]),
       st.fractions(min_value=-300, max_value=300, max_denominator=10**6),
       st.fractions(min_value=0, max_value=5, max_denominator=10**6))
def test_rounding_laws(cfg, x, gap):
    r = round_to_grid(x, cfg)
    assert round_to_grid(r.value, cfg) == r
    assert round_to_grid(x + gap, cfg) >= r
    assert round_to_grid(-x, cfg).value == -r.value


# -- binary operations -------------------------------------------------------------------

def test_binop_examples():
    assert add(fp(1.5, S1), fp(1.5, S1)).value == Fraction(3, 2)
    assert mul(fp(0.5, S1), fp(0.5, S1)).value == 0
    with pytest.raises(DivisionByZero):
        div(fp(1.0), fp(0.0))
    assert binop_rounded("sub", fp(1), fp(-1)).value == 2


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(SMALL), st.data())
def test_binops_match_oracle(cfg, data):
    grid = grid_values(cfg.e, cfg.s)
    a = data.draw(st.sampled_from(grid))
    b = data.draw(st.sampled_from(grid))
    A, Bn = FpNumber.from_value(a, cfg), FpNumber.from_value(b, cfg)
    assert (A + Bn).value == oracle_round(a + b, cfg)
    assert (A - Bn).value == oracle_round(a - b, cfg)
    assert (A * Bn).value == oracle_round(a * b, cfg)
    if b:
        assert (A / Bn).value == oracle_round(a / b, cfg)


def test_relu_exact():
    assert relu(fp(-1.5)).value == 0
    assert relu(fp(1.25)).value == Fraction(5, 4)


# -- exp ------------------------------------------------------------------------------------

def test_exp_examples():
    assert exp_rounded(fp(0)).value == 1
    assert exp_rounded(fp(-3.75)).value == 0
    assert exp_rounded(fp(3.75)).value == Fraction(15, 4)


@pytest.mark.parametrize("cfg", [PrecisionConfig(e, s) for e in range(2) for s in range(1, 4)], ids=str)
def test_exp_matches_high_precision_oracle(cfg):
    for v in cfg.grid():
        assert exp_rounded(FpNumber.from_value(v, cfg)).value == oracle_exp(v, cfg), v


@pytest.mark.parametrize("s", range(1, 9))
def test_exp_saturates_at_bound(s):
    cfg = PrecisionConfig(0, s)
    B = FpNumber.from_value(cfg.bound, cfg)
    assert exp_rounded(-B).is_zero()
    assert exp_rounded(B) == B


# -- reductions ---------------------------------------------------------------------------

def test_sum_iter_examples():
    x = fp(0.5, S1)
    assert sum_iter([x]) == x
    assert sum_iter(vector([1.5, 1.5, -1.5], S1)).value == 0
    assert sum_iter(vector([1.5, 0.5, -0.5], S1)).value == 1
    assert sum_iter(vector([0.5, -0.5, 1.5], S1)).value == Fraction(3, 2)


def test_saturation_absorbs_same_sign():
    B = fp(S2.bound)
    for n in range(1, 8):
        assert sum_iter([B] * n) == B


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(SMALL), st.data())
def test_sum_iter_matches_oracle_fold(cfg, data):
    xs = data.draw(st.lists(st.sampled_from(grid_values(cfg.e, cfg.s)), min_size=1, max_size=8))
    assert sum_iter(vector(xs, cfg)).value == oracle_fold(xs, cfg)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=10))
def test_sum_iter_exact_without_overflow(units):
    cfg = PrecisionConfig(0, 4)
    xs = [Fraction(u, 16) for u in units]
    prefixes = [sum(xs[: i + 1]) for i in range(len(xs))]
    if all(abs(p) <= cfg.bound for p in prefixes):
        assert sum_iter(vector(xs, cfg)).value == sum(xs)


def test_inner_product_examples():
    B = S2.bound
    assert inner_rounded(vector([0, 0], S2), vector([1, -2], S2)).value == 0
    q = vector([1, 1, -1, 1], S2)
    assert inner_rounded(q, vector([B, -B, -B, -B], S2)).value == 0
    # query id 2 = (1, -1) against key id 1 = (-1, 1)
    assert inner_rounded(q, vector([-B, -B, B, -B], S2)).value == -B


def test_matmul_examples():
    v = vector([0.5, -1.25, 2], S2)
    eye = [vector([int(i == j) for j in range(3)], S2) for i in range(3)]
    col = [[x] for x in v]
    assert [r[0] for r in matmul_rounded(eye, col)] == v
    a, b = vector([1.5, 0.5], S2), vector([-0.25, 1], S2)
    assert matmul_rounded([a], [[x] for x in b])[0][0] == inner_rounded(a, b)
    # rounding each partial sum differs from one final rounding
    ones = vector([1, 1, 1], S1)
    row = vector([1.5, 0.5, -0.5], S1)
    assert matmul_rounded([row], [[x] for x in ones])[0][0].value == 1
    assert oracle_round(sum(Fraction(x.value) for x in row), S1) == Fraction(3, 2)


def test_softmax_examples():
    B2, B1 = S2.bound, S1.bound
    assert [w.value for w in softmax_rounded(vector([0, -B2, -B2], S2))] == [1, 0, 0]
    assert [w.value for w in softmax_rounded(vector([B1, B1], S1))] == [1, 1]
    with pytest.raises(DivisionByZero):
        softmax_rounded(vector([-B2, -B2], S2))


# -- vectorized kernel agrees with the scalar kernel ----------------------------------------

KERNEL_CFGS = SMALL + [PrecisionConfig(0, 8), PrecisionConfig(3, 3), PrecisionConfig(0, 20)]


def sample_grid(cfg, rng, n):
    """Random grid values drawn from (sign, significand, exponent) directly."""
    lo, hi = cfg.exponent_range
    out = []
    for _ in range(n):
        S = int(rng.integers(0, 4**cfg.s))
        E = int(rng.integers(lo, hi + 1))
        sign = 1 if rng.integers(2) else -1
        out.append(sign * S * Fraction(2) ** (E - cfg.s))
    return out


@pytest.mark.parametrize("cfg", KERNEL_CFGS, ids=str)
def test_kernel_elementwise_matches_scalar(cfg):
    kern = kernel_for(cfg)
    rng = np.random.default_rng(cfg.e * 10 + cfg.s)
    a = sample_grid(cfg, rng, 400)
    b = sample_grid(cfg, rng, 400)
    A, Bc = kern.encode(np.array(a, dtype=object)), kern.encode(np.array(b, dtype=object))
    dec = lambda codes: [Fraction(int(c), kern.one) for c in codes]  # noqa: E731
    fa = vector(a, cfg)
    fb = vector(b, cfg)
    assert dec(kern.add(A, Bc)) == [(x + y).value for x, y in zip(fa, fb)]
    assert dec(kern.mul(A, Bc)) == [(x * y).value for x, y in zip(fa, fb)]
    nz = [i for i, y in enumerate(b) if y]
    assert dec(kern.div(A[nz], Bc[nz])) == [(fa[i] / fb[i]).value for i in nz]
    assert dec(kern.exp(A[:60])) == [exp_rounded(x).value for x in fa[:60]]


@pytest.mark.parametrize("cfg", KERNEL_CFGS, ids=str)
def test_kernel_fold_and_softmax_match_scalar(cfg):
    kern = kernel_for(cfg)
    rng = np.random.default_rng(7 + cfg.s)
    rows = [sample_grid(cfg, rng, 9) for _ in range(60)]
    codes = kern.encode(np.array(rows, dtype=object))
    folded = kern.fold(codes, axis=1)
    for r, got in zip(rows, folded):
        assert Fraction(int(got), kern.one) == sum_iter(vector(r, cfg)).value
    weights, failed = kern.softmax(codes, axis=1)
    for r, w, f in zip(rows, weights, failed):
        try:
            want = [x.value for x in softmax_rounded(vector(r, cfg))]
        except DivisionByZero:
            assert f
            continue
        assert not f
        assert [Fraction(int(c), kern.one) for c in w] == want
