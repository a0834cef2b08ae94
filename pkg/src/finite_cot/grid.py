"""Vectorized rounded arithmetic on integer-coded grid values.

A value of F_{e,s} is stored as the integer ``value * 2**cfg.ulp_shift`` (its
count of the smallest grid step). All kernels take and return numpy integer
arrays in that coding. Arrays are ``int64`` when every intermediate provably
fits, otherwise ``object`` arrays of Python ints; both paths are exact.
"""

from __future__ import annotations

import functools
from fractions import Fraction

import numpy as np

from .fpnum import DivisionByZero, FpNumber, PrecisionConfig, exp_rounded

__all__ = ["GridKernel", "kernel_for"]


class GridKernel:
    """Rounded arithmetic for one :class:`PrecisionConfig` on coded arrays."""

    def __init__(self, cfg: PrecisionConfig):
        self.cfg = cfg
        self.shift = cfg.ulp_shift
        e_min, e_max = cfg.exponent_range
        top = cfg.max_significand
        # (step, largest magnitude) per exponent band, in grid units
        self.bands = [(1 << (E - e_min), top << (E - e_min)) for E in range(e_min, e_max + 1)]
        self.bound = self.bands[-1][1]
        self.fixed = len(self.bands) == 1
        wide = self.bound.bit_length() > 30 or self.bound.bit_length() + self.shift > 61
        self.dtype = object if wide else np.int64
        self.one = 1 << self.shift

    # -- conversions -------------------------------------------------------

    def encode(self, values) -> np.ndarray:
        """Exact conversion of FpNumbers or representable reals to codes."""
        arr = np.asarray(values, dtype=object)
        out = np.empty(arr.shape, dtype=object)
        for idx, v in np.ndenumerate(arr):
            if isinstance(v, FpNumber):
                out[idx] = v.units
            else:
                out[idx] = FpNumber.from_value(v, self.cfg).units
        return self.asarray(out)

    def decode(self, codes) -> np.ndarray:
        arr = np.asarray(codes)
        out = np.empty(arr.shape, dtype=object)
        for idx, v in np.ndenumerate(arr):
            out[idx] = self.cfg.from_units(int(v))
        return out

    def to_fractions(self, codes):
        arr = np.asarray(codes)
        out = np.empty(arr.shape, dtype=object)
        for idx, v in np.ndenumerate(arr):
            out[idx] = Fraction(int(v), 1 << self.shift)
        return out

    def asarray(self, codes) -> np.ndarray:
        return np.asarray(codes).astype(self.dtype, copy=False)

    def constant(self, value) -> int:
        return FpNumber.from_value(value, self.cfg).units

    # -- rounding ----------------------------------------------------------

    def round_ratio(self, num, den=1) -> np.ndarray:
        """Round the exact quotient ``num / den`` (in grid units) to the grid.

        ``den`` must be positive. Nearest grid point, ties to the smaller
        magnitude, saturating at the bound.
        """
        num = self.asarray(num)
        den = self.asarray(den)
        neg = num < 0
        mag = np.where(neg, -num, num)
        if self.fixed:
            q = mag // den
            r = mag - q * den
            q = q + (2 * r > den)
            res = np.minimum(q, self.bound)
        else:
            res = np.zeros(np.broadcast(mag, den).shape, dtype=mag.dtype)
            done = np.zeros(res.shape, dtype=bool)
            prev_top = 0
            for step, top in self.bands:
                here = ~done & (mag <= top * den)
                if here.any():
                    unit = den * step
                    lo = (mag // unit) * step
                    lo = np.maximum(lo, prev_top)
                    hi = -((-mag) // unit) * step
                    pick_hi = (hi * den - mag) < (mag - lo * den)
                    res = np.where(here, np.where(pick_hi, hi, lo), res)
                    done |= here
                prev_top = top
            res = np.where(done, res, self.bound)
        return np.where(neg, -res, res)

    def representable(self, codes) -> np.ndarray:
        codes = self.asarray(codes)
        mag = np.abs(codes)
        if self.fixed:
            return mag <= self.bound
        ok = np.zeros(mag.shape, dtype=bool)
        for step, top in self.bands:
            ok |= (mag <= top) & (mag % step == 0)
        return ok

    # -- elementwise ops ---------------------------------------------------

    def add(self, a, b) -> np.ndarray:
        s = self.asarray(a) + self.asarray(b)
        if self.fixed:
            return np.clip(s, -self.bound, self.bound)
        return self.round_ratio(s)

    def sub(self, a, b) -> np.ndarray:
        return self.add(a, -self.asarray(b))

    def mul(self, a, b) -> np.ndarray:
        prod = self.asarray(a) * self.asarray(b)
        if self.fixed:
            # nearest multiple of ``one``, ties toward zero, by shifting
            mag = np.abs(prod)
            q = np.minimum((mag + ((self.one - 1) >> 1)) >> self.shift, self.bound)
            return np.where(prod < 0, -q, q)
        return self.round_ratio(prod, self.one)

    def div(self, a, b) -> np.ndarray:
        """Rounded quotient; raises :class:`DivisionByZero` on any zero divisor."""
        b = self.asarray(b)
        if np.any(b == 0):
            raise DivisionByZero("rounded division by zero")
        return self._div_nonzero(a, b)

    def _div_nonzero(self, a, b):
        a = self.asarray(a)
        neg = b < 0
        return self.round_ratio(np.where(neg, -a, a) * self.one, np.where(neg, -b, b))

    def relu(self, a) -> np.ndarray:
        return np.maximum(self.asarray(a), 0)

    def exp(self, a) -> np.ndarray:
        a = self.asarray(a)
        uniq, inverse = np.unique(a, return_inverse=True)
        table = np.array([_exp_code(self.cfg, int(v)) for v in uniq.ravel()], dtype=object)
        return self.asarray(table[inverse.reshape(a.shape)])

    # -- reductions --------------------------------------------------------

    def fold(self, terms, axis=-1) -> np.ndarray:
        """Left-to-right rounded sum along ``axis``.

        When every exact prefix sum is already on the grid the fold never
        rounds, so the exact cumulative sum is returned; remaining lanes are
        folded step by step.
        """
        terms = np.moveaxis(self.asarray(terms), axis, -1)
        lead = terms.shape[:-1]
        if terms.shape[-1] == 0:
            raise ValueError("fold over an empty axis")
        terms = terms.reshape(-1, terms.shape[-1])
        prefix = np.cumsum(terms, axis=-1)
        out = prefix[:, -1].copy()
        bad = ~self.representable(prefix).all(axis=-1)
        if bad.any():
            sub = terms[bad]
            acc = sub[:, 0]
            for t in range(1, sub.shape[-1]):
                acc = self.add(acc, sub[:, t])
            out[bad] = acc
        return out.reshape(lead)

    def inner(self, x, y, axis=-1) -> np.ndarray:
        return self.fold(self.mul(x, y), axis=axis)

    def matmul(self, a, b) -> np.ndarray:
        """Rounded product of ``a`` (m, k) and ``b`` (k, n)."""
        a = self.asarray(a)
        b = self.asarray(b)
        return self.fold(self.mul(a[:, :, None], b[None, :, :]), axis=1)

    def softmax(self, scores, mask=None, axis=-1):
        """Rounded softmax along ``axis``.

        Masked-out entries contribute exact zeros (causal padding). Returns
        ``(weights, failed)`` where ``failed`` marks lanes whose denominator
        rounded to zero; their weights are zero.
        """
        scores = np.moveaxis(self.asarray(scores), axis, -1)
        num = self.exp(scores)
        if mask is not None:
            num = np.where(np.moveaxis(np.asarray(mask), axis, -1), num, 0)
        den = self.fold(num, axis=-1)
        failed = den == 0
        safe = np.where(failed, 1, den)[..., None]
        w = self._div_nonzero(num, safe)
        w = np.where(failed[..., None], 0, w)
        return np.moveaxis(self.asarray(w), -1, axis), failed


@functools.lru_cache(maxsize=1 << 18)
def _exp_code(cfg: PrecisionConfig, code: int) -> int:
    return exp_rounded(cfg.from_units(code)).units


@functools.lru_cache(maxsize=64)
def kernel_for(cfg: PrecisionConfig) -> GridKernel:
    return GridKernel(cfg)
