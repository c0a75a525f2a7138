"""Sound interval arithmetic over scalars, vectors, and matrices.

Endpoints are finite float64 and every primitive endpoint computation is
outward-rounded (one ulp for exactly-rounded ops, two for library
transcendentals), so enclosures survive floating point. A process-wide
``set_rounding("fast")`` disables the widening; results are then unsound
and only suitable for exploratory runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Interval",
    "IntervalVector",
    "IntervalMatrix",
    "EmbeddingState",
    "IntervalError",
    "DomainError",
    "set_rounding",
    "rounding_mode",
    "pos_neg_split",
    "replace_index",
    "se_leq",
]

_SOUND = True

_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi


class IntervalError(ValueError):
    """Invalid interval construction or operation."""


class DomainError(IntervalError):
    """An interval escapes the domain of the function applied to it."""

    def __init__(self, fn: str, lo: float, hi: float):
        super().__init__(f"{fn} undefined on interval [{lo}, {hi}]")
        self.fn = fn
        self.lo = lo
        self.hi = hi


def set_rounding(mode: str) -> None:
    """Select endpoint rounding: "sound" (default) or "fast" (no widening)."""
    global _SOUND
    if mode not in ("sound", "fast"):
        raise ValueError(f"unknown rounding mode {mode!r}")
    _SOUND = mode == "sound"


def rounding_mode() -> str:
    return "sound" if _SOUND else "fast"


def _down(x):
    return np.nextafter(x, -np.inf) if _SOUND else x


def _up(x):
    return np.nextafter(x, np.inf) if _SOUND else x


def _down2(x):
    # two ulps: covers libm functions that are not correctly rounded
    return np.nextafter(np.nextafter(x, -np.inf), -np.inf) if _SOUND else x


def _up2(x):
    return np.nextafter(np.nextafter(x, np.inf), np.inf) if _SOUND else x


# ---------------------------------------------------------------------------
# vectorized kernels on (lo, hi) ndarray pairs
#
# All kernels broadcast, assume lo <= hi elementwise on inputs, and return
# outward-rounded (lo, hi) pairs. They are the single soundness-critical
# code path; everything else delegates here.
# ---------------------------------------------------------------------------

def _sum_down(a, b):
    # round the float sum toward -inf using the exact 2Sum error term
    s = a + b
    if not _SOUND:
        return s
    t = s - a
    err = (a - (s - t)) + (b - t)
    return np.where(err < 0.0, np.nextafter(s, -np.inf), s)


def _sum_up(a, b):
    s = a + b
    if not _SOUND:
        return s
    t = s - a
    err = (a - (s - t)) + (b - t)
    return np.where(err > 0.0, np.nextafter(s, np.inf), s)


def k_add(alo, ahi, blo, bhi):
    return _sum_down(alo, blo), _sum_up(ahi, bhi)


def k_sub(alo, ahi, blo, bhi):
    return _sum_down(alo, -np.asarray(bhi)), _sum_up(ahi, -np.asarray(blo))


def k_neg(alo, ahi):
    return -ahi, -alo


def k_mul(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    if not _SOUND:
        return lo, hi
    # a zero product is exact when a factor endpoint is zero; only products
    # that underflowed to zero force widening of a zero bound
    az, a_z = np.equal(alo, 0.0), np.equal(ahi, 0.0)
    bz, b_z = np.equal(blo, 0.0), np.equal(bhi, 0.0)
    dirty = (((p1 == 0.0) & ~(az | bz)) | ((p2 == 0.0) & ~(az | b_z))
             | ((p3 == 0.0) & ~(a_z | bz)) | ((p4 == 0.0) & ~(a_z | b_z)))
    lo = np.where((lo == 0.0) & ~dirty, 0.0, np.nextafter(lo, -np.inf))
    hi = np.where((hi == 0.0) & ~dirty, 0.0, np.nextafter(hi, np.inf))
    return lo, hi


def _check_no_zero(blo, bhi, fn):
    bad = (np.asarray(blo) <= 0.0) & (np.asarray(bhi) >= 0.0)
    if np.any(bad):
        i = np.argmax(bad)
        raise DomainError(fn, float(np.ravel(blo)[i]), float(np.ravel(bhi)[i]))


def k_div(alo, ahi, blo, bhi):
    _check_no_zero(blo, bhi, "divide")
    q1 = alo / blo
    q2 = alo / bhi
    q3 = ahi / blo
    q4 = ahi / bhi
    lo = np.minimum(np.minimum(q1, q2), np.minimum(q3, q4))
    hi = np.maximum(np.maximum(q1, q2), np.maximum(q3, q4))
    return _down(lo), _up(hi)


def k_reciprocal(alo, ahi):
    _check_no_zero(alo, ahi, "reciprocal")
    return _down(1.0 / ahi), _up(1.0 / alo)


def k_abs(alo, ahi):
    # exact: no rounding happens
    straddle = (alo <= 0.0) & (ahi >= 0.0)
    lo = np.where(straddle, 0.0, np.minimum(np.abs(alo), np.abs(ahi)))
    return lo, np.maximum(np.abs(alo), np.abs(ahi))


def k_relu(alo, ahi):
    return np.maximum(alo, 0.0), np.maximum(ahi, 0.0)


def k_sign(alo, ahi):
    bad = (np.asarray(alo) <= 0.0) & (np.asarray(ahi) >= 0.0)
    if np.any(bad):
        i = np.argmax(bad)
        raise DomainError("sign", float(np.ravel(alo)[i]), float(np.ravel(ahi)[i]))
    return np.sign(alo), np.sign(ahi)


def k_tanh(alo, ahi):
    lo = np.maximum(_down2(np.tanh(alo)), -1.0)
    hi = np.minimum(_up2(np.tanh(ahi)), 1.0)
    return lo, hi


def k_exp(alo, ahi):
    return np.maximum(_down2(np.exp(alo)), 0.0), _up2(np.exp(ahi))


def k_sqrt(alo, ahi):
    bad = np.asarray(alo) < 0.0
    if np.any(bad):
        i = np.argmax(bad)
        raise DomainError("sqrt", float(np.ravel(alo)[i]), float(np.ravel(ahi)[i]))
    # IEEE sqrt is correctly rounded: one ulp suffices
    return np.maximum(_down(np.sqrt(alo)), 0.0), _up(np.sqrt(ahi))


def _contains_crit(lo, hi, offset):
    # is there an integer k with lo <= offset + 2*pi*k <= hi?  The window is
    # padded by a few ulps of the argument so float division never misses a
    # critical point (padding only errs toward the conservative answer).
    pad = 8.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
    a = (lo - pad - offset) / _TWO_PI
    b = (hi + pad - offset) / _TWO_PI
    return np.floor(b) >= np.ceil(a)


def k_sin(alo, ahi):
    slo = np.sin(alo)
    shi = np.sin(ahi)
    lo = np.where(_contains_crit(alo, ahi, -_HALF_PI), -1.0,
                  _down2(np.minimum(slo, shi)))
    hi = np.where(_contains_crit(alo, ahi, _HALF_PI), 1.0,
                  _up2(np.maximum(slo, shi)))
    return np.maximum(lo, -1.0), np.minimum(hi, 1.0)


def k_cos(alo, ahi):
    clo = np.cos(alo)
    chi = np.cos(ahi)
    lo = np.where(_contains_crit(alo, ahi, math.pi), -1.0,
                  _down2(np.minimum(clo, chi)))
    hi = np.where(_contains_crit(alo, ahi, 0.0), 1.0,
                  _up2(np.maximum(clo, chi)))
    return np.maximum(lo, -1.0), np.minimum(hi, 1.0)


def k_pow_int(alo, ahi, n: int):
    if not isinstance(n, (int, np.integer)):
        raise IntervalError(f"pow exponent must be an integer, got {n!r}")
    if n == 0:
        one = np.ones_like(np.asarray(alo, dtype=float))
        return one, one.copy()
    if n == 1:
        return np.asarray(alo, dtype=float), np.asarray(ahi, dtype=float)
    if n < 0:
        lo, hi = k_pow_int(alo, ahi, -n)
        return k_reciprocal(lo, hi)
    if n % 2 == 1:
        return _down2(np.power(alo, n)), _up2(np.power(ahi, n))
    # even exponent: minimum sits at an interior zero when the interval
    # straddles it, never at an endpoint
    mlo, mhi = k_abs(alo, ahi)
    lo = np.where(mlo == 0.0, 0.0, np.maximum(_down2(np.power(mlo, n)), 0.0))
    return lo, _up2(np.power(mhi, n))


_ELEM_KERNELS = {
    "tanh": k_tanh,
    "exp": k_exp,
    "sin": k_sin,
    "cos": k_cos,
    "sqrt": k_sqrt,
    "reciprocal": k_reciprocal,
    "abs": k_abs,
    "relu": k_relu,
    "sign": k_sign,
}


def k_dot(wlo, whi, xlo, xhi):
    """Sound interval dot product along the last axis of (lo, hi) pairs."""
    plo, phi = k_mul(wlo, whi, xlo, xhi)
    p = plo.shape[-1]
    acc_lo = plo[..., 0]
    acc_hi = phi[..., 0]
    for k in range(1, p):
        acc_lo, acc_hi = k_add(acc_lo, acc_hi, plo[..., k], phi[..., k])
    return acc_lo, acc_hi


# ---------------------------------------------------------------------------
# scalar interval
# ---------------------------------------------------------------------------

def _validate(lo: float, hi: float) -> tuple[float, float]:
    lo = float(lo)
    hi = float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise IntervalError(f"interval endpoints must be finite, got [{lo}, {hi}]")
    if lo > hi:
        raise IntervalError(f"interval lower endpoint exceeds upper: [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class Interval:
    """A closed real interval [lo, hi] with finite float64 endpoints."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = _validate(self.lo, self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @staticmethod
    def thin(v: float) -> "Interval":
        return Interval(v, v)

    def width(self) -> float:
        return self.hi - self.lo

    def midpoint(self) -> float:
        m = 0.5 * (self.lo + self.hi)
        return min(max(m, self.lo), self.hi)

    def contains(self, x) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def _pair(self, other):
        if isinstance(other, Interval):
            return other.lo, other.hi
        v = float(other)
        return v, v

    def __add__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_add(self.lo, self.hi, blo, bhi)))

    __radd__ = __add__

    def __sub__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_sub(self.lo, self.hi, blo, bhi)))

    def __rsub__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_sub(blo, bhi, self.lo, self.hi)))

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_mul(self.lo, self.hi, blo, bhi)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_div(self.lo, self.hi, blo, bhi)))

    def __rtruediv__(self, other):
        blo, bhi = self._pair(other)
        return Interval(*(float(v) for v in k_div(blo, bhi, self.lo, self.hi)))

    def __pow__(self, n: int):
        return Interval(*(float(v) for v in k_pow_int(self.lo, self.hi, n)))

    def __repr__(self):
        return f"[{self.lo}, {self.hi}]"


def elem_minimal(fn: str, a: Interval, exponent: int | None = None) -> Interval:
    """Apply the tightest outward-rounded image of a primitive function.

    Supported: tanh, exp, sin, cos, sqrt, reciprocal, abs, relu, sign, and
    pow_int (pass ``exponent``).
    """
    if fn == "pow_int":
        if exponent is None:
            raise IntervalError("pow_int requires an exponent")
        return a ** exponent
    try:
        kern = _ELEM_KERNELS[fn]
    except KeyError:
        raise IntervalError(f"unknown elementary function {fn!r}") from None
    lo, hi = kern(np.float64(a.lo), np.float64(a.hi))
    return Interval(float(lo), float(hi))


# ---------------------------------------------------------------------------
# vectors and matrices of intervals
# ---------------------------------------------------------------------------

def _as_bounds(lo, hi, ndim: int):
    lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
    hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
    if lo.shape != hi.shape or lo.ndim != ndim:
        raise IntervalError(f"bound shapes {lo.shape} and {hi.shape} invalid")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise IntervalError("interval endpoints must be finite")
    if np.any(lo > hi):
        raise IntervalError("interval lower endpoint exceeds upper")
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


class IntervalVector:
    """An axis-aligned box: a vector of closed intervals."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo, hi = _as_bounds(lo, hi, 1)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __setattr__(self, name, value):
        raise AttributeError("IntervalVector is immutable")

    @staticmethod
    def from_intervals(items: Iterable[Interval]) -> "IntervalVector":
        items = list(items)
        return IntervalVector([it.lo for it in items], [it.hi for it in items])

    @staticmethod
    def thin(v) -> "IntervalVector":
        v = np.asarray(v, dtype=float)
        return IntervalVector(v, v)

    @staticmethod
    def from_center_halfwidth(c, r) -> "IntervalVector":
        c = np.asarray(c, dtype=float)
        r = np.asarray(r, dtype=float)
        return IntervalVector(c - r, c + r)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def __len__(self) -> int:
        return self.dim

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))

    def __iter__(self) -> Iterator[Interval]:
        return (self[i] for i in range(self.dim))

    def __eq__(self, other) -> bool:
        return (isinstance(other, IntervalVector)
                and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def midpoint(self) -> np.ndarray:
        return np.clip(0.5 * (self.lo + self.hi), self.lo, self.hi)

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))

    def contains(self, other: "IntervalVector") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def subset_of(self, other: "IntervalVector") -> bool:
        return other.contains(self)

    def hull(self, other: "IntervalVector") -> "IntervalVector":
        return IntervalVector(np.minimum(self.lo, other.lo),
                              np.maximum(self.hi, other.hi))

    def __add__(self, other):
        if isinstance(other, IntervalVector):
            return IntervalVector(*k_add(self.lo, self.hi, other.lo, other.hi))
        v = np.asarray(other, dtype=float)
        return IntervalVector(*k_add(self.lo, self.hi, v, v))

    def __sub__(self, other):
        if isinstance(other, IntervalVector):
            return IntervalVector(*k_sub(self.lo, self.hi, other.lo, other.hi))
        v = np.asarray(other, dtype=float)
        return IntervalVector(*k_sub(self.lo, self.hi, v, v))

    def __neg__(self):
        return IntervalVector(-self.hi, -self.lo)

    def to_embedding_state(self) -> "EmbeddingState":
        return EmbeddingState(self.lo, self.hi)

    def __repr__(self):
        parts = ", ".join(f"[{l}, {h}]" for l, h in zip(self.lo, self.hi))
        return f"IntervalVector({parts})"


class IntervalMatrix:
    """A matrix of closed intervals."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        lo, hi = _as_bounds(lo, hi, 2)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __setattr__(self, name, value):
        raise AttributeError("IntervalMatrix is immutable")

    @staticmethod
    def thin(m) -> "IntervalMatrix":
        m = np.asarray(m, dtype=float)
        return IntervalMatrix(m, m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lo.shape

    def __eq__(self, other) -> bool:
        return (isinstance(other, IntervalMatrix)
                and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __getitem__(self, ij) -> Interval:
        i, j = ij
        return Interval(float(self.lo[i, j]), float(self.hi[i, j]))

    def __add__(self, other):
        if isinstance(other, IntervalMatrix):
            return IntervalMatrix(*k_add(self.lo, self.hi, other.lo, other.hi))
        m = np.asarray(other, dtype=float)
        return IntervalMatrix(*k_add(self.lo, self.hi, m, m))

    def __neg__(self):
        return IntervalMatrix(-self.hi, -self.lo)

    def matmul(self, other: "IntervalMatrix") -> "IntervalMatrix":
        m, p = self.shape
        p2, n = other.shape
        if p != p2:
            raise IntervalError(f"matmul shape mismatch: {self.shape} x {other.shape}")
        if p == 0:
            return IntervalMatrix(np.zeros((m, n)), np.zeros((m, n)))
        acc_lo, acc_hi = k_mul(self.lo[:, 0, None], self.hi[:, 0, None],
                               other.lo[None, 0, :], other.hi[None, 0, :])
        for k in range(1, p):
            plo, phi = k_mul(self.lo[:, k, None], self.hi[:, k, None],
                             other.lo[None, k, :], other.hi[None, k, :])
            acc_lo, acc_hi = k_add(acc_lo, acc_hi, plo, phi)
        return IntervalMatrix(acc_lo, acc_hi)

    def __matmul__(self, other):
        if isinstance(other, IntervalMatrix):
            return self.matmul(other)
        if isinstance(other, IntervalVector):
            res = self.matmul(IntervalMatrix(other.lo[:, None], other.hi[:, None]))
            return IntervalVector(res.lo[:, 0], res.hi[:, 0])
        return self.matmul(IntervalMatrix.thin(other))

    def __rmatmul__(self, other):
        return IntervalMatrix.thin(other).matmul(self)

    def matvec(self, v: IntervalVector) -> IntervalVector:
        return self @ v

    def __repr__(self):
        return f"IntervalMatrix(shape={self.shape})"


def matvec_point(m: np.ndarray, x: np.ndarray) -> IntervalVector:
    """Sound enclosure of the real product M @ x for point inputs.

    Uses the standard dot-product forward error bound gamma_k * sum|m||x|,
    which is cheap enough for wide layers where the per-term interval loop
    would dominate.
    """
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    y = m @ x
    if not _SOUND:
        return IntervalVector(y, y)
    k = m.shape[1]
    u = np.finfo(float).eps / 2.0
    gamma = k * u / (1.0 - k * u)
    e = gamma * (np.abs(m) @ np.abs(x))
    lo = np.where(e == 0.0, y, _down(y - e))
    hi = np.where(e == 0.0, y, _up(y + e))
    return IntervalVector(lo, hi)


def interval_matvec_batch(m: np.ndarray, xlo, xhi):
    """Sound (lo, hi) of M @ x over boxes batched on leading axes of xlo/xhi.

    Midpoint-radius evaluation with the gamma_k dot-product error folded in;
    the heavy lifting is two BLAS products, so large sample batches stay fast.
    """
    m = np.asarray(m, dtype=float)
    xlo = np.asarray(xlo, dtype=float)
    xhi = np.asarray(xhi, dtype=float)
    if m.shape[1] == 0:
        shape = xlo.shape[:-1] + (m.shape[0],)
        return np.zeros(shape), np.zeros(shape)
    c = 0.5 * (xlo + xhi)
    yc = c @ m.T
    if not _SOUND:
        return yc.copy(), yc
    r = _up(np.maximum(xhi - c, c - xlo))
    am = np.abs(m)
    k = m.shape[1]
    u = np.finfo(float).eps / 2.0
    gamma = k * u / (1.0 - k * u)
    spread = r @ am.T
    e = _up(spread + gamma * (np.abs(c) @ am.T + spread))
    lo = np.where(e == 0.0, yc, _down(yc - e))
    hi = np.where(e == 0.0, yc, _up(yc + e))
    return lo, hi


# ---------------------------------------------------------------------------
# order-theoretic helpers
# ---------------------------------------------------------------------------

class EmbeddingState:
    """A lower/upper corner pair (an element of the nonnegative cone T^2n)."""

    __slots__ = ("lower", "upper")

    def __init__(self, lower, upper):
        lower, upper = _as_bounds(lower, upper, 1)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingState is immutable")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def to_box(self) -> IntervalVector:
        return IntervalVector(self.lower, self.upper)

    @staticmethod
    def from_box(box: IntervalVector) -> "EmbeddingState":
        return EmbeddingState(box.lo, box.hi)

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingState)
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __repr__(self):
        return f"EmbeddingState(lower={self.lower}, upper={self.upper})"


def se_leq(a: EmbeddingState, b: EmbeddingState) -> bool:
    """Southeast order on corner pairs: a <=_SE b iff [b] is nested in [a]."""
    if a.dim != b.dim:
        raise IntervalError("southeast comparison: dimension mismatch")
    return bool(np.all(a.lower <= b.lower) and np.all(b.upper <= a.upper))


def pos_neg_split(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split C = C_plus + C_minus with C_plus >= 0 >= C_minus, exactly."""
    c = np.asarray(c, dtype=float)
    c_plus = np.maximum(c, 0.0)
    return c_plus, c - c_plus


def replace_index(x: Sequence[float] | np.ndarray, i: int, y) -> np.ndarray:
    """Copy of x with entry i replaced by the i-th entry of y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise IntervalError("replace_index: shape mismatch")
    if not (0 <= i < x.shape[0]):
        raise IndexError(f"replace_index: index {i} out of range for dim {x.shape[0]}")
    out = x.copy()
    out[i] = y[i]
    return out
