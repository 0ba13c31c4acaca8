"""Closed-form covariances and structure functions.

Two families are supported:

* trifractional Brownian motion ``Z_{H,K}``, covariance
  ``t^{2HK} + s^{2HK} - (t^{2H} + s^{2H})^K`` with ``0 < H, K < 1``;
* n-th order fractional Brownian motion ``B_{H,n}`` with ``n-1 < H < n``
  (``n = 1`` is ordinary fBm).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import mpmath
import numpy as np

from .errors import ParameterError


class ProcessKind(str, enum.Enum):
    TRI = "tri"
    NTH = "nth"


@dataclass(frozen=True)
class ProcessSpec:
    """Validated description of a process.

    Use :meth:`tri`, :meth:`nth` or :meth:`fbm` rather than the raw
    constructor. Validation is strict-open, so downstream code never needs to
    re-check ranges.
    """

    kind: ProcessKind
    H: float
    K: Optional[float] = None
    order: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProcessKind(self.kind))
        object.__setattr__(self, "H", float(self.H))
        if not math.isfinite(self.H):
            raise ParameterError(f"H must be finite, got {self.H}")
        if self.kind is ProcessKind.TRI:
            if self.K is None:
                raise ParameterError("trifractional Brownian motion needs K")
            if self.order is not None:
                raise ParameterError("order is only meaningful for n-th order fBm")
            object.__setattr__(self, "K", float(self.K))
            if not 0.0 < self.H < 1.0:
                raise ParameterError(f"tri-fBm needs 0 < H < 1, got H={self.H}")
            if not 0.0 < self.K < 1.0:
                raise ParameterError(f"tri-fBm needs 0 < K < 1, got K={self.K}")
        else:
            if self.K is not None:
                raise ParameterError("K is only meaningful for tri-fBm")
            if self.order is None or int(self.order) != self.order or self.order < 1:
                raise ParameterError(f"order must be a positive integer, got {self.order!r}")
            object.__setattr__(self, "order", int(self.order))
            if not self.order - 1 < self.H < self.order:
                raise ParameterError(
                    f"n-th order fBm needs {self.order - 1} < H < {self.order}, got H={self.H}"
                )

    @classmethod
    def tri(cls, H, K):
        return cls(ProcessKind.TRI, H, K=K)

    @classmethod
    def nth(cls, H, order):
        return cls(ProcessKind.NTH, H, order=order)

    @classmethod
    def fbm(cls, H):
        return cls(ProcessKind.NTH, H, order=1)

    @property
    def is_tri(self):
        return self.kind is ProcessKind.TRI

    @property
    def self_similarity(self):
        """Index ``g`` with ``X(c t) = c^g X(t)`` in law: HK or H."""
        return self.H * self.K if self.is_tri else self.H

    def as_dict(self):
        d = {"kind": self.kind.value, "H": self.H}
        if self.is_tri:
            d["K"] = self.K
        else:
            d["order"] = self.order
        return d

    def label(self):
        if self.is_tri:
            return f"tri-fBm(H={self.H:g}, K={self.K:g})"
        return f"{self.order}-fBm(H={self.H:g})"


@dataclass(frozen=True)
class AsymptoticCoeff:
    coefficient: float
    exponent: float


def gen_binomial(x, j):
    """Generalized binomial coefficient ``x choose j`` for integer ``j >= 0``.

    Product form ``x (x-1) ... (x-j+1) / j!``; well defined for every real
    ``x`` including negative integers.
    """
    if j < 0 or int(j) != j:
        raise ParameterError(f"j must be a nonnegative integer, got {j!r}")
    out = 1.0
    for i in range(int(j)):
        out *= (x - i) / (i + 1)
    return out


def normalizing_constant(H, order):
    """``(Gamma(2H+1) |sin(pi H)|)^{-1}`` for ``order-1 < H < order``."""
    H = float(H)
    if not order - 1 < H < order:
        raise ParameterError(f"need {order - 1} < H < {order}, got H={H}")
    if H == round(H):
        raise ParameterError(f"integer H={H} makes sin(pi H) vanish")
    return 1.0 / (math.gamma(2.0 * H + 1.0) * abs(math.sin(math.pi * H)))


def _nth_coefs(spec):
    """Signed binomial weights ``(-1)^j binom(2H, j)``, j = 0..order-1."""
    two_h = 2.0 * spec.H
    return [(-1.0) ** j * gen_binomial(two_h, j) for j in range(spec.order)]


def _check_times(*xs):
    for x in xs:
        if np.any(np.asarray(x) < 0):
            raise ParameterError("times must be nonnegative")
        if not np.all(np.isfinite(np.asarray(x, dtype=float))):
            raise ParameterError("times must be finite")


def _scalar_or_array(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def covariance(spec: ProcessSpec, s, t):
    """``E[X(s) X(t)]``; accepts scalars or broadcastable arrays."""
    _check_times(s, t)
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
    out = np.zeros(s_b.shape)
    inner = (s_b > 0) & (t_b > 0)
    si, ti = s_b[inner], t_b[inner]
    H = spec.H
    if spec.is_tri:
        K = spec.K
        hk2 = 2.0 * H * K
        out[inner] = ti**hk2 + si**hk2 - (ti ** (2 * H) + si ** (2 * H)) ** K
    else:
        cst = normalizing_constant(H, spec.order)
        coefs = _nth_coefs(spec)
        acc = np.abs(ti - si) ** (2 * H)
        for j, c in enumerate(coefs):
            acc = acc - c * (ti**j * si ** (2 * H - j) + si**j * ti ** (2 * H - j))
        out[inner] = (-1.0) ** spec.order * cst / 2.0 * acc
    # 0 on the axes: the process starts at the origin
    return _scalar_or_array(out, s, t)


def pow_diff(t, s, p):
    """``t^p - s^p`` without cancellation when ``t`` is close to ``s``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    t, s = np.broadcast_arrays(t, s)
    out = np.empty(t.shape)
    zero = s == 0
    out[zero] = t[zero] ** p
    nz = ~zero
    sn, tn = s[nz], t[nz]
    with np.errstate(divide="ignore"):
        out[nz] = sn**p * np.expm1(p * np.log1p((tn - sn) / sn))
    return out


def _jensen_gap(d, K, terms=48):
    """``2 - (1-d)^K - (1+d)^K`` for ``|d| <= 1``, accurate near ``d = 0``."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape)
    small = np.abs(d) <= 0.5
    big = ~small
    db = d[big]
    out[big] = 2.0 - (1.0 - db) ** K - (1.0 + db) ** K
    d2 = d[small] ** 2
    # -2 * sum_i binom(K, 2i) d^{2i}; the even binomials are all negative
    acc = np.zeros(d2.shape)
    power = np.ones(d2.shape)
    coef = 1.0
    for i in range(1, 2 * terms + 1):
        coef *= (K - i + 1) / i
        if i % 2 == 0:
            power = power * d2
            acc += coef * power
    out[small] = -2.0 * acc
    return out


def structure_function(spec: ProcessSpec, s, t):
    """``E[(X(t) - X(s))^2]``.

    Evaluated from an algebraically regrouped closed form so that nearby
    ``s, t`` do not lose digits.
    """
    _check_times(s, t)
    s_b, t_b = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    H = spec.H
    if spec.is_tri:
        K = spec.K
        u = s_b ** (2 * H)
        v = t_b ** (2 * H)
        tot = u + v
        out = np.zeros(s_b.shape)
        pos = tot > 0
        d = pow_diff(t_b[pos], s_b[pos], 2 * H) / tot[pos]
        out[pos] = 2.0**K * (tot[pos] / 2.0) ** K * _jensen_gap(d, K) + 0.0
    else:
        cst = normalizing_constant(H, spec.order)
        coefs = _nth_coefs(spec)
        acc = np.abs(t_b - s_b) ** (2 * H)
        for j in range(1, spec.order):
            acc = acc + coefs[j] * pow_diff(t_b, s_b, j) * pow_diff(t_b, s_b, 2 * H - j)
        out = (-1.0) ** (spec.order + 1) * cst * acc
    return _scalar_or_array(out + 0.0, s, t)


def structure_function_mp(spec: ProcessSpec, s, t, dps=60):
    """Literal closed form of the structure function in ``dps``-digit arithmetic.

    Slow; intended as a high-precision reference for scalar arguments.
    """
    _check_times(s, t)
    with mpmath.workdps(dps):
        s_ = mpmath.mpf(s)
        t_ = mpmath.mpf(t)
        H = mpmath.mpf(spec.H)
        if spec.is_tri:
            K = mpmath.mpf(spec.K)
            val = 2 * (s_ ** (2 * H) + t_ ** (2 * H)) ** K - 2**K * s_ ** (2 * H * K) - 2**K * t_ ** (2 * H * K)
        else:
            n = spec.order
            cst = 1 / (mpmath.gamma(2 * H + 1) * abs(mpmath.sin(mpmath.pi * H)))
            acc = mpmath.mpf(0)
            for j in range(n):
                b = mpmath.binomial(2 * H, j)
                acc += (-1) ** j * b * (
                    t_**j * s_ ** (2 * H - j) + s_**j * t_ ** (2 * H - j) - t_ ** (2 * H) - s_ ** (2 * H)
                )
            val = (-1) ** n * cst * (acc - abs(t_ - s_) ** (2 * H))
        return float(val)


def mixed_partial_cov_tri(H, K, s, t):
    """Mixed partial ``d^2 C_{H,K} / ds dt`` for ``s, t > 0``."""
    ProcessSpec.tri(H, K)
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr <= 0) or np.any(t_arr <= 0):
        raise ParameterError("mixed partial is singular on the axes; need s, t > 0")
    out = 4.0 * K * (1.0 - K) * H**2 * (t_arr ** (2 * H) + s_arr ** (2 * H)) ** (K - 2) * (s_arr * t_arr) ** (2 * H - 1)
    return _scalar_or_array(out, s, t)


def mixed_partial_upper_bound(H, K, s, t):
    """``2^K K (1-K) H^2 (st)^{HK-1}``, dominating :func:`mixed_partial_cov_tri`."""
    st = np.asarray(s, dtype=float) * np.asarray(t, dtype=float)
    out = 2.0**K * K * (1.0 - K) * H**2 * st ** (H * K - 1.0)
    return _scalar_or_array(out, s, t)


def psi_asymptotic_coeff(H, order) -> AsymptoticCoeff:
    """Leading term of ``psi(t, t-1) ~ coefficient * t^exponent`` as t grows.

    Only defined for ``order >= 2``.
    """
    if order < 2:
        raise ParameterError("the large-t asymptotic needs order >= 2")
    ProcessSpec.nth(H, order)
    coef = normalizing_constant(H - 1.0, order - 1) * gen_binomial(2.0 * H - 3.0, order - 2)
    return AsymptoticCoeff(coefficient=coef, exponent=2.0 * H - 2.0)
