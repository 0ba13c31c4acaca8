"""Exact covariances of dyadic increments and the statistics built on them.

``phi^{(m,n)}_{j,k}`` is the covariance of the j-th level-m increment with the
k-th level-n increment of a process on ``[0, T]``. Everything here is exact
(no sampling): first and second moments of the weighted quadratic variation
follow from Isserlis' theorem, and the double sequence ``a_{m,n}`` is a
weighted sum of squared cross covariances.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import GuardError, ParameterError
from .models import ProcessSpec, _nth_coefs, covariance, normalizing_constant, pow_diff, structure_function


@dataclass(frozen=True)
class Guards:
    """Feasibility limits; defaults keep each call under a minute on a laptop."""

    mean_level: int = 22
    variance_level: int = 13
    double_sum: int = 20
    matrix_level: int = 12
    simulation_level: int = 11


DEFAULT_GUARDS = Guards()


@dataclass(frozen=True)
class DyadicGrid:
    level: int
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 0:
            raise ParameterError(f"level must be a nonnegative integer, got {self.level!r}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ParameterError(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def size(self):
        """Number of increments, ``2^level``."""
        return 1 << self.level

    def points(self):
        return np.arange(self.size + 1) * (self.horizon / self.size)


@dataclass(frozen=True)
class CrossIncrementMatrix:
    spec: ProcessSpec
    levels: tuple
    horizon: float
    entries: np.ndarray = field(repr=False)

    def entry(self, j, k):
        """1-based access matching ``phi^{(m,n)}_{j,k}``."""
        return float(self.entries[j - 1, k - 1])


@dataclass(frozen=True)
class MomentPair:
    mean: float
    variance: Optional[float]
    level: int
    alpha: float

    @property
    def mean_only(self):
        return self.variance is None


class Scheme(str, enum.Enum):
    UNIT = "unit"
    SELF_SIMILAR = "self_similar"


@dataclass(frozen=True)
class DoubleSequenceTable:
    """``a_{m,n}`` for ``m, n <= max_level``; NaN where ``m + n`` exceeds the guard."""

    spec: ProcessSpec
    scheme: Scheme
    horizon: float
    entries: np.ndarray = field(repr=False)

    @property
    def max_level(self):
        return self.entries.shape[0] - 1

    def diagonal(self):
        d = np.diag(self.entries)
        return d[np.isfinite(d)]

    def row(self, n_fixed):
        """``a_{m, n_fixed}`` over the computed ``m``."""
        col = self.entries[:, n_fixed]
        return col[np.isfinite(col)]


# ---------------------------------------------------------------------------
# single entries (direct four-term covariance combination)
# ---------------------------------------------------------------------------


def phi(spec: ProcessSpec, m, n, j, k, T=1.0):
    """``phi^{(m,n)}_{j,k}`` from four covariance evaluations.

    This is the literal definition, summed exactly with :func:`math.fsum`. The
    matrix routines use regrouped kernels instead and are checked against it.
    """
    if not (1 <= j <= (1 << m) and 1 <= k <= (1 << n)):
        raise ParameterError(f"need 1 <= j <= 2^{m} and 1 <= k <= 2^{n}, got j={j}, k={k}")
    s1, s0 = j * T / 2**m, (j - 1) * T / 2**m
    t1, t0 = k * T / 2**n, (k - 1) * T / 2**n
    return math.fsum(
        [
            covariance(spec, s1, t1),
            covariance(spec, s0, t0),
            -covariance(spec, s1, t0),
            -covariance(spec, s0, t1),
        ]
    )


# ---------------------------------------------------------------------------
# kernel plumbing
# ---------------------------------------------------------------------------


def _tri_args(spec, m, n, T):
    a = DyadicGrid(m, T).points()
    b = DyadicGrid(n, T).points()
    two_h = 2 * spec.H
    da = pow_diff(a[1:], a[:-1], two_h)
    db = pow_diff(b[1:], b[:-1], two_h)
    return a**two_h, b**two_h, da, db, spec.K


def _nth_args(spec, m, n, T):
    L = max(m, n)
    h = T / 2**L
    E = (np.arange((1 << L) + 1) * h) ** (2 * spec.H)
    a = DyadicGrid(m, T).points()
    b = DyadicGrid(n, T).points()
    q = spec.order - 1
    two_h = 2 * spec.H

    def diffs(x):
        lo = np.empty((q, x.size - 1))
        hi = np.empty((q, x.size - 1))
        for i in range(1, q + 1):
            lo[i - 1] = pow_diff(x[1:], x[:-1], i)
            hi[i - 1] = pow_diff(x[1:], x[:-1], two_h - i)
        return lo, hi

    dal, dah = diffs(a)
    dbl, dbh = diffs(b)
    coef = np.array(_nth_coefs(spec)[1:], dtype=float)
    scale = (-1.0) ** spec.order * normalizing_constant(spec.H, spec.order) / 2.0
    return (1 << (L - m), 1 << (L - n), 1 << m, 1 << n, E, dal, dah, dbl, dbh, coef, scale)


def _block(spec, m, n, T):
    out = np.empty((1 << m, 1 << n))
    if spec.is_tri:
        kernels.tri_block(*_tri_args(spec, m, n, T), out)
    else:
        kernels.nth_block(*_nth_args(spec, m, n, T), out)
    return out


@functools.lru_cache(maxsize=512)
def sum_sq_phi(spec: ProcessSpec, m, n, T=1.0):
    """``sum_{j,k} (phi^{(m,n)}_{j,k})^2`` with compensated row sums."""
    if m < n:
        m, n = n, m  # symmetric; put the finer grid on the rows
    rows = np.empty(1 << m)
    if spec.is_tri:
        kernels.tri_rowsq(*_tri_args(spec, m, n, T), rows)
    else:
        kernels.nth_rowsq(*_nth_args(spec, m, n, T), rows)
    return math.fsum(rows)


def phi_matrix(spec: ProcessSpec, m, n, T=1.0, guards: Guards = DEFAULT_GUARDS) -> CrossIncrementMatrix:
    """All ``phi^{(m,n)}_{j,k}`` as a ``2^m x 2^n`` array."""
    if max(m, n) > guards.matrix_level:
        raise GuardError(f"level {max(m, n)} exceeds matrix guard {guards.matrix_level}")
    if min(m, n) < 0:
        raise ParameterError("levels must be nonnegative")
    entries = _block(spec, m, n, float(T))
    entries.setflags(write=False)
    return CrossIncrementMatrix(spec=spec, levels=(m, n), horizon=float(T), entries=entries)


def diagonal_phi(spec: ProcessSpec, n, T=1.0):
    """``phi^{(n)}_{k,k}``, k = 1..2^n, i.e. increment variances."""
    t = DyadicGrid(n, T).points()
    return structure_function(spec, t[:-1], t[1:])


@functools.lru_cache(maxsize=512)
def diagonal_sum(spec: ProcessSpec, n, T=1.0):
    return math.fsum(diagonal_phi(spec, n, T))


def exact_moments(spec: ProcessSpec, n, alpha, T=1.0, guards: Guards = DEFAULT_GUARDS) -> MomentPair:
    """Mean and variance of ``S_n^alpha = 2^{alpha n} sum_k (increment_k)^2``.

    Past ``guards.variance_level`` only the mean is returned (``variance`` is
    None); past ``guards.mean_level`` a :class:`GuardError` is raised.
    """
    if n < 0:
        raise ParameterError("level must be nonnegative")
    if n > guards.mean_level:
        raise GuardError(f"level {n} exceeds mean guard {guards.mean_level}")
    T = float(T)
    mean = 2.0 ** (alpha * n) * diagonal_sum(spec, n, T)
    variance = None
    if n <= guards.variance_level:
        variance = 2.0 ** (2 * alpha * n + 1) * sum_sq_phi(spec, n, n, T)
    return MomentPair(mean=mean, variance=variance, level=n, alpha=float(alpha))


def double_sequence(
    spec: ProcessSpec, max_level, scheme=Scheme.UNIT, T=1.0, guards: Guards = DEFAULT_GUARDS
) -> DoubleSequenceTable:
    """Table of ``a_{m,n} = w^{m+n} sum_{j,k} (phi^{(m,n)}_{j,k})^2``.

    The weight is ``w = 2`` for ``Scheme.UNIT`` and ``w = 2^{2g}`` (``g`` the
    self-similarity index) for ``Scheme.SELF_SIMILAR``. Entries with
    ``m + n > guards.double_sum`` are not computed.
    """
    scheme = Scheme(scheme)
    if max_level < 0:
        raise ParameterError("max_level must be nonnegative")
    if max_level > guards.double_sum:
        raise GuardError(f"max_level {max_level} exceeds double-sum guard {guards.double_sum}")
    rate = 1.0 if scheme is Scheme.UNIT else 2.0 * spec.self_similarity
    T = float(T)
    out = np.full((max_level + 1, max_level + 1), np.nan)
    for m in range(max_level + 1):
        for n in range(m, max_level + 1):
            if m + n > guards.double_sum:
                continue
            out[m, n] = out[n, m] = 2.0 ** (rate * (m + n)) * sum_sq_phi(spec, m, n, T)
    out.setflags(write=False)
    return DoubleSequenceTable(spec=spec, scheme=scheme, horizon=T, entries=out)


# ---------------------------------------------------------------------------
# upper bounds for the tri-fBm increment covariances
# ---------------------------------------------------------------------------

BOUND_IDS = ("2d", "2d_var", "1d>", "1d2")


@dataclass(frozen=True)
class TriBoundReport:
    """Right-hand sides of the four tri-fBm increment bounds at one cell.

    ``bounds`` maps a bound id to its value, or to None where the bound's index
    conditions do not hold. ``"2d_var"`` is the ``H >= 1/2`` or ``H < 1/2``
    variant, recorded in ``variant``.
    """

    H: float
    K: float
    m: int
    n: int
    j: int
    k: int
    phi: float
    bounds: dict
    variant: str

    @property
    def applicable(self):
        return {b: v is not None for b, v in self.bounds.items()}

    def violations(self, rel_tol=1e-12):
        return [b for b, v in self.bounds.items() if v is not None and v - self.phi < -rel_tol * abs(v)]


def bound_constants(H, K):
    return {
        "L1": 2.0**K * (1.0 - K) * K * H**2,
        "L2": 4.0 * K * (1.0 - K) * H**2,
        "L3": 2.0 * H * K * (1.0 - K),
    }


def tri_bound_arrays(H, K, m, n, T=1.0):
    """Bounds on the full ``2^m x 2^n`` index grid; NaN where not applicable.

    Scaled by ``T^{2HK}`` so they apply on ``[0, T]`` (covariance homogeneity).
    """
    ProcessSpec.tri(H, K)
    c = bound_constants(H, K)
    hk = H * K
    j = np.arange(1, (1 << m) + 1, dtype=float)[:, None]
    k = np.arange(1, (1 << n) + 1, dtype=float)[None, :]
    jm1, km1 = j - 1.0, k - 1.0
    both = (j > 1) & (k > 1)
    first_row = (j == 1) & (k > 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        b2d = c["L1"] * 2.0 ** (-(n + m) * hk) * km1 ** (hk - 1) * jm1 ** (hk - 1)
        left = jm1 ** (2 * hk - 4 * H) / 2.0 ** (2 * H * n + (2 * hk - 2 * H) * m)
        right = km1 ** (2 * hk - 4 * H) / 2.0 ** (2 * H * m + (2 * hk - 2 * H) * n)
        if H >= 0.5:
            pref = (j * k) ** (2 * H - 1)
            variant = "2d1"
        else:
            pref = (jm1 * km1) ** (2 * H - 1)
            variant = "2d2"
        b2dv = c["L2"] * pref * np.minimum(left, right)
        b1g = c["L3"] * km1 ** (2 * hk - 1 - 2 * H) * 2.0 ** (-2 * H * m + (2 * H - 2 * hk) * n)
        b12 = 2 * hk * km1 ** (2 * hk - 1) * 2.0 ** (-2 * hk * n)
    scale = T ** (2 * hk)
    shape = (1 << m, 1 << n)
    out = {
        "2d": np.where(both, b2d, np.nan),
        "2d_var": np.where(both, b2dv, np.nan),
        "1d>": np.where(first_row, b1g, np.nan),
        "1d2": np.where(first_row, b12, np.nan),
    }
    return {key: np.broadcast_to(v, shape) * scale for key, v in out.items()}, variant


def tri_bounds(H, K, m, n, j, k, T=1.0) -> TriBoundReport:
    spec = ProcessSpec.tri(H, K)
    value = phi(spec, m, n, j, k, T)
    arrays, variant = tri_bound_arrays(H, K, m, n, T)
    bounds = {}
    for key in BOUND_IDS:
        v = arrays[key][j - 1, k - 1]
        bounds[key] = None if np.isnan(v) else float(v)
    return TriBoundReport(H=float(H), K=float(K), m=m, n=n, j=j, k=k, phi=value, bounds=bounds, variant=variant)


@dataclass
class BoundCheck:
    """Outcome of checking one bound on one ``(H, K, m, n)`` block."""

    H: float
    K: float
    m: int
    n: int
    bound_id: str
    checked: int
    violations: int
    # cell with the smallest relative slack
    j: int
    k: int
    phi: float
    bound: float
    slack: float


def verify_tri_bounds(H, K, m, n, T=1.0, rel_tol=1e-12):
    """Check every applicable bound against the exact block; one record per bound."""
    spec = ProcessSpec.tri(H, K)
    block = _block(spec, m, n, float(T))
    arrays, variant = tri_bound_arrays(H, K, m, n, T)
    out = []
    for key in BOUND_IDS:
        bnd = arrays[key]
        mask = ~np.isnan(bnd)
        if not mask.any():
            continue
        slack = np.where(mask, bnd - block, np.inf)
        rel = np.where(mask, slack / np.abs(np.where(mask, bnd, 1.0)), np.inf)
        viol = int(np.count_nonzero(slack[mask] < -rel_tol * np.abs(bnd[mask])))
        jj, kk = np.unravel_index(np.argmin(rel), rel.shape)
        out.append(
            BoundCheck(
                H=float(H), K=float(K), m=m, n=n,
                bound_id=variant if key == "2d_var" else key,
                checked=int(mask.sum()), violations=viol,
                j=int(jj) + 1, k=int(kk) + 1,
                phi=float(block[jj, kk]), bound=float(bnd[jj, kk]), slack=float(slack[jj, kk]),
            )
        )
    return out
