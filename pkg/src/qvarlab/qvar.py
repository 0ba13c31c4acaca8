"""Weighted quadratic variation, the HK estimator and convergence signatures."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GuardError, ParameterError
from .increments import DEFAULT_GUARDS, Guards, diagonal_sum, exact_moments
from .models import ProcessSpec


def weighted_qv(increments, alpha, n):
    """``2^{alpha n} * sum_k increment_k^2``.

    ``increments`` has length ``2^n`` along its last axis; a 2-D array gives
    one value per row (path).
    """
    x = np.asarray(increments, dtype=float)
    if x.shape[-1:] != (1 << n,):
        raise ParameterError(f"expected {1 << n} increments for level {n}, got shape {x.shape}")
    weight = 2.0 ** (alpha * n)
    if x.ndim == 1:
        return weight * math.fsum(x * x)
    return weight * np.sum(x * x, axis=-1)


class EstimateSource(str, enum.Enum):
    SINGLE_PATH = "single_path"
    EXACT_MEAN_PROXY = "exact_mean_proxy"


@dataclass(frozen=True)
class HkEstimate:
    level: int
    value: float
    source: EstimateSource


def _log_estimate(qsum, n):
    if n < 1:
        raise ParameterError("the estimator needs level n >= 1")
    if not qsum > 0:
        raise ParameterError("quadratic sum is zero; the input is degenerate")
    return -math.log2(qsum) / (2 * n)


def estimate_hk(increments, n) -> HkEstimate:
    """Self-similarity estimate ``-log2(sum_k increment_k^2) / (2n)`` from one path."""
    q = weighted_qv(increments, 0.0, n)
    return HkEstimate(level=n, value=_log_estimate(q, n), source=EstimateSource.SINGLE_PATH)


def estimate_hk_exact_proxy(spec: ProcessSpec, n, T=1.0, guards: Guards = DEFAULT_GUARDS) -> HkEstimate:
    """The same formula applied to ``E[sum_k increment_k^2]`` (deterministic)."""
    if not spec.is_tri:
        raise ParameterError("the HK estimator is defined for tri-fBm only")
    if n > guards.mean_level:
        raise GuardError(f"level {n} exceeds mean guard {guards.mean_level}")
    return HkEstimate(level=n, value=_log_estimate(diagonal_sum(spec, n, float(T)), n), source=EstimateSource.EXACT_MEAN_PROXY)


class Classification(str, enum.Enum):
    VANISHING = "Vanishing"
    DIVERGING = "Diverging"
    STABILIZING = "Stabilizing"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ConvergenceRule:
    """Thresholds for labelling a sequence of exact means.

    Over the last ``window`` steps: Vanishing if every step decreases and the
    means drop by at least ``factor`` overall; Diverging symmetrically;
    Stabilizing if every successive ratio lies in ``band``. A steady drift of
    ``2^{0.2}`` per level accumulates to ~1.52 over three steps, while the
    stability band can accumulate at most ``1.05^3 ~ 1.16``, so the labels
    cannot overlap at the defaults.
    """

    factor: float = 1.2
    band: tuple = (0.95, 1.05)
    window: int = 3


DEFAULT_RULE = ConvergenceRule()


def classify_means(means: Sequence[float], rule: ConvergenceRule = DEFAULT_RULE) -> Classification:
    m = np.asarray(means, dtype=float)
    if m.size < max(4, rule.window + 1):
        raise ParameterError(f"need at least {max(4, rule.window + 1)} consecutive levels, got {m.size}")
    if np.any(~np.isfinite(m)) or np.any(m <= 0):
        raise ParameterError("means must be positive and finite")
    tail = m[-(rule.window + 1) :]
    ratios = tail[1:] / tail[:-1]
    overall = tail[-1] / tail[0]
    if np.all(ratios < 1) and overall <= 1 / rule.factor:
        return Classification.VANISHING
    if np.all(ratios > 1) and overall >= rule.factor:
        return Classification.DIVERGING
    lo, hi = rule.band
    if np.all((ratios >= lo) & (ratios <= hi)):
        return Classification.STABILIZING
    return Classification.INCONCLUSIVE


@dataclass
class QvSweepResult:
    spec: ProcessSpec
    alpha: float
    levels: list
    exact_mean: list = field(default_factory=list)
    exact_var: list = field(default_factory=list)
    mc_mean: list = field(default_factory=list)
    mc_se: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    classification: Optional[Classification] = None


def classify_convergence(sweep: QvSweepResult, rule: ConvergenceRule = DEFAULT_RULE) -> Classification:
    """Label a sweep from its exact means (the trailing run of present values)."""
    means = [v for v in sweep.exact_mean if v is not None]
    if len(means) != len(sweep.exact_mean):
        # keep only the consecutive run ending at the last present level
        run = []
        for v in reversed(sweep.exact_mean):
            if v is None:
                if run:
                    break
                continue
            run.append(v)
        means = run[::-1]
    return classify_means(means, rule)


def qv_sweep(
    spec: ProcessSpec,
    alpha,
    levels,
    T=1.0,
    guards: Guards = DEFAULT_GUARDS,
    ensemble=None,
    rule: ConvergenceRule = DEFAULT_RULE,
) -> QvSweepResult:
    """Exact (and optionally Monte Carlo) statistics of ``S_n^alpha`` per level.

    Levels beyond a guard get None for the affected statistic and a note
    instead of an error. ``ensemble`` (a fine-level :class:`PathEnsemble`)
    supplies Monte Carlo columns at every level it can be coarsened to.
    """
    levels = [int(n) for n in levels]
    res = QvSweepResult(spec=spec, alpha=float(alpha), levels=levels)
    for n in levels:
        notes = []
        mean = var = None
        if n > guards.mean_level:
            notes.append(f"mean guard {guards.mean_level}")
        else:
            mp = exact_moments(spec, n, alpha, T, guards)
            mean, var = mp.mean, mp.variance
            if var is None:
                notes.append(f"variance guard {guards.variance_level}")
        mc_mean = mc_se = None
        if ensemble is not None:
            if n <= ensemble.grid.level:
                vals = weighted_qv(ensemble.coarsen(n).increments, alpha, n)
                mc_mean = float(np.mean(vals)) if vals.size else None
                mc_se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None
            else:
                notes.append(f"simulation level {ensemble.grid.level}")
        res.exact_mean.append(mean)
        res.exact_var.append(var)
        res.mc_mean.append(mc_mean)
        res.mc_se.append(mc_se)
        res.notes.append("; ".join(notes))
    try:
        res.classification = classify_convergence(res, rule)
    except ParameterError:
        res.classification = None
    return res
