import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qvarlab.errors import GuardError, ParameterError
from qvarlab.increments import DyadicGrid, Guards, exact_moments
from qvarlab.models import ProcessSpec
from qvarlab.qvar import (
    Classification,
    ConvergenceRule,
    EstimateSource,
    QvSweepResult,
    classify_convergence,
    classify_means,
    estimate_hk,
    estimate_hk_exact_proxy,
    qv_sweep,
    weighted_qv,
)
from qvarlab.simulation import simulate_increments

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestWeightedQv:
    def test_zero(self):
        assert weighted_qv(np.zeros(8), 1.3, 3) == 0.0

    def test_single(self):
        assert weighted_qv(np.array([0.7]), 1.0, 0) == pytest.approx(0.49)

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            weighted_qv(np.ones(7), 1.0, 3)

    def test_rows(self):
        x = np.arange(12.0).reshape(3, 4)
        np.testing.assert_allclose(weighted_qv(x, 0.5, 2), 2.0 * np.sum(x**2, axis=1))

    @given(arrays(float, 16, elements=finite), st.floats(-2, 2), st.floats(-2, 2))
    def test_scaling_identity(self, x, alpha, beta):
        a = weighted_qv(x, alpha, 4)
        b = weighted_qv(x, beta, 4)
        assert a == pytest.approx(2.0 ** ((alpha - beta) * 4) * b, rel=1e-15, abs=0)

    @given(arrays(float, 8, elements=finite))
    def test_nonnegative(self, x):
        assert weighted_qv(x, 1.0, 3) >= 0

    @pytest.mark.slow
    def test_ensemble_mean(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        n, N = 8, 10_000
        ens = simulate_increments(spec, DyadicGrid(n), N, seed=88)
        vals = weighted_qv(ens.increments, 1.0, n)
        mp = exact_moments(spec, n, 1.0)
        assert abs(vals.mean() - mp.mean) < 4 * vals.std(ddof=1) / math.sqrt(N)


class TestEstimator:
    @pytest.mark.parametrize("n", [1, 5, 11])
    def test_equal_increments(self, n):
        est = estimate_hk(np.full(1 << n, 2.0**-n), n)
        assert est.value == pytest.approx(0.5, abs=1e-15)
        assert est.source is EstimateSource.SINGLE_PATH
        assert est.level == n

    def test_zero_sum(self):
        with pytest.raises(ParameterError):
            estimate_hk(np.zeros(4), 2)

    def test_level_zero(self):
        with pytest.raises(ParameterError):
            estimate_hk(np.ones(1), 0)

    @settings(max_examples=50)
    @given(arrays(float, 32, elements=st.floats(0.01, 10)), st.floats(0.01, 100))
    def test_shift_law(self, x, c):
        n = 5
        base = estimate_hk(x, n).value
        assert estimate_hk(c * x, n).value == pytest.approx(base - math.log2(c) / n, abs=1e-12)

    def test_proxy_example(self):
        est = estimate_hk_exact_proxy(ProcessSpec.tri(0.5, 0.5), 16)
        print(f"proxy(16) = {est.value:.5f} for HK = 0.25")
        assert est.source is EstimateSource.EXACT_MEAN_PROXY
        assert abs(est.value - 0.25) <= 0.08

    def test_proxy_increments_shrink(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        vals = [estimate_hk_exact_proxy(spec, n).value for n in range(8, 22)]
        diffs = np.abs(np.diff(vals))
        assert np.all(np.diff(diffs) < 0)

    def test_proxy_monotone_tail(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        vals = np.array([estimate_hk_exact_proxy(spec, n).value for n in range(8, 22)])
        err = np.abs(vals - spec.self_similarity)
        assert np.all(np.diff(err) < 0)

    def test_proxy_critical_case_reported(self):
        # HK = 1/2: computed, not asserted beyond being finite
        spec = ProcessSpec.tri(math.sqrt(0.5), math.sqrt(0.5))
        vals = [estimate_hk_exact_proxy(spec, n).value for n in (8, 12, 16)]
        print("HK=1/2 proxy:", vals)
        assert all(math.isfinite(v) for v in vals)

    def test_proxy_guard(self):
        with pytest.raises(GuardError):
            estimate_hk_exact_proxy(ProcessSpec.tri(0.6, 0.5), 10, guards=Guards(mean_level=9))

    def test_proxy_rejects_nth(self):
        with pytest.raises(ParameterError):
            estimate_hk_exact_proxy(ProcessSpec.nth(1.5, 2), 5)


class TestClassification:
    def test_constant(self):
        assert classify_means([1.0] * 6) is Classification.STABILIZING

    @pytest.mark.parametrize("rate,expected", [(2**-0.2, Classification.VANISHING), (2**0.2, Classification.DIVERGING), (1.01, Classification.STABILIZING)])
    def test_geometric(self, rate, expected):
        assert classify_means(rate ** np.arange(8)) is expected

    def test_inconclusive(self):
        assert classify_means([1.0, 1.0, 1.0, 1.1, 0.9, 1.1]) is Classification.INCONCLUSIVE

    def test_slow_drift_inconclusive(self):
        # 6% per level: outside the band, yet 1.06^3 ~ 1.19 is short of the 1.2 factor
        assert classify_means(1.06 ** np.arange(6)) is Classification.INCONCLUSIVE

    def test_too_few_levels(self):
        with pytest.raises(ParameterError):
            classify_means([1.0, 2.0, 3.0])

    def test_configurable(self):
        means = 1.03 ** np.arange(6)
        assert classify_means(means) is Classification.STABILIZING
        assert classify_means(means, ConvergenceRule(band=(0.99, 1.01))) is Classification.INCONCLUSIVE
        assert classify_means(means, ConvergenceRule(factor=1.05, band=(0.99, 1.01))) is Classification.DIVERGING

    def test_sweep_trailing_run(self):
        sweep = QvSweepResult(spec=ProcessSpec.tri(0.6, 0.5), alpha=1.0, levels=list(range(7)),
                              exact_mean=[None, 5.0, 1.0, 1.0, 1.0, 1.0, None])
        assert classify_convergence(sweep) is Classification.STABILIZING

    @pytest.mark.parametrize(
        "spec,alpha,expected",
        [
            (ProcessSpec.tri(0.6, 0.5), 0.4, Classification.VANISHING),
            (ProcessSpec.tri(0.6, 0.5), 0.8, Classification.DIVERGING),
            (ProcessSpec.tri(0.9, 0.8), 0.8, Classification.VANISHING),
            (ProcessSpec.tri(0.9, 0.8), 1.2, Classification.DIVERGING),
            (ProcessSpec.nth(2.5, 3), 0.8, Classification.VANISHING),
            (ProcessSpec.nth(2.5, 3), 1.2, Classification.DIVERGING),
            (ProcessSpec.nth(1.5, 2), 0.8, Classification.VANISHING),
        ],
        ids=["tri.3-a.4", "tri.3-a.8", "tri.72-a.8", "tri.72-a1.2", "3fbm-a.8", "3fbm-a1.2", "2fbm-a.8"],
    )
    def test_exact_signatures(self, spec, alpha, expected):
        res = qv_sweep(spec, alpha, range(10, 17), guards=Guards(variance_level=0))
        assert res.classification is expected

    @pytest.mark.parametrize("spec", [ProcessSpec.tri(0.9, 0.8), ProcessSpec.nth(2.5, 3)], ids=["tri", "3-fBm"])
    def test_alpha_one_stable(self, spec):
        res = qv_sweep(spec, 1.0, range(10, 17), guards=Guards(variance_level=0))
        assert res.classification is Classification.STABILIZING

    def test_horizon_invariant(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        for alpha in (0.4, 0.8):
            a = qv_sweep(spec, alpha, range(10, 17), T=1.0, guards=Guards(variance_level=0)).classification
            b = qv_sweep(spec, alpha, range(10, 17), T=2.0, guards=Guards(variance_level=0)).classification
            assert a is b


class TestQvSweep:
    def test_guard_notes(self):
        res = qv_sweep(ProcessSpec.tri(0.6, 0.5), 1.0, [3, 4, 5], guards=Guards(mean_level=4, variance_level=3))
        assert res.exact_var[0] is not None
        assert res.exact_var[1] is None and "variance guard" in res.notes[1]
        assert res.exact_mean[2] is None and "mean guard" in res.notes[2]
        assert res.classification is None

    def test_monte_carlo_columns(self):
        spec = ProcessSpec.nth(1.5, 2)
        ens = simulate_increments(spec, DyadicGrid(5), 2000, seed=4)
        res = qv_sweep(spec, 1.0, range(0, 7), ensemble=ens)
        assert res.mc_mean[6] is None and "simulation level" in res.notes[6]
        for i in range(6):
            assert abs(res.mc_mean[i] - res.exact_mean[i]) < 5 * res.mc_se[i]

    def test_tri_above_half_variance_stays_positive(self):
        spec = ProcessSpec.tri(0.9, 0.8)
        res = qv_sweep(spec, 1.0, range(4, 12))
        v = np.array(res.exact_var)
        assert v.min() > 0.1 * v.max()
