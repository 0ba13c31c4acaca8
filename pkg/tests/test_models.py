import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvarlab.errors import ParameterError
from qvarlab.models import (
    ProcessSpec,
    covariance,
    gen_binomial,
    mixed_partial_cov_tri,
    mixed_partial_upper_bound,
    normalizing_constant,
    pow_diff,
    psi_asymptotic_coeff,
    structure_function,
    structure_function_mp,
)

unit_open = st.floats(0.05, 0.95)
times = st.floats(0.01, 2.0)


@st.composite
def specs(draw):
    if draw(st.booleans()):
        return ProcessSpec.tri(draw(unit_open), draw(unit_open))
    order = draw(st.integers(1, 3))
    return ProcessSpec.nth(order - 1 + draw(unit_open), order)


def cov_mp(spec, s, t, dps=50):
    """Literal covariance formula in extended precision."""
    with mpmath.workdps(dps):
        s, t, H = mpmath.mpf(s), mpmath.mpf(t), mpmath.mpf(spec.H)
        if s == 0 or t == 0:
            return mpmath.mpf(0)
        if spec.is_tri:
            K = mpmath.mpf(spec.K)
            return t ** (2 * H * K) + s ** (2 * H * K) - (t ** (2 * H) + s ** (2 * H)) ** K
        n = spec.order
        c = 1 / (mpmath.gamma(2 * H + 1) * abs(mpmath.sin(mpmath.pi * H)))
        acc = abs(t - s) ** (2 * H)
        for j in range(n):
            acc -= (-1) ** j * mpmath.binomial(2 * H, j) * (t**j * s ** (2 * H - j) + s**j * t ** (2 * H - j))
        return (-1) ** n * c / 2 * acc


def fd_mixed(spec, s, t, h=1e-4):
    """Central difference of the covariance in both arguments."""
    with mpmath.workdps(40):
        h = mpmath.mpf(h)
        s, t = mpmath.mpf(s), mpmath.mpf(t)
        num = cov_mp(spec, s + h, t + h) - cov_mp(spec, s + h, t - h) - cov_mp(spec, s - h, t + h) + cov_mp(spec, s - h, t - h)
        return float(num / (4 * h * h))


class TestProcessSpec:
    @pytest.mark.parametrize("H,K", [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (-0.1, 0.5), (0.5, None)])
    def test_tri_rejects_boundary(self, H, K):
        with pytest.raises(ParameterError):
            ProcessSpec.tri(H, K)

    @pytest.mark.parametrize("H,order", [(1.0, 2), (2.0, 2), (0.5, 2), (2.5, 2), (1.0, 1), (1.5, 0)])
    def test_nth_rejects_out_of_range(self, H, order):
        with pytest.raises(ParameterError):
            ProcessSpec.nth(H, order)

    def test_self_similarity(self):
        assert ProcessSpec.tri(0.6, 0.5).self_similarity == pytest.approx(0.3)
        assert ProcessSpec.nth(2.5, 3).self_similarity == 2.5
        assert ProcessSpec.fbm(0.3).order == 1

    def test_frozen(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        with pytest.raises(Exception):
            spec.H = 0.7


class TestSpecialFunctions:
    @pytest.mark.parametrize("x,j,expected", [(1.7, 0, 1.0), (3.0, 1, 3.0), (2.6, 2, 2.08), (-1.0, 3, -1.0), (5.0, 7, 0.0)])
    def test_gen_binomial(self, x, j, expected):
        assert gen_binomial(x, j) == pytest.approx(expected, rel=1e-15, abs=1e-15)

    @given(st.floats(-5, 5), st.integers(0, 8))
    def test_gen_binomial_matches_mpmath(self, x, j):
        assert gen_binomial(x, j) == pytest.approx(float(mpmath.binomial(x, j)), rel=1e-12, abs=1e-12)

    def test_gen_binomial_negative_j(self):
        with pytest.raises(ParameterError):
            gen_binomial(1.0, -1)

    @pytest.mark.parametrize("H,order,expected", [(0.5, 1, 1.0), (1.5, 2, 1.0 / 6.0)])
    def test_normalizing_constant(self, H, order, expected):
        assert normalizing_constant(H, order) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("H,order", [(1.0, 2), (1.0, 1), (2.0, 3)])
    def test_normalizing_constant_rejects_integer(self, H, order):
        with pytest.raises(ParameterError):
            normalizing_constant(H, order)

    @given(st.floats(0.01, 0.99), st.integers(1, 4))
    def test_normalizing_constant_vs_mpmath(self, frac, order):
        H = order - 1 + frac
        ref = 1 / (mpmath.gamma(2 * H + 1) * abs(mpmath.sin(mpmath.pi * H)))
        assert normalizing_constant(H, order) == pytest.approx(float(ref), rel=1e-13)

    @given(st.floats(0.5, 3.0), st.floats(1e-9, 0.5), st.floats(-1.5, 3.5).filter(lambda p: abs(p) > 1e-6))
    def test_pow_diff(self, s, rel_gap, p):
        t = s * (1 + rel_gap)
        with mpmath.workdps(50):
            ref = mpmath.mpf(t) ** p - mpmath.mpf(s) ** p
        assert float(pow_diff(t, s, p)) == pytest.approx(float(ref), rel=1e-12, abs=1e-300)


class TestCovariance:
    @pytest.mark.parametrize("K", [0.2, 0.5, 0.8])
    def test_tri_unit(self, K):
        assert covariance(ProcessSpec.tri(0.6, K), 1.0, 1.0) == pytest.approx(2 - 2**K, rel=1e-14)

    def test_nth_unit(self):
        # C_H^2 (2H - 1) = 2/6
        assert covariance(ProcessSpec.nth(1.5, 2), 1.0, 1.0) == pytest.approx(1.0 / 3.0, rel=1e-14)

    @pytest.mark.parametrize("spec", [ProcessSpec.tri(0.6, 0.5), ProcessSpec.nth(1.5, 2), ProcessSpec.nth(2.5, 3), ProcessSpec.fbm(0.3)])
    def test_zero_on_axes(self, spec):
        assert covariance(spec, 0.0, 1.0) == 0.0
        assert covariance(spec, 1.0, 0.0) == 0.0
        assert covariance(spec, 0.0, 0.0) == 0.0

    def test_negative_time_rejected(self):
        with pytest.raises(ParameterError):
            covariance(ProcessSpec.tri(0.6, 0.5), -0.1, 1.0)
        with pytest.raises(ParameterError):
            structure_function(ProcessSpec.nth(1.5, 2), 1.0, -1.0)

    def test_vectorized(self):
        spec = ProcessSpec.tri(0.6, 0.5)
        s = np.linspace(0, 2, 7)
        out = covariance(spec, s[:, None], s[None, :])
        assert out.shape == (7, 7)
        assert out[2, 5] == covariance(spec, s[2], s[5])

    @settings(max_examples=200)
    @given(specs(), times, times)
    def test_symmetric(self, spec, s, t):
        assert covariance(spec, s, t) == covariance(spec, t, s)

    @settings(max_examples=200)
    @given(specs(), times, times, st.sampled_from([0.5, 2.0, 3.0]))
    def test_self_similar(self, spec, s, t, lam):
        base = covariance(spec, s, t)
        scaled = covariance(spec, lam * s, lam * t)
        assert scaled == pytest.approx(lam ** (2 * spec.self_similarity) * base, rel=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(specs(), times, times)
    def test_matches_extended_precision(self, spec, s, t):
        assert covariance(spec, s, t) == pytest.approx(float(cov_mp(spec, s, t)), rel=1e-10)


class TestStructureFunction:
    def test_tri_origin(self):
        K = 0.35
        spec = ProcessSpec.tri(0.6, K)
        assert structure_function(spec, 0.0, 1.0) == pytest.approx(2 - 2**K, rel=1e-14)
        assert structure_function(spec, 0.0, 1.0) == pytest.approx(covariance(spec, 1.0, 1.0), rel=1e-14)

    @pytest.mark.parametrize("spec", [ProcessSpec.tri(0.6, 0.5), ProcessSpec.nth(1.5, 2), ProcessSpec.fbm(0.7)])
    def test_diagonal_zero(self, spec):
        assert structure_function(spec, 0.8, 0.8) == 0.0

    def test_nth_four_term_oracle(self):
        spec = ProcessSpec.nth(1.5, 2)
        oracle = covariance(spec, 1, 1) + covariance(spec, 2, 2) - 2 * covariance(spec, 1, 2)
        assert structure_function(spec, 1.0, 2.0) == pytest.approx(oracle, rel=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(specs(), times, times)
    def test_covariance_identity(self, spec, s, t):
        """psi = C(s,s) + C(t,t) - 2C(s,t), the right side in extended precision."""
        with mpmath.workdps(50):
            rhs = cov_mp(spec, s, s) + cov_mp(spec, t, t) - 2 * cov_mp(spec, s, t)
        assert structure_function(spec, s, t) == pytest.approx(float(rhs), rel=1e-10, abs=1e-40)

    @settings(max_examples=200)
    @given(specs(), times, times)
    def test_covariance_identity_double(self, spec, s, t):
        # in plain doubles the right side cancels; compare on the operand scale
        css, ctt = covariance(spec, s, s), covariance(spec, t, t)
        rhs = css + ctt - 2 * covariance(spec, s, t)
        assert abs(structure_function(spec, s, t) - rhs) <= 1e-10 * (css + ctt)

    @settings(max_examples=200)
    @given(specs(), times, times)
    def test_nonnegative(self, spec, s, t):
        assert structure_function(spec, s, t) >= 0.0

    @given(unit_open, times, times)
    def test_fbm_reduction(self, H, s, t):
        spec = ProcessSpec.fbm(H)
        expected = normalizing_constant(H, 1) * abs(t - s) ** (2 * H)
        assert structure_function(spec, s, t) == pytest.approx(expected, rel=1e-12, abs=1e-300)

    def test_close_points(self):
        spec = ProcessSpec.tri(0.7, 0.8)
        s, t = 1.0, 1.0001
        assert structure_function(spec, s, t) == pytest.approx(structure_function_mp(spec, s, t), rel=1e-12)


class TestMixedPartial:
    def test_example(self):
        assert mixed_partial_cov_tri(0.5, 0.5, 1.0, 1.0) == pytest.approx(0.25 * 2**-1.5, rel=1e-14)

    @pytest.mark.parametrize("s,t", [(0.0, 1.0), (1.0, 0.0)])
    def test_axes_rejected(self, s, t):
        with pytest.raises(ParameterError):
            mixed_partial_cov_tri(0.5, 0.5, s, t)

    @settings(max_examples=100, deadline=None)
    @given(unit_open, unit_open, st.floats(0.1, 2.0), st.floats(0.1, 2.0))
    def test_finite_differences(self, H, K, s, t):
        # extended precision removes the eps * C / h^2 roundoff floor, which
        # for small H exceeds 1e-5 of the derivative itself
        assert mixed_partial_cov_tri(H, K, s, t) == pytest.approx(fd_mixed(ProcessSpec.tri(H, K), s, t), rel=1e-5)

    @given(unit_open, unit_open, st.floats(1e-3, 10.0), st.floats(1e-3, 10.0))
    def test_positive_and_bounded(self, H, K, s, t):
        v = mixed_partial_cov_tri(H, K, s, t)
        assert v > 0
        assert v <= mixed_partial_upper_bound(H, K, s, t) * (1 + 1e-12)


class TestAsymptotics:
    def test_order_two_example(self):
        c = psi_asymptotic_coeff(1.5, 2)
        assert c.coefficient == pytest.approx(1.0, rel=1e-14)
        assert c.exponent == pytest.approx(1.0)

    def test_order_two_has_trivial_binomial(self):
        H = 1.3
        assert psi_asymptotic_coeff(H, 2).coefficient == pytest.approx(normalizing_constant(H - 1, 1), rel=1e-15)

    def test_rejects_order_one(self):
        with pytest.raises(ParameterError):
            psi_asymptotic_coeff(0.5, 1)

    @pytest.mark.parametrize("H,order", [(1.2, 2), (1.5, 2), (1.9, 2), (2.3, 3), (2.5, 3), (2.8, 3), (3.4, 4)])
    def test_coefficient_positive(self, H, order):
        assert psi_asymptotic_coeff(H, order).coefficient > 0

    @pytest.mark.parametrize("H,order", [(1.3, 2), (1.7, 2), (2.5, 3)])
    def test_ratio_at_1000(self, H, order):
        spec = ProcessSpec.nth(H, order)
        c = psi_asymptotic_coeff(H, order)
        t = 1000.0
        lead = c.coefficient * t**c.exponent
        ratio_hp = structure_function_mp(spec, t - 1, t) / lead
        ratio_dbl = structure_function(spec, t - 1, t) / lead
        print(f"H={H} order={order}: ratio {ratio_hp:.6f} (double {ratio_dbl:.6f})")
        assert abs(ratio_hp - 1) < 0.02
        assert ratio_dbl == pytest.approx(ratio_hp, rel=1e-10)

    def test_ratio_approaches_one(self):
        spec = ProcessSpec.nth(1.3, 2)
        c = psi_asymptotic_coeff(1.3, 2)
        errs = [abs(structure_function_mp(spec, t - 1, t) / (c.coefficient * t**c.exponent) - 1) for t in (10, 100, 1000, 10000)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
