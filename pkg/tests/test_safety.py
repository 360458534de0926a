"""Tests for clearance moments and the one-sided concentration bound."""

import math

import numpy as np
import pytest

from uavplan.moments.dynamics import MomentVector, moments_from_point_state, monomial_averages
from uavplan.safety import (
    ClearanceMoments,
    SafetyEvalResult,
    clearance_gradients,
    clearance_moments,
    clearance_profile,
    expected_f,
    expected_f_squared,
    vp_bound,
)


class TestExpectedF:
    def test_separated_point_masses(self):
        m_a = moments_from_point_state(0.0, 0.0, 0.0, 0.0)
        m_b = moments_from_point_state(20.0, 0.0, 0.0, 0.0)
        assert expected_f(m_a, m_b, 10.0) == 300.0

    def test_identical_point_masses(self):
        m = moments_from_point_state(3.0, -1.0, 2.0, 0.5)
        assert expected_f(m, m, 0.0) == 0.0

    def test_exactly_at_clearance_radius(self):
        m_a = moments_from_point_state(0.0, 0.0, 0.0, 0.0)
        m_b = moments_from_point_state(10.0, 0.0, 0.0, 0.0)
        assert expected_f(m_a, m_b, 10.0) == 0.0

    def test_step_mismatch_rejected(self):
        m_a = moments_from_point_state(0.0, 0.0, 0.0, 0.0)
        m_b = MomentVector(values=m_a.values, time_step=3)
        with pytest.raises(ValueError):
            expected_f(m_a, m_b, 10.0)


class TestExpectedFSquared:
    def test_point_mass_equals_squared_mean(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            pa, pb = rng.uniform(-20, 20, 3), rng.uniform(-20, 20, 3)
            d_min = rng.uniform(0.5, 15.0)
            m_a = moments_from_point_state(*pa, 0.3)
            m_b = moments_from_point_state(*pb, -0.8)
            e_f = expected_f(m_a, m_b, d_min)
            e_f2 = expected_f_squared(m_a, m_b, d_min)
            assert abs(e_f2 - e_f * e_f) <= 1e-9 * max(1.0, abs(e_f2))

    def test_quartic_marginal_combination(self):
        origin = moments_from_point_state(0.0, 0.0, 0.0, 0.0)
        other = moments_from_point_state(1.5, -2.0, 0.7, 0.3)
        norm_sq = 1.5**2 + 2.0**2 + 0.7**2
        got = expected_f_squared(origin, other, 0.0)
        assert got == pytest.approx(norm_sq**2, rel=1e-12)

    def test_particle_oracle(self):
        # Empirical moments of two sampled clouds must reproduce the
        # direct sample average of f^2 up to estimator noise.
        rng = np.random.default_rng(23)
        n = 100_000
        xa = rng.gamma(4.0, 1.5, n)
        ya = rng.normal(-3.0, 2.0, n)
        za = rng.uniform(-1.0, 1.0, n)
        xb = rng.normal(12.0, 1.0, n)
        yb = rng.beta(2.0, 5.0, n) * 8.0
        zb = rng.normal(0.5, 0.7, n)
        psi = np.zeros(n)
        vals_a, _ = monomial_averages(xa, ya, za, psi)
        vals_b, _ = monomial_averages(xb, yb, zb, psi)
        m_a = MomentVector(values=vals_a, time_step=0)
        m_b = MomentVector(values=vals_b, time_step=0)
        d_min = 4.0
        f = (xa - xb) ** 2 + (ya - yb) ** 2 + (za - zb) ** 2 - d_min**2
        sample_mean = (f**2).mean()
        se = (f**2).std() / math.sqrt(n)
        assert abs(expected_f_squared(m_a, m_b, d_min) - sample_mean) <= 4.0 * se


class TestVpBound:
    def test_reference_arithmetic(self):
        result = vp_bound(ClearanceMoments(e_f=3.0, e_f2=10.0, pair=(0, 1), time_step=0))
        assert result.bound == 4.0 / 81.0
        assert result.condition_mean_nonneg
        assert result.condition_moment_ratio
        assert result.applicable

    def test_zero_variance(self):
        result = vp_bound(ClearanceMoments(e_f=5.0, e_f2=25.0, pair=(0, 1), time_step=0))
        assert result.bound == 0.0
        assert result.applicable

    def test_zero_mean_inapplicable(self):
        result = vp_bound(ClearanceMoments(e_f=0.0, e_f2=4.0, pair=(0, 1), time_step=0))
        assert not result.applicable
        assert math.isinf(result.bound)

    def test_negative_mean_inapplicable(self):
        result = vp_bound(ClearanceMoments(e_f=-2.0, e_f2=40.0, pair=(0, 1), time_step=0))
        assert not result.condition_mean_nonneg
        assert not result.applicable

    def test_ratio_condition_gate(self):
        # mean^2 = 4 < (5/8) * 8 = 5, so the ratio condition fails
        result = vp_bound(ClearanceMoments(e_f=2.0, e_f2=8.0, pair=(0, 1), time_step=0))
        assert not result.condition_moment_ratio
        assert not result.applicable

    def test_applicable_ceiling_enforced(self):
        with pytest.raises(ValueError):
            SafetyEvalResult(
                bound=1.0,
                condition_mean_nonneg=True,
                condition_moment_ratio=True,
                applicable=True,
            )

    def test_variance_consistency_enforced(self):
        with pytest.raises(ValueError):
            ClearanceMoments(e_f=10.0, e_f2=50.0, pair=(0, 1), time_step=0)

    def test_scale_covariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pa, pb = rng.uniform(-15, 15, 3), rng.uniform(-15, 15, 3)
            d_min = rng.uniform(0.5, 5.0)
            scale = rng.uniform(0.1, 10.0)
            base = clearance_moments(
                moments_from_point_state(*pa, 0.1),
                moments_from_point_state(*pb, 0.4),
                d_min,
            )
            scaled = clearance_moments(
                moments_from_point_state(*(scale * pa), 0.1),
                moments_from_point_state(*(scale * pb), 0.4),
                scale * d_min,
            )
            assert scaled.e_f == pytest.approx(scale**2 * base.e_f, rel=1e-9, abs=1e-9)
            assert scaled.e_f2 == pytest.approx(scale**4 * base.e_f2, rel=1e-9, abs=1e-9)

    def test_empirical_soundness(self):
        # Gaussian-difference clearance variables are unimodal; whenever
        # the validity conditions hold, the sampled violation frequency
        # must not exceed the bound beyond binomial noise.
        rng = np.random.default_rng(404)
        n = 100_000
        d_min = 10.0
        applicable_count = 0
        for _ in range(50):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            mean = direction * rng.uniform(10.5, 30.0)
            stds = rng.uniform(0.1, 1.2, size=3)
            e_f = float(mean @ mean + np.sum(stds**2) - d_min**2)
            var_f = float(np.sum(4.0 * mean**2 * stds**2 + 2.0 * stds**4))
            c = ClearanceMoments(
                e_f=e_f, e_f2=var_f + e_f * e_f, pair=(0, 1), time_step=0
            )
            result = vp_bound(c)
            if not result.applicable:
                continue
            applicable_count += 1
            diff = mean[None, :] + rng.normal(size=(n, 3)) * stds[None, :]
            f = np.einsum("ij,ij->i", diff, diff) - d_min**2
            p_hat = float((f <= 0.0).mean())
            se = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n)
            assert p_hat <= result.bound + 3.0 * se
        assert applicable_count >= 40


class TestBatchedEvaluation:
    def test_profile_matches_scalar(self):
        rng = np.random.default_rng(9)
        rows_a, rows_b = [], []
        for _ in range(6):
            rows_a.append(moments_from_point_state(*rng.uniform(-10, 10, 3), 0.1).values)
            rows_b.append(moments_from_point_state(*rng.uniform(-10, 10, 3), -0.2).values)
        arr_a, arr_b = np.array(rows_a), np.array(rows_b)
        e_f, e_f2 = clearance_profile(arr_a, arr_b, 7.0)
        for k in range(6):
            m_a = MomentVector(values=arr_a[k], time_step=0)
            m_b = MomentVector(values=arr_b[k], time_step=0)
            assert e_f[k] == pytest.approx(expected_f(m_a, m_b, 7.0), rel=1e-12)
            assert e_f2[k] == pytest.approx(expected_f_squared(m_a, m_b, 7.0), rel=1e-12)

    def test_gradients_linear_exactness(self):
        # Both expectations are linear in A's moments, so the analytic
        # gradient must reproduce finite differences to FD accuracy.
        rng = np.random.default_rng(13)
        arr_a = moments_from_point_state(*rng.uniform(-5, 5, 3), 0.3).values.copy()
        arr_b = moments_from_point_state(*rng.uniform(-5, 5, 3), -0.1).values[None, :]
        grad_f, grad_f2 = clearance_gradients(arr_b, 5.0, arr_a.shape[0])
        from uavplan.safety import expected_f_squared_values, expected_f_values

        h = 1e-4
        for i in rng.choice(126, size=25, replace=False):
            plus, minus = arr_a.copy(), arr_a.copy()
            plus[i] += h
            minus[i] -= h
            fd_f = (
                expected_f_values(plus, arr_b[0], 5.0) - expected_f_values(minus, arr_b[0], 5.0)
            ) / (2 * h)
            fd_f2 = (
                expected_f_squared_values(plus, arr_b[0], 5.0)
                - expected_f_squared_values(minus, arr_b[0], 5.0)
            ) / (2 * h)
            assert grad_f[0, i] == pytest.approx(fd_f, rel=1e-6, abs=1e-6)
            assert grad_f2[0, i] == pytest.approx(fd_f2, rel=1e-4, abs=1e-4)
