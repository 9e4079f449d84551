"""Censoring-distribution fit and synthetic-variable transform."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from survh2.censoring import (
    CensoredSample,
    CensoringCdf,
    build_synthetic,
    build_synthetic_arrays,
    default_cap,
    fit_censoring_arrays,
    fit_censoring_cdf,
    synthetic_first,
    synthetic_second,
)
from survh2.errors import InputFormatError, NumericalError


class TestCensoringFit:
    def test_basic_jumps_and_values(self):
        # Censorings at t=1 and t=3, an observed event at t=2.
        g = fit_censoring_arrays([1.0, 2.0, 3.0], [0, 1, 0])
        assert_allclose(g.jump_times, [1.0, 3.0])
        # At t=3 the final factor is zero, so the raw cdf hits 1 and is clamped.
        assert_allclose(g.cdf_values, [1.0 / 3.0, default_cap(3)])
        assert g.cap == pytest.approx(1.0 - 1.0 / 6.0)

    def test_sample_api_matches_array_api(self):
        samples = [CensoredSample(1.0, 0), CensoredSample(2.0, 1), CensoredSample(3.0, 0)]
        g1 = fit_censoring_cdf(samples)
        g2 = fit_censoring_arrays([1.0, 2.0, 3.0], [0, 1, 0])
        assert_allclose(g1.jump_times, g2.jump_times)
        assert_allclose(g1.cdf_values, g2.cdf_values)

    def test_tied_event_leaves_risk_set_first(self):
        # Event and censoring tied at t=2: the event exits before the
        # censoring is counted, so the censoring sees a risk set of one.
        g = fit_censoring_arrays([2.0, 2.0], [1, 0])
        assert_allclose(g.jump_times, [2.0])
        assert_allclose(g.cdf_values, [default_cap(2)])

    def test_cap_override(self):
        g = fit_censoring_arrays([1.0, 2.0, 3.0], [0, 1, 0], cap=0.5)
        assert_allclose(g.cdf_values, [1.0 / 3.0, 0.5])

    def test_no_censoring_means_identity_transform(self):
        u = np.array([0.3, -1.2, 2.5])
        g = fit_censoring_arrays(u, [1, 1, 1])
        assert g.jump_times.size == 0
        syn = build_synthetic_arrays(u, g)
        assert_allclose(syn.y1, u)
        assert_allclose(syn.y2, u * u)
        assert_allclose(syn.d, 0.0, atol=0)

    def test_all_censored_raises(self):
        with pytest.raises(NumericalError):
            fit_censoring_arrays([1.0, 2.0], [0, 0])

    def test_value_at_is_right_continuous(self):
        g = fit_censoring_arrays([1.0, 2.0, 3.0], [0, 1, 0])
        assert g.value_at(0.999) == 0.0
        assert g.value_at(1.0) == pytest.approx(1.0 / 3.0)
        assert g.value_at(2.5) == pytest.approx(1.0 / 3.0)
        assert g.value_at(3.0) == pytest.approx(g.cap)
        assert_allclose(g.value_at(np.array([0.0, 1.5, 10.0])), [0.0, 1.0 / 3.0, g.cap])

    def test_input_validation(self):
        with pytest.raises(InputFormatError):
            fit_censoring_arrays([1.0, 2.0], [0])
        with pytest.raises(InputFormatError):
            fit_censoring_arrays([1.0, 2.0], [0, 2])
        with pytest.raises(InputFormatError):
            fit_censoring_arrays([1.0, np.inf], [0, 1])
        with pytest.raises(InputFormatError):
            fit_censoring_arrays([1.0, 2.0], [0, 1], cap=1.0)
        with pytest.raises(InputFormatError):
            fit_censoring_arrays([], [])
        with pytest.raises(InputFormatError):
            CensoredSample(np.nan, 1)
        with pytest.raises(InputFormatError):
            CensoredSample(1.0, 2)

    def test_cdf_container_validation(self):
        with pytest.raises(InputFormatError):
            CensoringCdf(np.array([2.0, 1.0]), np.array([0.1, 0.2]), cap=0.9)
        with pytest.raises(InputFormatError):
            CensoringCdf(np.array([1.0, 2.0]), np.array([0.3, 0.2]), cap=0.9)
        with pytest.raises(InputFormatError):
            CensoringCdf(np.array([1.0]), np.array([0.95]), cap=0.9)


class TestSyntheticValues:
    def test_first_moment_single_jump(self):
        g = CensoringCdf(np.array([0.0]), np.array([0.5]), cap=0.9)
        assert synthetic_first(2.0, 1, g) == pytest.approx(4.0)

    def test_first_moment_two_segments(self):
        g = CensoringCdf(np.array([1.0, 3.0]), np.array([0.25, 0.5]), cap=0.9)
        # 4 + (1/3)*(3-1) + 1*(4-3)
        assert synthetic_first(4.0, 0, g) == pytest.approx(4.0 + 2.0 / 3.0 + 1.0)

    def test_second_moment_single_jump_at_zero(self):
        g = CensoringCdf(np.array([0.0]), np.array([0.5]), cap=0.9)
        assert synthetic_second(2.0, 1, g) == pytest.approx(8.0)

    def test_second_moment_single_jump_at_one(self):
        g = CensoringCdf(np.array([1.0]), np.array([0.5]), cap=0.9)
        assert synthetic_second(2.0, 1, g) == pytest.approx(7.0)

    def test_build_synthetic_decomposition(self):
        g = CensoringCdf(np.array([0.0]), np.array([0.5]), cap=0.9)
        samples = [CensoredSample(2.0, 1), CensoredSample(2.0, 0)]
        syn = build_synthetic(samples, g)
        assert_allclose(syn.y1, [4.0, 4.0])
        assert_allclose(syn.y2, [8.0, 8.0])
        assert_allclose(syn.d, [-8.0, -8.0])

    def test_transform_ignores_event_indicator(self):
        g = CensoringCdf(np.array([0.5, 1.5]), np.array([0.2, 0.6]), cap=0.99)
        assert synthetic_first(2.0, 0, g) == synthetic_first(2.0, 1, g)
        assert synthetic_second(2.0, 0, g) == synthetic_second(2.0, 1, g)

    def test_times_below_first_jump_are_untouched(self):
        g = CensoringCdf(np.array([1.0]), np.array([0.5]), cap=0.9)
        assert synthetic_first(0.5, 1, g) == pytest.approx(0.5)
        assert synthetic_second(-2.0, 1, g) == pytest.approx(4.0)

    def test_against_quadrature_oracle(self):
        # Independent evaluation of the step integrals with scipy.quad,
        # one segment at a time (the integrand is constant on segments).
        rng = np.random.default_rng(20260817)
        for _ in range(20):
            n_jumps = rng.integers(1, 8)
            jumps = np.sort(rng.normal(size=n_jumps) * 2.0)
            if np.any(np.diff(jumps) == 0):
                continue
            vals = np.sort(rng.uniform(0.05, 0.9, size=n_jumps))
            g = CensoringCdf(jumps, vals, cap=0.95)

            def ratio_at(t):
                gt = g.value_at(np.array([t]))[0]
                return gt / (1.0 - gt)

            for u in rng.normal(size=5) * 3.0:
                lo = jumps[0]
                first_q = 0.0
                second_q = 0.0
                if u > lo:
                    edges = np.concatenate([[lo], jumps[(jumps > lo) & (jumps < u)], [u]])
                    for a, b in zip(edges[:-1], edges[1:]):
                        mid_ratio = ratio_at((a + b) / 2.0)
                        q1, _ = integrate.quad(lambda t: mid_ratio, a, b)
                        q2, _ = integrate.quad(lambda t: 2.0 * t * mid_ratio, a, b)
                        first_q += q1
                        second_q += q2
                assert_allclose(synthetic_first(u, 1, g), u + first_q, rtol=0, atol=1e-10)
                assert_allclose(synthetic_second(u, 1, g), u * u + second_q, rtol=0, atol=1e-10)

    def test_larger_cap_never_decreases_first_moment(self):
        rng = np.random.default_rng(7)
        u = rng.normal(size=200)
        delta = rng.integers(0, 2, size=200)
        delta[0] = 1
        g_low = fit_censoring_arrays(u, delta, cap=0.8)
        g_high = fit_censoring_arrays(u, delta, cap=0.95)
        y1_low = build_synthetic_arrays(u, g_low).y1
        y1_high = build_synthetic_arrays(u, g_high).y1
        assert np.all(y1_high >= y1_low - 1e-12)


def _step_cdf_of_normal(mu, lo=-8.0, hi=8.0, n_grid=2000):
    """Fine step approximation of Normal(mu, 1), usable as a 'true' G."""
    from scipy.stats import norm

    t = np.linspace(mu + lo, mu + hi, n_grid)
    w = np.minimum(norm.cdf(t - mu), 1.0 - 1e-9)
    return CensoringCdf(t, w, cap=1.0 - 1e-12)


def _sample_step(cdf, n, rng):
    probs = np.diff(np.concatenate([[0.0], cdf.cdf_values]))
    probs[-1] += 1.0 - probs.sum()
    return rng.choice(cdf.jump_times, size=n, p=probs)


class TestMomentMatching:
    def test_unbiased_under_true_censoring_cdf(self):
        # E[y1 | y] = y and E[y2 | y] = y^2 hold exactly when the transform
        # uses the true distribution of the censoring times.
        rng = np.random.default_rng(11)
        n = 20000
        g_true = _step_cdf_of_normal(mu=1.19)
        y = rng.normal(size=n)
        r = _sample_step(g_true, n, rng)
        u = np.minimum(y, r)
        syn = build_synthetic_arrays(u, g_true)
        for vals, ref in [(syn.y1, y), (syn.y2, y * y)]:
            diff = vals - ref
            assert abs(diff.mean()) < 3.0 * diff.std(ddof=1) / np.sqrt(n)

    def test_plug_in_estimate_tracks_true_moments(self):
        rng = np.random.default_rng(12)
        n = 20000
        g_true = _step_cdf_of_normal(mu=1.19)
        y = rng.normal(size=n)
        r = _sample_step(g_true, n, rng)
        u = np.minimum(y, r)
        delta = (y <= r).astype(int)
        g_hat = fit_censoring_arrays(u, delta)
        syn = build_synthetic_arrays(u, g_hat)
        assert abs(syn.y1.mean() - y.mean()) < 0.03
        assert abs(syn.y2.mean() - (y * y).mean()) < 0.06
