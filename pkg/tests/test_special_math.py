import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from ptmeta.special_math import (
    DistributionSpec,
    MvnSpec,
    mvn_condition,
    polya_gamma_mean,
    polya_gamma_var,
    rng_stream,
    sample_polya_gamma,
    sample_polya_gamma_batch,
    sample_truncated,
    trigamma,
)


def trigamma_oracle(x: float) -> float:
    """Independent evaluation of psi'(x) = sum_k 1/(x+k)^2.

    Partial sum plus an Euler-Maclaurin tail bound for the remainder, good
    to well below 1e-12 with a million explicit terms.
    """
    k = np.arange(0, 1_000_000, dtype=float)
    partial = float(np.sum(1.0 / (x + k) ** 2))
    t = x + 1_000_000
    tail = 1.0 / t + 1.0 / (2.0 * t * t) + 1.0 / (6.0 * t**3)
    return partial + tail


class TestTrigamma:
    def test_known_identity_at_one(self):
        assert trigamma(1.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)

    def test_series_oracle_at_20(self):
        assert trigamma(20.0) == pytest.approx(trigamma_oracle(20.0), abs=1e-12)
        assert trigamma(20.0) == pytest.approx(0.0512708, abs=5e-8)

    def test_recurrence(self):
        x = 3.7
        assert trigamma(x) - trigamma(x + 1) == pytest.approx(1 / x**2, abs=1e-12)

    def test_oracle_grid(self):
        for x in [0.07, 0.3, 1.4, 2.0, 5.5, 9.99, 10.01, 33.3, 250.0]:
            assert trigamma(x) == pytest.approx(trigamma_oracle(x), abs=1e-10)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            trigamma(0.0)
        with pytest.raises(ValueError):
            trigamma(-3.0)


ALL_FAMILIES = [
    DistributionSpec.exponential(2.5),
    DistributionSpec.half_normal(3.0),
    DistributionSpec.half_cauchy(3.5),
    DistributionSpec.mixture(3.0),
    DistributionSpec.mixture(4.0, (0.3, 0.7)),
]


class TestQuantile:
    def test_half_cauchy_closed_forms(self):
        assert DistributionSpec.half_cauchy(3.5).quantile(0.5) == pytest.approx(3.5)
        assert DistributionSpec.half_cauchy(1.0).quantile(0.75) == pytest.approx(
            math.tan(3 * math.pi / 8)
        )

    def test_zero_maps_to_support_endpoint(self):
        for dist in ALL_FAMILIES:
            assert dist.quantile(0.0) == 0.0

    def test_median_matches_spec_field(self):
        for dist in ALL_FAMILIES:
            assert dist.quantile(0.5) == pytest.approx(dist.median, abs=1e-9)

    def test_roundtrip_identities(self):
        rng = rng_stream(11)
        for dist in ALL_FAMILIES:
            p = rng.uniform(1e-6, 1 - 1e-6, size=100)
            q = dist.quantile(p)
            assert np.all(np.diff(dist.quantile(np.sort(p))) >= 0)
            assert np.allclose(dist.cdf(q), p, atol=1e-9)
            t = dist.quantile(rng.uniform(0.001, 0.999, size=100))
            assert np.allclose(dist.quantile(dist.cdf(t)), t, rtol=1e-8)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            DistributionSpec.exponential(1.0).quantile(1.0)
        with pytest.raises(ValueError):
            DistributionSpec.exponential(1.0).quantile(-0.1)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DistributionSpec("exponential", -1.0)
        with pytest.raises(ValueError):
            DistributionSpec.mixture(1.0, (0.7, 0.7))
        with pytest.raises(ValueError):
            DistributionSpec("normal", 1.0)

    def test_half_normal_scale(self):
        # median of |N(0, s^2)| is s * Phi^-1(0.75)
        assert DistributionSpec.half_normal(3.0).sigma == pytest.approx(4.447806655, abs=1e-6)


class TestPolyaGamma:
    def test_mean_pg_1_0(self):
        rng = rng_stream(42, 1)
        draws = np.array([sample_polya_gamma(1, 0.0, rng) for _ in range(100_000)])
        se = draws.std() / math.sqrt(draws.size)
        assert abs(draws.mean() - 0.25) < 3 * se

    def test_mean_pg_2_1(self):
        rng = rng_stream(42, 2)
        draws = sample_polya_gamma_batch(
            np.full(100_000, 2), np.full(100_000, 1.0), rng
        )
        se = draws.std() / math.sqrt(draws.size)
        assert polya_gamma_mean(2, 1.0) == pytest.approx(0.4621172, abs=1e-7)
        assert abs(draws.mean() - polya_gamma_mean(2, 1.0)) < 3 * se

    def test_additivity(self):
        rng = rng_stream(42, 3)
        n = 10_000
        direct = sample_polya_gamma_batch(np.full(n, 3), np.full(n, 1.5), rng)
        summed = (
            sample_polya_gamma_batch(np.full(n, 1), np.full(n, 1.5), rng)
            + sample_polya_gamma_batch(np.full(n, 1), np.full(n, 1.5), rng)
            + sample_polya_gamma_batch(np.full(n, 1), np.full(n, 1.5), rng)
        )
        stat = kstest(direct, summed).pvalue
        assert stat > 0.001

    @pytest.mark.parametrize("b", [1, 2, 10])
    @pytest.mark.parametrize("z", [0.1, 1.0, 3.0])
    def test_variance_property(self, b, z):
        rng = rng_stream(42, 4, b, int(z * 10))
        n = 60_000
        draws = sample_polya_gamma_batch(np.full(n, b), np.full(n, z), rng)
        s2 = draws.var(ddof=1)
        m4 = np.mean((draws - draws.mean()) ** 4)
        se_var = math.sqrt(max(m4 - s2**2, 1e-30) / n)
        assert abs(s2 - polya_gamma_var(b, z)) < 5 * se_var

    def test_large_b_approximation(self):
        rng = rng_stream(42, 5)
        n = 20_000
        draws = sample_polya_gamma_batch(np.full(n, 400), np.full(n, 2.0), rng)
        se = draws.std() / math.sqrt(n)
        assert abs(draws.mean() - polya_gamma_mean(400, 2.0)) < 4 * se
        assert np.all(draws > 0)

    def test_domain_error(self):
        rng = rng_stream(0)
        with pytest.raises(ValueError):
            sample_polya_gamma(0, 1.0, rng)


class TestMvnCondition:
    def test_empty_observed_is_identity(self):
        spec = MvnSpec([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
        out = mvn_condition(spec, [], [])
        assert np.array_equal(out.mean, spec.mean)
        assert np.array_equal(out.cov, spec.cov)

    def test_bivariate_closed_form(self):
        spec = MvnSpec([0.0, 0.0], [[1.0, 0.6], [0.6, 1.0]])
        out = mvn_condition(spec, [0], [2.0])
        assert out.mean[0] == pytest.approx(1.2)
        assert out.cov[0, 0] == pytest.approx(0.64)

    def test_all_observed_degenerates(self):
        spec = MvnSpec([0.0, 0.0], [[1.0, 0.2], [0.2, 1.0]])
        out = mvn_condition(spec, [0, 1], [1.0, -1.0])
        assert out.dim == 0

    def test_output_psd(self):
        rng = rng_stream(7)
        for _ in range(20):
            a = rng.standard_normal((5, 5))
            cov = a @ a.T + 0.5 * np.eye(5)
            spec = MvnSpec(rng.standard_normal(5), cov)
            out = mvn_condition(spec, [1, 3], rng.standard_normal(2))
            eig = np.linalg.eigvalsh(out.cov)
            assert eig.min() >= -1e-10

    def test_invalid_indices(self):
        spec = MvnSpec([0.0, 0.0], np.eye(2))
        with pytest.raises(ValueError):
            mvn_condition(spec, [0, 0], [1.0, 1.0])
        with pytest.raises(ValueError):
            mvn_condition(spec, [5], [1.0])


class TestTruncatedSampling:
    def test_no_truncation_is_plain_draw(self):
        dist = DistributionSpec.exponential(math.log(2))  # rate 1
        rng = rng_stream(8)
        draws = np.array([sample_truncated(dist, 0.0, math.inf, rng) for _ in range(10_000)])
        assert kstest(draws, "expon").pvalue > 0.001

    @pytest.mark.parametrize("dist", ALL_FAMILIES)
    def test_ks_against_truncated_cdf(self, dist):
        rng = rng_stream(9, hash(dist.family) % 1000)
        a, b = dist.quantile(0.2), dist.quantile(0.4)
        draws = np.array([sample_truncated(dist, a, b, rng) for _ in range(10_000)])
        assert np.all((draws > a) & (draws < b))
        lo, hi = dist.cdf(a), dist.cdf(b)
        u = (dist.cdf(draws) - lo) / (hi - lo)
        assert kstest(u, "uniform").pvalue > 0.001

    def test_zero_mass_interval(self):
        dist = DistributionSpec.exponential(1.0)
        with pytest.raises(ValueError):
            sample_truncated(dist, 5.0, 5.0, rng_stream(0))


@settings(max_examples=25, deadline=None)
@given(
    p=st.floats(min_value=1e-4, max_value=1 - 1e-4),
    median=st.floats(min_value=0.1, max_value=50.0),
)
def test_quantile_cdf_identity_property(p, median):
    dist = DistributionSpec.mixture(median)
    assert dist.cdf(dist.quantile(p)) == pytest.approx(p, abs=1e-9)
