import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import expit

from ptmeta.kernel_prior import (
    CovariateVector,
    KernelWeights,
    PriorSettings,
    _repair_psd,
    build_correlation_matrix,
    deep_beta_params,
    elicit_node_moments,
    gp_node_paths,
    marginal_moments,
    similarity_R,
)
from ptmeta.partition import NodePath, PartitionTree, build_cohort_partition
from ptmeta.special_math import DistributionSpec, rng_stream, trigamma

G0 = DistributionSpec.half_cauchy(3.5)


def cov(study="S1", biomarker="pos", tumor="melanoma", agent="pembro", phase="2", line="1", therapy="mono"):
    return CovariateVector(study, biomarker, tumor, agent, phase, line, therapy)


def simulation_design():
    """25 studies in 6 tumor-agent cells, a pos/neg cohort pair per study."""
    cells = [("TT1", "A0", 5), ("TT2", "A0", 5), ("TT3", "A0", 3), ("TT1", "A1", 5), ("TT2", "A1", 5), ("TT3", "A1", 2)]
    out = []
    k = 0
    for tumor, agent, n_studies in cells:
        for _ in range(n_studies):
            k += 1
            for marker in ("pos", "neg"):
                out.append(CovariateVector(f"S{k}", marker, tumor, agent))
    return out


class TestSimilarity:
    def test_same_cohort_is_one(self):
        x = cov()
        assert similarity_R(x, x) == pytest.approx(1.0)

    def test_same_study_opposite_marker(self):
        x, y = cov(biomarker="pos"), cov(biomarker="neg")
        assert similarity_R(x, y, same_cohort=False) == pytest.approx(0.125)

    def test_all_matching_different_study(self):
        x, y = cov(study="S1"), cov(study="S2")
        assert similarity_R(x, y) == pytest.approx(0.75)

    def test_other_tumor_never_matches(self):
        x, y = cov(study="S1", tumor="other"), cov(study="S2", tumor="other")
        assert similarity_R(x, y) == pytest.approx((0.5 + 2.0 + 1.5) / 8.0)

    def test_default_normalizer(self):
        assert KernelWeights().normalizer == pytest.approx(8.0)
        assert KernelWeights.simulation_profile().normalizer == pytest.approx(6.5)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            KernelWeights(tumor=-1.0)
        with pytest.raises(ValueError):
            KernelWeights(nugget=0.0)

    @settings(max_examples=40, deadline=None)
    @given(data=st.data())
    def test_symmetry_and_range(self, data):
        def rand_cov():
            return CovariateVector(
                data.draw(st.sampled_from(["S1", "S2", "S3"])),
                data.draw(st.sampled_from(["pos", "neg"])),
                data.draw(st.sampled_from(["melanoma", "nsclc", "other"])),
                data.draw(st.sampled_from(["A", "B"])),
                data.draw(st.sampled_from(["1", "2"])),
                data.draw(st.sampled_from(["1", "2+"])),
                data.draw(st.sampled_from(["mono", "combo"])),
            )

        x, y = rand_cov(), rand_cov()
        assert similarity_R(x, y) == similarity_R(y, x)
        assert 0.0 <= similarity_R(x, y) <= 1.0


class TestCorrelationMatrix:
    def test_single_cohort(self):
        mat = build_correlation_matrix([cov()])
        assert mat.shape == (1, 1) and mat[0, 0] == 1.0

    def test_simulation_design_is_psd(self):
        covs = simulation_design()
        assert len(covs) == 50
        mat = build_correlation_matrix(covs, KernelWeights.simulation_profile())
        assert np.allclose(mat, mat.T)
        assert np.allclose(np.diag(mat), 1.0)
        assert np.linalg.eigvalsh(mat).min() >= -1e-8

    def test_unrelated_cohorts(self):
        x = cov(study="S1", biomarker="pos", tumor="melanoma", agent="A", phase="1", line="1", therapy="mono")
        y = cov(study="S2", biomarker="neg", tumor="nsclc", agent="B", phase="2", line="2", therapy="combo")
        mat = build_correlation_matrix([x, y])
        assert mat[0, 1] == 0.0

    def test_repair_restores_psd_and_records_rescale(self):
        bad = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.9], [0.1, 0.9, 1.0]])
        assert np.linalg.eigvalsh(bad).min() < -1e-8
        fixed, rescale = _repair_psd(bad, nugget=1.0, denom=8.0)
        assert np.linalg.eigvalsh(fixed).min() >= -1e-9
        assert rescale > 1.0
        assert np.allclose(np.diag(fixed), 1.0)


class TestMarginalMoments:
    def test_values(self):
        assert marginal_moments(1, 5.0) == pytest.approx((0.0, 2 * trigamma(20.0)))
        assert marginal_moments(1, 5.0)[1] == pytest.approx(0.1025416, abs=1e-6)
        assert marginal_moments(2, 5.0)[1] == pytest.approx(0.044942, abs=1e-5)

    def test_mean_always_zero(self):
        for d in range(1, 6):
            for c in (0.5, 5.0, 20.0):
                assert marginal_moments(d, c)[0] == 0.0

    def test_deep_beta_params(self):
        assert deep_beta_params(3, 5.0) == 80.0
        assert deep_beta_params(3, 5.0, rule="d") == 45.0
        with pytest.raises(ValueError):
            deep_beta_params(3, 5.0, rule="quadratic")

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_logit_normal_matches_beta_variance(self, d):
        c = 5.0
        alpha = c * (d + 1) ** 2
        sigma2 = marginal_moments(d, c)[1]
        rng = rng_stream(100, d)
        draws = expit(math.sqrt(sigma2) * rng.standard_normal(1_000_000))
        beta_var = 1.0 / (4.0 * (2.0 * alpha + 1.0))
        assert abs(draws.var() / beta_var - 1.0) < 0.10


class TestGpNodePaths:
    def test_depth_two(self):
        assert [str(p) for p in gp_node_paths(2)] == ["0", "00", "10"]

    def test_depth_three_count(self):
        assert len(gp_node_paths(3)) == 7


class TestElicitation:
    def test_shared_partition_recovers_marginals(self):
        s = (G0.quantile(0.25), G0.quantile(0.5), G0.quantile(0.75))
        trees = [build_cohort_partition(s, G0, 8, f"C{i}") for i in range(3)]
        corr = np.array([[1.0, 0.4, 0.2], [0.4, 1.0, 0.1], [0.2, 0.1, 1.0]])
        settings_ = PriorSettings(c=5.0, g0=G0, gp_depth=2)
        n_mc = 20_000
        priors, diag = elicit_node_moments(settings_, corr, trees, n_mc, rng_stream(5))
        assert [str(p.node) for p in priors] == ["0", "00", "10"]
        for p in priors:
            sigma2 = settings_.gp_sigma2(p.node.level)
            se_mean = math.sqrt(sigma2 / n_mc)
            assert np.all(np.abs(p.mean) < 3 * se_mean * 1.5)
            se_var = sigma2 * math.sqrt(2.0 / n_mc)
            assert np.all(np.abs(np.diag(p.cov) - sigma2) < 4 * se_var)
            off = p.cov / sigma2
            assert np.all(np.abs(off - corr) < 0.05)

    def test_perfect_dependence(self):
        # at dyadic anchors every target collapses to a shared GP draw, so
        # an all-ones R gives inter-cohort correlation exactly 1
        s = (G0.quantile(0.25), G0.quantile(0.5), G0.quantile(0.75))
        trees = [build_cohort_partition(s, G0, 8, f"C{i}") for i in range(2)]
        corr = np.ones((2, 2))
        priors, _ = elicit_node_moments(PriorSettings(), corr, trees, 5000, rng_stream(6))
        for p in priors:
            rho = p.cov[0, 1] / math.sqrt(p.cov[0, 0] * p.cov[1, 1])
            assert rho == pytest.approx(1.0, abs=1e-9)

    def test_dependence_diluted_by_deep_levels(self):
        # non-dyadic anchors mix in independent deep draws; the correlation
        # stays dominated by the shared levels but drops strictly below 1
        trees = [build_cohort_partition((2.0, 3.5, 6.0), G0, 8, f"C{i}") for i in range(2)]
        priors, _ = elicit_node_moments(PriorSettings(), np.ones((2, 2)), trees, 20_000, rng_stream(61))
        root = priors[0]
        assert root.cov[0, 1] / math.sqrt(root.cov[0, 0] * root.cov[1, 1]) == pytest.approx(1.0, abs=1e-9)
        for p in priors[1:]:
            rho = p.cov[0, 1] / math.sqrt(p.cov[0, 0] * p.cov[1, 1])
            assert 0.6 < rho < 1.0

    def test_depth_one_quadrature_oracle(self):
        # cohort A splits at the g0 median, cohort B at the 0.75 quantile;
        # with depth 1 the process below the root follows g0, so both targets
        # are functions of the single root logit Z ~ N(0, sigma1^2)
        med, q75 = G0.quantile(0.5), G0.quantile(0.75)
        tree_a = PartitionTree("A", 1, {1: np.array([med])}, {1: np.array([0.5])})
        tree_b = PartitionTree("B", 1, {1: np.array([q75])}, {1: np.array([0.75])})
        settings_ = PriorSettings(c=5.0, g0=G0, gp_depth=1)
        corr = np.ones((2, 2))
        n_mc = 60_000
        priors, _ = elicit_node_moments(settings_, corr, [tree_a, tree_b], n_mc, rng_stream(7))
        (prior,) = priors

        sigma = math.sqrt(settings_.gp_sigma2(1))

        def target_b(z):
            p = expit(z) + (1 - expit(z)) * 0.5
            return math.log(p / (1 - p))

        def gauss(f):
            val, _ = quad(lambda z: f(z) * math.exp(-0.5 * (z / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi)), -10 * sigma, 10 * sigma)
            return val

        mean_b = gauss(target_b)
        var_b = gauss(lambda z: (target_b(z) - mean_b) ** 2)
        cov_ab = gauss(lambda z: z * (target_b(z) - mean_b))

        se = 3.5 / math.sqrt(n_mc)
        assert prior.mean[0] == pytest.approx(0.0, abs=3 * sigma / math.sqrt(n_mc))
        assert prior.mean[1] == pytest.approx(mean_b, abs=3 * math.sqrt(var_b / n_mc))
        assert prior.cov[0, 0] == pytest.approx(sigma**2, rel=0.05)
        assert prior.cov[1, 1] == pytest.approx(var_b, rel=0.05)
        assert prior.cov[0, 1] == pytest.approx(cov_ab, rel=0.05)

    def test_covariances_psd_with_jitter(self):
        trees = [build_cohort_partition((1.0 + i, 3.0 + i, 7.0 + 2 * i), G0, 8, f"C{i}") for i in range(4)]
        corr = build_correlation_matrix([cov(study=f"S{i}") for i in range(4)])
        priors, _ = elicit_node_moments(PriorSettings(), corr, trees, 2000, rng_stream(8))
        for p in priors:
            eig = np.linalg.eigvalsh(p.cov + 1e-8 * np.eye(4))
            assert eig.min() >= 0

    def test_degenerate_draws_are_clamped_and_counted(self):
        # an anchor far in the g0 tail forces conditional probabilities near 1
        trees = [build_cohort_partition((1e-7, 3.5, 1e6), G0, 8, "C0")]
        priors, diag = elicit_node_moments(PriorSettings(), np.eye(1), trees, 2000, rng_stream(9))
        assert diag.clamped > 0
        for p in priors:
            assert np.all(np.abs(p.mean) <= 12.0)

    def test_requires_enough_draws(self):
        trees = [build_cohort_partition((2.0, 3.5, 6.0), G0, 8)]
        with pytest.raises(ValueError):
            elicit_node_moments(PriorSettings(), np.eye(1), trees, 100, rng_stream(0))
