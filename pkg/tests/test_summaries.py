import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit, logit

from ptmeta.data_model import CohortSummary
from ptmeta.kernel_prior import CovariateVector, NodePrior
from ptmeta.partition import NodePath, build_cohort_partition
from ptmeta.sampler import FitConfig, PosteriorDraws, TreeDistribution, run_chain
from ptmeta.special_math import DistributionSpec, rng_stream
from ptmeta.summaries import (
    QuerySpec,
    density_grid,
    load_queries,
    mean_median,
    median_of_draw,
    mixture_median,
    summarize,
    write_report_csv,
    write_report_json,
)

G0 = DistributionSpec.half_cauchy(3.5)


def cohort(cid, study, marker, l, m, h, n=21):
    cv = CovariateVector(study, marker, "melanoma", "pembro", "2", "1", "mono")
    return CohortSummary(study, cid, cv, l, m, h, n, None, "exact-pattern")


@pytest.fixture(scope="module")
def fitted():
    data = [
        cohort("A-pos", "S1", "pos", 2.5, 4.0, 7.0),
        cohort("A-neg", "S1", "neg", 1.8, 3.0, 5.5),
    ]
    covs = [d.covariates for d in data] + [
        CovariateVector("F1", "pos", "melanoma", "pembro", "2", "1", "mono"),
        CovariateVector("F1", "neg", "melanoma", "pembro", "2", "1", "mono"),
    ]
    cfg = FitConfig(iterations=460, burn_in=100, thinning=3, n_mc_elicit=1500, seed=17)
    return run_chain(data, covs, cfg)


def hand_draws(z_values, trees, priors, g0=G0, n_observed=1):
    """PosteriorDraws with gp-depth-2 trees and no deep levels."""
    n_draws, n_nodes, n_cohorts = z_values.shape
    return PosteriorDraws(
        z=z_values,
        deep=np.zeros((n_draws, n_cohorts, 0)),
        medians=np.zeros((n_draws, n_cohorts)),
        gp_paths=["0", "00", "10"],
        deep_levels=[],
        cohort_ids=[f"C{i}" for i in range(n_observed)] + [f"future-{k}" for k in range(n_cohorts - n_observed)],
        n_observed=n_observed,
        config=FitConfig(gp_depth=2, total_depth=2, seed=5),
        trees=trees,
        node_priors=priors,
    )


class TestMedianOfDraw:
    def test_root_split_half_gives_anchor_median(self, fitted):
        draws = fitted
        z = draws.z.copy()
        z[0, 0, 0] = 0.0  # root split exactly 1/2
        patched = PosteriorDraws(
            z=z, deep=draws.deep, medians=draws.medians, gp_paths=draws.gp_paths,
            deep_levels=draws.deep_levels, cohort_ids=draws.cohort_ids,
            n_observed=draws.n_observed, config=draws.config, trees=draws.trees,
            node_priors=draws.node_priors,
        )
        assert median_of_draw(patched, 0, 0) == pytest.approx(4.0, abs=1e-12)

    def test_centered_tree_median_is_g0_median(self):
        s = (G0.quantile(0.25), G0.quantile(0.5), G0.quantile(0.75))
        tree = build_cohort_partition(s, G0, 8)
        splits = {d: np.full(2 ** (d - 1), 0.5) for d in range(1, 9)}
        assert TreeDistribution(tree, splits, G0).median() == pytest.approx(3.5, abs=1e-9)

    def test_matches_grid_bisection_oracle(self, fitted):
        draws = fitted
        for k in (0, draws.n_draws - 1):
            for i in range(draws.n_cohorts):
                dist = draws.tree_distribution(k, i)
                oracle = brentq(lambda t: dist.cdf(t) - 0.5, 1e-9, 1e9, xtol=1e-10)
                assert median_of_draw(draws, k, i) == pytest.approx(oracle, abs=1e-8)
                assert draws.medians[k, i] == pytest.approx(oracle, abs=1e-8)

    def test_equivariant_under_relabeling(self, fitted):
        # stored medians follow the cohort axis, whatever the order
        draws = fitted
        perm = [1, 0, 3, 2]
        for k in range(0, draws.n_draws, 37):
            vals = [median_of_draw(draws, k, i) for i in range(4)]
            assert [vals[p] for p in perm] == [median_of_draw(draws, k, p) for p in perm]


class TestMeanMedian:
    def _setup(self, rho):
        tree = build_cohort_partition((2.0, 3.5, 6.0), G0, 2)
        trees = [tree, tree]
        sigma2 = {1: 0.4, 2: 0.2}
        priors = [
            NodePrior(NodePath.from_string(p), np.zeros(2), sigma2[len(p)] * np.array([[1.0, rho], [rho, 1.0]]))
            for p in ("0", "00", "10")
        ]
        rng = rng_stream(70)
        z = rng.normal(size=(40, 3, 2))
        return hand_draws(z, trees, priors)

    def test_identity_correlation_gives_constant_prior_median(self):
        draws = self._setup(rho=0.0)
        vals = mean_median(draws, cohort=1, n_mc=400)
        assert np.ptp(vals) < 1e-9  # no information flows from the draws
        # the constant is the median of the prior-mean tree
        builder_tree = draws.trees[1]
        prior_splits = {
            d: np.full(2 ** (d - 1), float(np.mean(expit(
                math.sqrt({1: 0.4, 2: 0.2}[d]) * rng_stream(71, d).standard_normal(200_000)
            ))))
            for d in (1, 2)
        }
        want = TreeDistribution(builder_tree, prior_splits, G0).median()
        assert vals[0] == pytest.approx(want, rel=0.02)

    def test_perfect_correlation_recovers_observed_draw_median(self):
        draws = self._setup(rho=1.0)
        vals = mean_median(draws, cohort=1, n_mc=50)
        for k in (0, 17, 39):
            assert vals[k] == pytest.approx(draws.tree_distribution(k, 0).median(), rel=1e-3)

    def test_partial_correlation_matches_quadrature(self):
        rho = 0.6
        draws = self._setup(rho=rho)
        n_mc = 40_000
        vals = mean_median(draws, cohort=1, n_mc=n_mc)
        k = 3
        splits = []
        for node, s2 in ((0, 0.4), (1, 0.2), (2, 0.2)):
            z_obs = draws.z[k, node, 0]
            mu_c = rho * z_obs
            sd_c = math.sqrt(s2 * (1 - rho * rho))
            zz = np.linspace(mu_c - 10 * sd_c, mu_c + 10 * sd_c, 200_001)
            w = np.exp(-0.5 * ((zz - mu_c) / sd_c) ** 2)
            splits.append(float(np.trapezoid(expit(zz) * w, zz) / np.trapezoid(w, zz)))
        dist = TreeDistribution(
            draws.trees[1], {1: np.array(splits[:1]), 2: np.array(splits[1:])}, G0
        )
        se_split = 0.25 / math.sqrt(n_mc)  # bound on the MC error of each split mean
        assert vals[k] == pytest.approx(dist.median(), rel=0.01)
        got_split = expit(
            logit(np.clip(dist.cdf(3.5), 1e-9, 1 - 1e-9))
        )
        assert abs(dist.cdf(3.5) - splits[0]) < 1e-12
        assert abs(vals[k] - dist.median()) / dist.median() < 3 * se_split * 10


class TestMixtureMedian:
    def test_identical_components(self, fitted):
        d = fitted.tree_distribution(0, 0)
        assert mixture_median([d, d, d]) == pytest.approx(d.median(), abs=1e-9)

    def test_singleton_equals_draw_median(self, fitted):
        d = fitted.tree_distribution(2, 1)
        assert mixture_median([d]) == pytest.approx(d.median(), abs=1e-12)

    def test_two_component_grid_oracle(self, fitted):
        a = fitted.tree_distribution(0, 0)
        b = fitted.tree_distribution(0, 1)
        got = mixture_median([a, b], (0.5, 0.5))
        grid = np.linspace(1e-3, 50, 400_000)
        mix = 0.5 * a.cdf(grid) + 0.5 * b.cdf(grid)
        oracle = grid[np.searchsorted(mix, 0.5)]
        assert got == pytest.approx(oracle, abs=2e-4)

    def test_bounded_by_component_medians(self, fitted):
        rng = rng_stream(72)
        for k in range(0, fitted.n_draws, 17):
            dists = [fitted.tree_distribution(k, i) for i in range(4)]
            w = rng.dirichlet(np.ones(4))
            meds = [d.median() for d in dists]
            got = mixture_median(dists, tuple(w))
            assert min(meds) - 1e-9 <= got <= max(meds) + 1e-9

    def test_weight_validation(self, fitted):
        d = fitted.tree_distribution(0, 0)
        with pytest.raises(ValueError):
            mixture_median([d, d], (0.7, 0.7))


class TestSummarize:
    def test_even_count_median_is_midpoint(self, fitted):
        rows = summarize(fitted, [QuerySpec("m0", "cohort-median", ("A-pos",))])
        series = np.sort(fitted.medians[:, 0])
        n = series.size
        assert rows[0]["estimate"] == pytest.approx((series[n // 2 - 1] + series[n // 2]) / 2)

    def test_all_positive_probability_one(self, fitted):
        # compare a cohort against itself shifted: guaranteed ordering
        q = QuerySpec("cmp", "cohort-median", positive=("A-pos",), negative=("A-neg",))
        rows = summarize(fitted, [q])
        pos = fitted.medians[:, 0]
        neg = fitted.medians[:, 1]
        assert rows[0]["prob_positive"] == pytest.approx(float(np.mean(pos > neg)))

    def test_probabilities_complementary(self, fitted):
        fwd = QuerySpec("f", "cohort-median", positive=("A-pos",), negative=("A-neg",))
        rev = QuerySpec("r", "cohort-median", positive=("A-neg",), negative=("A-pos",))
        rows = summarize(fitted, [fwd, rev])
        assert rows[0]["prob_positive"] + rows[1]["prob_positive"] == pytest.approx(1.0)
        # log ratios negate draw by draw
        assert np.allclose(rows[0]["series"], -rows[1]["series"])

    def test_mixture_query(self, fitted):
        q = QuerySpec(
            "mix", "mixture-median",
            positive=("A-pos", "future-0"), negative=("A-neg", "future-1"),
            positive_weights=(0.6, 0.4), negative_weights=(0.6, 0.4),
        )
        (row,) = summarize(fitted, [q])
        assert row["kind"] == "comparison"
        assert math.isfinite(row["estimate"])

    def test_mean_median_query(self, fitted):
        q = QuerySpec("mm", "mean-median", positive=("future-0",), negative=("future-1",))
        (row,) = summarize(fitted, [q], n_mc=100)
        assert math.isfinite(row["estimate"])

    def test_requires_enough_draws(self, fitted):
        small = PosteriorDraws(
            z=fitted.z[:10], deep=fitted.deep[:10], medians=fitted.medians[:10],
            gp_paths=fitted.gp_paths, deep_levels=fitted.deep_levels,
            cohort_ids=fitted.cohort_ids, n_observed=fitted.n_observed,
            config=fitted.config, trees=fitted.trees, node_priors=fitted.node_priors,
        )
        with pytest.raises(ValueError):
            summarize(small, [QuerySpec("m0", "cohort-median", ("A-pos",))])

    def test_unknown_cohort(self, fitted):
        with pytest.raises(KeyError):
            summarize(fitted, [QuerySpec("m0", "cohort-median", ("nope",))])


class TestIo:
    def test_report_roundtrip(self, fitted, tmp_path):
        rows = summarize(fitted, [QuerySpec("m0", "cohort-median", ("A-pos",))])
        write_report_csv(rows, tmp_path / "report.csv")
        write_report_json(rows, tmp_path / "report.json", include_draws=True)
        text = (tmp_path / "report.csv").read_text().splitlines()
        assert text[0].startswith("name,target,kind,estimate")
        payload = json.loads((tmp_path / "report.json").read_text())
        assert len(payload[0]["draws"]) == fitted.n_draws

    def test_load_queries(self, tmp_path):
        doc = [
            {"name": "a", "target": "cohort-median", "cohorts": ["C1"]},
            {
                "name": "b",
                "target": "mixture-median",
                "comparison": {"positive": ["P1", "P2"], "negative": ["N1"], "positive_weights": [0.3, 0.7]},
                "level": 0.9,
            },
        ]
        path = tmp_path / "queries.json"
        path.write_text(json.dumps(doc))
        qs = load_queries(path)
        assert qs[0].cohorts == ("C1",)
        assert qs[1].is_comparison and qs[1].positive_weights == (0.3, 0.7)
        assert qs[1].level == 0.9

    def test_density_grid(self, fitted):
        rows = density_grid(fitted, ["A-pos"], n_grid=50)
        assert len(rows) == 50
        surv = [r["survival"] for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(surv[:-1], surv[1:]))
        assert all(r["density"] >= 0 for r in rows)
