"""Posterior functionals over stored draws: medians, mixtures, comparisons.

Two flavors of future-cohort inference are supported: the draw median of
G_i (which carries cohort-to-cohort variation) and the median of the
conditional mean distribution given the observed cohorts' splitting
probabilities (which does not).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .sampler import PosteriorDraws, TreeDistribution
from .special_math import rng_stream

__all__ = [
    "QuerySpec",
    "median_of_draw",
    "mean_median",
    "mixture_median",
    "summarize",
    "density_grid",
    "write_report_csv",
    "write_report_json",
    "load_queries",
]

_SUMMARY_STREAM = 6


@dataclass(frozen=True)
class QuerySpec:
    """One posterior question: a target functional over a cohort set.

    ``target`` is "cohort-median", "mean-median" or "mixture-median".
    Multi-cohort sets are combined as a mixture with the given weights.
    A comparison pairs a positive and a negative cohort set and reports
    the posterior of the log median ratio.
    """

    name: str
    target: str
    cohorts: tuple[str, ...] = ()
    weights: tuple[float, ...] | None = None
    positive: tuple[str, ...] = ()
    negative: tuple[str, ...] = ()
    positive_weights: tuple[float, ...] | None = None
    negative_weights: tuple[float, ...] | None = None
    level: float = 0.95

    def __post_init__(self):
        if self.target not in ("cohort-median", "mean-median", "mixture-median"):
            raise ValueError(f"unknown query target {self.target!r}")
        if not 0 < self.level < 1:
            raise ValueError("interval level must be in (0, 1)")
        for w, ids in ((self.weights, self.cohorts), (self.positive_weights, self.positive), (self.negative_weights, self.negative)):
            if w is not None:
                if len(w) != len(ids):
                    raise ValueError(f"query {self.name}: weights do not match the cohort set")
                if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
                    raise ValueError(f"query {self.name}: weights must be nonnegative and sum to 1")

    @property
    def is_comparison(self) -> bool:
        return bool(self.positive) and bool(self.negative)


def median_of_draw(draws: PosteriorDraws, draw: int, cohort: int) -> float:
    """Median of one retained draw's distribution for one cohort."""
    return draws.tree_distribution(draw, cohort).median()


def _cohort_indices(draws: PosteriorDraws, ids) -> list[int]:
    lookup = {cid: k for k, cid in enumerate(draws.cohort_ids)}
    missing = [c for c in ids if c not in lookup]
    if missing:
        raise KeyError(f"unknown cohort ids {missing}; known: {draws.cohort_ids}")
    return [lookup[c] for c in ids]


def mixture_median(dists: list[TreeDistribution], weights=None) -> float:
    """The t solving sum_i pi_i F_i(t) = 0.5; the mixture CDF is monotone."""
    k = len(dists)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if w.size != k or abs(w.sum() - 1.0) > 1e-9 or w.min() < 0:
        raise ValueError("mixture weights must be a probability vector over the cohort set")
    if k == 1:
        return dists[0].median()
    meds = np.array([d.median() for d in dists])
    lo, hi = float(meds.min()), float(meds.max())
    if hi - lo < 1e-12:
        return lo

    def f(t):
        return sum(wi * di.cdf(t) for wi, di in zip(w, dists)) - 0.5

    return brentq(f, lo, hi, xtol=1e-10, rtol=8.9e-16)


class _MeanTreeBuilder:
    """Conditional-mean splitting probabilities for future cohorts.

    Given the observed cohorts' logits at a node, the future cohort's logit
    is normal with a fixed gain and spread; E[expit] is estimated by Monte
    Carlo over that conditional, with deep levels at their prior mean 0.5.
    """

    def __init__(self, draws: PosteriorDraws, n_mc: int = 200, seed_key: int = 0):
        self.draws = draws
        self.n_mc = n_mc
        self.rng = rng_stream(draws.config.seed, _SUMMARY_STREAM, seed_key)
        n_obs = draws.n_observed
        total = draws.n_cohorts
        self.future = list(range(n_obs, total))
        self.gains = []  # per node: (gain matrix (n_future, n_obs), sd vector)
        self._xi = []  # common random numbers across draws: M-bar is then an
        # exact function of theta (and constant when no information flows)
        for prior in draws.node_priors:
            cov = prior.cov
            obs = np.arange(n_obs)
            fut = np.arange(n_obs, total)
            k_oo = cov[np.ix_(obs, obs)] + 1e-10 * np.eye(n_obs)
            gain = np.linalg.solve(k_oo, cov[np.ix_(obs, fut)]).T
            var = np.diag(cov)[fut] - np.einsum("ij,ji->i", gain, cov[np.ix_(obs, fut)])
            self.gains.append((gain, np.sqrt(np.maximum(var, 0.0))))
            self._xi.append(self.rng.standard_normal((n_mc, len(self.future))))

    def conditional_split_means(self, draw: int) -> np.ndarray:
        """(n_nodes, n_future) matrix of E[expit(Z_fut) | Z_obs]."""
        d = self.draws
        n_obs = d.n_observed
        out = np.empty((len(d.node_priors), len(self.future)))
        for k, prior in enumerate(d.node_priors):
            gain, sd = self.gains[k]
            z_obs = d.z[draw, k, :n_obs]
            mu_c = prior.mean[n_obs:] + gain @ (z_obs - prior.mean[:n_obs])
            out[k] = expit(mu_c + sd * self._xi[k]).mean(axis=0)
        return out

    def mean_tree(self, draw: int, cohort: int) -> TreeDistribution:
        if cohort < self.draws.n_observed:
            raise ValueError("mean-median targets future cohorts")
        split_means = self.conditional_split_means(draw)
        return self.mean_tree_from(split_means, cohort)

    def mean_tree_from(self, split_means: np.ndarray, cohort: int) -> TreeDistribution:
        d = self.draws
        j = cohort - d.n_observed
        gp_rows: dict[int, list[int]] = {}
        for row, path in enumerate(d.gp_paths):
            gp_rows.setdefault(len(path), []).append(row)
        splits = {lvl: split_means[rows, j] for lvl, rows in gp_rows.items()}
        for lvl in d.deep_levels:
            splits[lvl] = np.full(2 ** (lvl - 1), 0.5)
        return TreeDistribution(d.trees[cohort], splits, d.config.g0)


def mean_median(
    draws: PosteriorDraws,
    cohort: int,
    n_mc: int = 200,
) -> np.ndarray:
    """Per-draw medians of the conditional mean distribution of one future cohort."""
    builder = _MeanTreeBuilder(draws, n_mc=n_mc, seed_key=cohort)
    return np.array([builder.mean_tree(k, cohort).median() for k in range(draws.n_draws)])


def _series_for(
    draws: PosteriorDraws,
    target: str,
    ids,
    weights,
    builder: _MeanTreeBuilder | None,
) -> np.ndarray:
    idx = _cohort_indices(draws, ids)
    if not idx:
        raise ValueError("query needs at least one cohort")
    if target == "cohort-median" and len(idx) == 1:
        return draws.medians[:, idx[0]]
    if target in ("cohort-median", "mixture-median"):
        out = np.empty(draws.n_draws)
        for k in range(draws.n_draws):
            dists = [draws.tree_distribution(k, i) for i in idx]
            out[k] = mixture_median(dists, weights)
        return out
    # mean-median: mixture over conditional mean trees (singleton included)
    assert builder is not None
    out = np.empty(draws.n_draws)
    for k in range(draws.n_draws):
        split_means = builder.conditional_split_means(k)
        dists = [builder.mean_tree_from(split_means, i) for i in idx]
        out[k] = mixture_median(dists, weights)
    return out


def summarize(
    draws: PosteriorDraws,
    queries: list[QuerySpec],
    n_mc: int = 200,
    min_draws: int = 50,
) -> list[dict]:
    """Evaluate queries against the stored draws.

    Each row carries the posterior-median point estimate, the equal-tailed
    interval at the query level, and for comparisons the posterior of the
    log median ratio plus P(positive side > negative side).
    """
    if draws.n_draws < min_draws:
        raise ValueError(f"need at least {min_draws} retained draws, have {draws.n_draws}")
    needs_builder = any(
        q.target == "mean-median" for q in queries
    )
    builder = _MeanTreeBuilder(draws, n_mc=n_mc) if needs_builder else None
    rows = []
    for q in queries:
        alpha = 1.0 - q.level
        if q.is_comparison:
            pos = _series_for(draws, q.target, q.positive, q.positive_weights, builder)
            neg = _series_for(draws, q.target, q.negative, q.negative_weights, builder)
            ratio = np.log(pos) - np.log(neg)
            rows.append(
                {
                    "name": q.name,
                    "target": q.target,
                    "kind": "comparison",
                    "estimate": float(np.median(ratio)),
                    "lower": float(np.quantile(ratio, alpha / 2)),
                    "upper": float(np.quantile(ratio, 1 - alpha / 2)),
                    "prob_positive": float(np.mean(pos > neg)),
                    "n_draws": draws.n_draws,
                    "series": ratio,
                }
            )
        else:
            vals = _series_for(draws, q.target, q.cohorts, q.weights, builder)
            rows.append(
                {
                    "name": q.name,
                    "target": q.target,
                    "kind": "scalar",
                    "estimate": float(np.median(vals)),
                    "lower": float(np.quantile(vals, alpha / 2)),
                    "upper": float(np.quantile(vals, 1 - alpha / 2)),
                    "prob_positive": None,
                    "n_draws": draws.n_draws,
                    "series": vals,
                }
            )
    return rows


def density_grid(
    draws: PosteriorDraws,
    cohort_ids=None,
    n_grid: int = 200,
    u_max: float = 0.99,
) -> list[dict]:
    """Posterior mean density and survival on a per-cohort grid."""
    ids = list(cohort_ids) if cohort_ids is not None else list(draws.cohort_ids)
    idx = _cohort_indices(draws, ids)
    grid_u = np.linspace(1e-4, u_max, n_grid)
    rows = []
    for cid, i in zip(ids, idx):
        grid = draws.config.g0.quantile(grid_u)
        dens = np.zeros(n_grid)
        surv = np.zeros(n_grid)
        for k in range(draws.n_draws):
            dist = draws.tree_distribution(k, i)
            dens += dist.pdf(grid)
            surv += 1.0 - dist.cdf(grid)
        dens /= draws.n_draws
        surv /= draws.n_draws
        for t, d_val, s_val in zip(grid, dens, surv):
            rows.append({"cohort_id": cid, "t": float(t), "density": float(d_val), "survival": float(s_val)})
    return rows


# ---------------------------------------------------------------------------
# i/o
# ---------------------------------------------------------------------------

_REPORT_COLUMNS = ["name", "target", "kind", "estimate", "lower", "upper", "prob_positive", "n_draws"]


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            out = {k: row.get(k) for k in _REPORT_COLUMNS}
            if out["prob_positive"] is None:
                out["prob_positive"] = ""
            writer.writerow(out)


def write_report_json(rows: list[dict], path, include_draws: bool = False) -> None:
    payload = []
    for row in rows:
        item = {k: row.get(k) for k in _REPORT_COLUMNS}
        if include_draws:
            item["draws"] = np.asarray(row["series"]).tolist()
        payload.append(item)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_queries(path) -> list[QuerySpec]:
    """Parse the queries JSON document (a list of query records)."""
    with open(path) as fh:
        items = json.load(fh)
    if not isinstance(items, list):
        raise ValueError("queries file must contain a JSON list")
    out = []
    for item in items:
        comparison = item.get("comparison") or {}
        out.append(
            QuerySpec(
                name=item["name"],
                target=item.get("target", "cohort-median"),
                cohorts=tuple(item.get("cohorts", ())),
                weights=tuple(item["weights"]) if item.get("weights") else None,
                positive=tuple(comparison.get("positive", ())),
                negative=tuple(comparison.get("negative", ())),
                positive_weights=tuple(comparison["positive_weights"]) if comparison.get("positive_weights") else None,
                negative_weights=tuple(comparison["negative_weights"]) if comparison.get("negative_weights") else None,
                level=float(item.get("level", 0.95)),
            )
        )
    return out
