"""Synthetic meta-analysis study: generation, baselines, bias tables.

Generates cohort summaries from a factorial design over tumor types and
agents (with a biomarker offset and study-level multiplicative effects),
fits the tree model, and compares log-median-ratio estimates against a
classical random-effects meta-analysis.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .data_model import CohortSummary, LatentState, derive_summary
from .kernel_prior import CovariateVector
from .sampler import FitConfig, PosteriorDraws, run_chain
from .special_math import DistributionSpec, rng_stream
from .summaries import _MeanTreeBuilder, mixture_median

__all__ = [
    "CellSpec",
    "ScenarioSpec",
    "EffectEstimate",
    "RandomEffectsFit",
    "StudyTruth",
    "generate_dataset",
    "effect_from_pair",
    "re_meta_analysis",
    "run_study",
    "write_bias_csv",
    "write_truth_csv",
]

logger = logging.getLogger(__name__)

_SIM_STREAM = 7


@dataclass(frozen=True)
class CellSpec:
    tumor: str
    agent: str
    family: str  # event-time law of the cell
    base_median: float  # marker-negative median before study effects
    n_studies: int


TABLE1_CELLS = (
    CellSpec("TT1", "A0", "exponential", 2.5, 5),
    CellSpec("TT2", "A0", "half-normal", 3.0, 5),
    CellSpec("TT3", "A0", "two-component-mixture", 3.5, 3),
    CellSpec("TT1", "A1", "exponential", 3.5, 5),
    CellSpec("TT2", "A1", "half-normal", 4.0, 5),
    CellSpec("TT3", "A1", "two-component-mixture", 4.5, 2),
)


@dataclass(frozen=True)
class ScenarioSpec:
    cells: tuple[CellSpec, ...] = TABLE1_CELLS
    marker_offset: float = 0.5
    effect_low: float = 0.8
    effect_high: float = 1.2
    n_subjects: int = 20
    conf_level: float = 0.95
    transform: str = "log"

    def __post_init__(self):
        if any(c.base_median <= 0 for c in self.cells):
            raise ValueError("cell medians must be positive")
        if not 0 < self.effect_low <= self.effect_high:
            raise ValueError("study-effect range must be positive and ordered")

    @property
    def n_studies(self) -> int:
        return sum(c.n_studies for c in self.cells)

    def cell_weights(self) -> dict[tuple[str, str], float]:
        total = self.n_studies
        return {(c.tumor, c.agent): c.n_studies / total for c in self.cells}


def event_law(family: str, median: float) -> DistributionSpec:
    if family == "two-component-mixture":
        return DistributionSpec.mixture(median)
    return DistributionSpec(family, median)


@dataclass
class StudyTruth:
    cohort_medians: dict[str, float]
    cell_log_ratios: dict[tuple[str, str], float]
    overall_log_ratio_mixture: float
    overall_log_ratio_weighted: float
    weights: dict[tuple[str, str], float]


def _mixture_arm_median(spec: ScenarioSpec, marker: str) -> float:
    """Median of the study-weighted mixture of cell laws (unit study effect)."""
    weights = spec.cell_weights()
    laws = []
    for cell in spec.cells:
        median = cell.base_median + (spec.marker_offset if marker == "pos" else 0.0)
        laws.append((weights[(cell.tumor, cell.agent)], event_law(cell.family, median)))

    def mix_cdf(t):
        return sum(w * law.cdf(t) for w, law in laws) - 0.5

    return brentq(mix_cdf, 0.5, 50.0, xtol=1e-12)


def generate_dataset(
    spec: ScenarioSpec,
    seed: int,
) -> tuple[list[CohortSummary], StudyTruth]:
    """Simulate one meta-analysis dataset of reported triples.

    Each study gets a multiplicative median effect and a marker-positive /
    marker-negative cohort pair; event times are fully observed and the
    triple comes from the Kaplan-Meier band crossings.
    """
    rng = rng_stream(seed, _SIM_STREAM)
    cohorts: list[CohortSummary] = []
    truth_medians: dict[str, float] = {}
    study_no = 0
    for cell in spec.cells:
        for _ in range(cell.n_studies):
            study_no += 1
            study_id = f"S{study_no:02d}"
            effect = rng.uniform(spec.effect_low, spec.effect_high)
            for marker in ("pos", "neg"):
                median = (cell.base_median + (spec.marker_offset if marker == "pos" else 0.0)) * effect
                law = event_law(cell.family, median)
                times = law.quantile(rng.uniform(size=spec.n_subjects) * (1.0 - 1e-12))
                latent = LatentState(times, np.full(spec.n_subjects, 1e12))
                triple = derive_summary(latent, spec.conf_level, spec.transform)
                cid = f"{study_id}-{marker}"
                covs = CovariateVector(study_id, marker, cell.tumor, cell.agent)
                cohorts.append(
                    CohortSummary(
                        study_id=study_id,
                        cohort_id=cid,
                        covariates=covs,
                        l=triple.l,
                        m=triple.m,
                        h=triple.h,
                        n=spec.n_subjects,
                        n_events=spec.n_subjects,
                        censor_class="exact-pattern",
                        conf_level=spec.conf_level,
                    )
                )
                truth_medians[cid] = median
    cell_ratios = {
        (c.tumor, c.agent): math.log((c.base_median + spec.marker_offset) / c.base_median)
        for c in spec.cells
    }
    weights = spec.cell_weights()
    truth = StudyTruth(
        cohort_medians=truth_medians,
        cell_log_ratios=cell_ratios,
        overall_log_ratio_mixture=math.log(
            _mixture_arm_median(spec, "pos") / _mixture_arm_median(spec, "neg")
        ),
        overall_log_ratio_weighted=sum(weights[k] * v for k, v in cell_ratios.items()),
        weights=weights,
    )
    return cohorts, truth


# ---------------------------------------------------------------------------
# classical random-effects baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectEstimate:
    y: float  # log median ratio
    v: float  # sampling variance
    tumor: str
    agent: str
    study_id: str

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"effect variance must be positive (study {self.study_id})")


def effect_from_pair(pos: CohortSummary, neg: CohortSummary) -> EffectEstimate:
    """Study-level log median ratio with a CI-width variance.

    Each arm's log-median variance is approximated by its CI width on the
    log scale over twice the normal quantile, then the arms are summed.
    """
    if pos.l is None or pos.h is None or neg.l is None or neg.h is None:
        raise ValueError(f"study {pos.study_id}: effects need complete confidence intervals")
    z = float(norm.ppf(0.5 + pos.conf_level / 2.0))
    v = ((math.log(pos.h) - math.log(pos.l)) ** 2 + (math.log(neg.h) - math.log(neg.l)) ** 2) / (
        2.0 * z
    ) ** 2
    return EffectEstimate(
        y=math.log(pos.m / neg.m),
        v=v,
        tumor=pos.covariates.tumor,
        agent=pos.covariates.agent,
        study_id=pos.study_id,
    )


@dataclass
class RandomEffectsFit:
    labels: list[str]
    estimates: np.ndarray
    std_errors: np.ndarray
    tau2: float

    def coef(self, label: str) -> tuple[float, float]:
        i = self.labels.index(label)
        return float(self.estimates[i]), float(self.std_errors[i])


def re_meta_analysis(effects: list[EffectEstimate], design: str = "intercept-only") -> RandomEffectsFit:
    """Method-of-moments random-effects fit (DerSimonian-Laird).

    "intercept-only" pools a single mean; "tumor-agent-interaction" fits one
    coefficient per tumor-agent cell (cell-means coding).
    """
    if len(effects) < 2:
        raise ValueError("need at least two effects")
    y = np.array([e.y for e in effects])
    v = np.array([e.v for e in effects])
    if design == "intercept-only":
        labels = ["intercept"]
        x = np.ones((y.size, 1))
    elif design == "tumor-agent-interaction":
        cells = sorted({(e.tumor, e.agent) for e in effects})
        labels = [f"{t}:{a}" for t, a in cells]
        x = np.zeros((y.size, len(cells)))
        for i, e in enumerate(effects):
            x[i, cells.index((e.tumor, e.agent))] = 1.0
    else:
        raise ValueError(f"unknown design {design!r}")
    k, p = x.shape
    if np.linalg.matrix_rank(x) < p:
        counts = x.sum(axis=0)
        missing = [labels[j] for j in np.nonzero(counts == 0)[0]]
        raise ValueError(f"design is rank deficient; empty cells: {missing}")

    w = 1.0 / v
    xtwx = x.T @ (w[:, None] * x)
    hat = x @ np.linalg.solve(xtwx, x.T @ (w * y))
    q = float(np.sum(w * (y - hat) ** 2))
    # tr(P) for P = W - WX(X'WX)^-1 X'W
    wx = w[:, None] * x
    tr_p = w.sum() - float(np.trace(np.linalg.solve(xtwx, wx.T @ wx)))
    tau2 = max(0.0, (q - (k - p)) / tr_p)

    w_star = 1.0 / (v + tau2)
    xtwx_star = x.T @ (w_star[:, None] * x)
    cov = np.linalg.inv(xtwx_star)
    beta = cov @ (x.T @ (w_star * y))
    return RandomEffectsFit(labels, beta, np.sqrt(np.diag(cov)), tau2)


# ---------------------------------------------------------------------------
# full study
# ---------------------------------------------------------------------------


def _future_covariates(spec: ScenarioSpec) -> list[CovariateVector]:
    """One future cohort per tumor-agent-marker combination.

    The marker-positive and -negative future cohorts of a cell share a
    pseudo study id: a matched pair differs only by biomarker status.
    """
    out = []
    for cell in spec.cells:
        for marker in ("pos", "neg"):
            out.append(CovariateVector(f"F-{cell.tumor}-{cell.agent}", marker, cell.tumor, cell.agent))
    return out


def run_study(
    spec: ScenarioSpec,
    replicates: int,
    fit_config: FitConfig,
    seed: int,
    n_mc_mean: int = 200,
) -> list[dict]:
    """Generate, fit and score ``replicates`` datasets.

    Emits long-format rows (replicate, method, cell, estimate, truth, bias)
    for the tree model's draw-median and conditional-mean-median estimates
    and for the classical meta-regression, per cell and overall.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    rows: list[dict] = []
    for rep in range(replicates):
        data, truth = generate_dataset(spec, seed + rep)
        covs = [c.covariates for c in data] + _future_covariates(spec)
        rep_cfg = replace(fit_config, seed=fit_config.seed + rep, transform=spec.transform)
        draws = run_chain(data, covs, rep_cfg)
        rows.extend(_score_replicate(rep, spec, truth, draws, data, n_mc_mean))
        logger.info("replicate %d/%d scored", rep + 1, replicates)
    return rows


def _score_replicate(
    rep: int,
    spec: ScenarioSpec,
    truth: StudyTruth,
    draws: PosteriorDraws,
    data: list[CohortSummary],
    n_mc_mean: int,
) -> list[dict]:
    n_obs = draws.n_observed
    covs = draws.covariates
    if covs is None or len(covs) <= n_obs:
        raise ValueError("scoring needs a fit with future cohorts for every design cell")
    cell_of = {}
    for j in range(n_obs, len(covs)):
        cov = covs[j]
        cell_of[(cov.tumor, cov.agent, cov.biomarker)] = j
    for cell in spec.cells:
        for marker in ("pos", "neg"):
            if (cell.tumor, cell.agent, marker) not in cell_of:
                raise ValueError(f"fit lacks a future cohort for {cell.tumor}:{cell.agent}:{marker}")
    cells = [(c.tumor, c.agent) for c in spec.cells]
    weights = np.array([truth.weights[c] for c in cells])

    # draw-median estimates
    med = draws.medians
    cell_ratio_draws = {
        c: np.log(med[:, cell_of[(c[0], c[1], "pos")]]) - np.log(med[:, cell_of[(c[0], c[1], "neg")]])
        for c in cells
    }
    pos_idx = [cell_of[(t, a, "pos")] for t, a in cells]
    neg_idx = [cell_of[(t, a, "neg")] for t, a in cells]
    overall_draws = np.empty(draws.n_draws)
    builder = _MeanTreeBuilder(draws, n_mc=n_mc_mean)
    mean_cell_draws = {c: np.empty(draws.n_draws) for c in cells}
    mean_overall_draws = np.empty(draws.n_draws)
    for k in range(draws.n_draws):
        pos_dists = [draws.tree_distribution(k, i) for i in pos_idx]
        neg_dists = [draws.tree_distribution(k, i) for i in neg_idx]
        overall_draws[k] = math.log(
            mixture_median(pos_dists, weights) / mixture_median(neg_dists, weights)
        )
        split_means = builder.conditional_split_means(k)
        mean_pos = [builder.mean_tree_from(split_means, i) for i in pos_idx]
        mean_neg = [builder.mean_tree_from(split_means, i) for i in neg_idx]
        for c, dp, dn in zip(cells, mean_pos, mean_neg):
            mean_cell_draws[c][k] = math.log(dp.median() / dn.median())
        mean_overall_draws[k] = math.log(
            mixture_median(mean_pos, weights) / mixture_median(mean_neg, weights)
        )

    # classical baseline
    by_study: dict[str, dict[str, CohortSummary]] = {}
    for c in data:
        by_study.setdefault(c.study_id, {})[c.covariates.biomarker] = c
    effects = [effect_from_pair(v["pos"], v["neg"]) for v in by_study.values()]
    fit_cells = re_meta_analysis(effects, "tumor-agent-interaction")
    fit_overall = re_meta_analysis(effects, "intercept-only")

    rows = []

    def add(method, cell_key, estimate, truth_val):
        rows.append(
            {
                "replicate": rep,
                "method": method,
                "cell": cell_key,
                "estimate": float(estimate),
                "truth": float(truth_val),
                "bias": float(estimate - truth_val),
            }
        )

    for c in cells:
        label = f"{c[0]}:{c[1]}"
        add("mvpt-median", label, np.median(cell_ratio_draws[c]), truth.cell_log_ratios[c])
        add("mvpt-mean-median", label, np.median(mean_cell_draws[c]), truth.cell_log_ratios[c])
        add("meta-regression", label, fit_cells.coef(label)[0], truth.cell_log_ratios[c])
    add("mvpt-median", "overall", np.median(overall_draws), truth.overall_log_ratio_mixture)
    add("mvpt-mean-median", "overall", np.median(mean_overall_draws), truth.overall_log_ratio_mixture)
    add("meta-regression", "overall", fit_overall.coef("intercept")[0], truth.overall_log_ratio_weighted)
    return rows


def write_bias_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["replicate", "method", "cell", "estimate", "truth", "bias"])
        writer.writeheader()
        writer.writerows(rows)


def write_truth_csv(truth: StudyTruth, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "key", "value"])
        for cid, m in truth.cohort_medians.items():
            writer.writerow(["cohort_median", cid, m])
        for (t, a), r in truth.cell_log_ratios.items():
            writer.writerow(["cell_log_ratio", f"{t}:{a}", r])
        writer.writerow(["overall_log_ratio", "mixture", truth.overall_log_ratio_mixture])
        writer.writerow(["overall_log_ratio", "weighted", truth.overall_log_ratio_weighted])
