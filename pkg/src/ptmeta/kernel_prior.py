"""Similarity kernel across cohorts and prior moments for the tree nodes.

The kernel is an additive similarity score over categorical covariates,
gated by biomarker agreement and rescaled to a unit maximum. Node-level
prior means and covariances for cohort-specific partitions are elicited by
Monte Carlo simulation of the shared-partition process.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .partition import NodePath, PartitionTree
from .special_math import DistributionSpec, trigamma

__all__ = [
    "CovariateVector",
    "KernelWeights",
    "NodePrior",
    "PriorSettings",
    "ElicitationDiagnostics",
    "similarity_R",
    "build_correlation_matrix",
    "marginal_moments",
    "deep_beta_params",
    "elicit_node_moments",
    "gp_node_paths",
]

LOGIT_CLAMP = 12.0


@dataclass(frozen=True)
class CovariateVector:
    study_id: str
    biomarker: str  # "pos" | "neg"
    tumor: str
    agent: str
    phase: str = ""
    line: str = ""
    therapy_type: str = ""

    def __post_init__(self):
        if self.biomarker not in ("pos", "neg"):
            raise ValueError(f"biomarker must be 'pos' or 'neg', got {self.biomarker!r}")


@dataclass(frozen=True)
class KernelWeights:
    """Similarity increments; defaults give the maximum score of 8."""

    study: float = 1.0
    biomarker: float = 0.5
    tumor: float = 2.0
    agent: float = 2.0
    phase: float = 0.5
    line: float = 0.5
    therapy_type: float = 0.5
    nugget: float = 1.0

    def __post_init__(self):
        vals = (self.study, self.biomarker, self.tumor, self.agent, self.phase, self.line, self.therapy_type, self.nugget)
        if min(vals) < 0:
            raise ValueError("kernel weights must be nonnegative")
        if self.nugget <= 0:
            raise ValueError("the nugget weight must be positive")

    @property
    def normalizer(self) -> float:
        return (
            self.nugget
            + self.study
            + self.biomarker
            + self.tumor
            + self.agent
            + self.phase
            + self.line
            + self.therapy_type
        )

    @classmethod
    def simulation_profile(cls) -> "KernelWeights":
        """Tumor/agent/biomarker rules only (phase, line, therapy zeroed)."""
        return cls(phase=0.0, line=0.0, therapy_type=0.0)


def _gated_score(x: CovariateVector, y: CovariateVector, w: KernelWeights) -> float:
    if x.biomarker != y.biomarker:
        return 0.0
    score = w.biomarker
    if x.tumor == y.tumor and x.tumor != "other":
        score += w.tumor
    if x.agent == y.agent:
        score += w.agent
    if x.phase == y.phase:
        score += w.phase
    if x.line == y.line:
        score += w.line
    if x.therapy_type == y.therapy_type:
        score += w.therapy_type
    return score


def similarity_R(
    x: CovariateVector,
    y: CovariateVector,
    w: KernelWeights | None = None,
    same_cohort: bool | None = None,
) -> float:
    """Correlation between the logit splitting probabilities of two cohorts.

    ``same_cohort`` distinguishes a cohort from an identically-labelled twin;
    by default two equal covariate vectors are treated as the same cohort.
    """
    w = w or KernelWeights()
    if same_cohort is None:
        same_cohort = x == y
    num = w.nugget if same_cohort else 0.0
    if x.study_id == y.study_id:
        num += w.study
    num += _gated_score(x, y, w)
    return num / w.normalizer


def build_correlation_matrix(
    covs: list[CovariateVector],
    w: KernelWeights | None = None,
    diagnostics: dict | None = None,
) -> np.ndarray:
    """Unit-diagonal correlation matrix over cohorts, repaired to be PSD.

    The default construction is PSD by design; for nonstandard weights a
    failed eigenvalue check is repaired by inflating the nugget, and the
    applied rescale factor is recorded in ``diagnostics``.
    """
    w = w or KernelWeights()
    n = len(covs)
    if n < 1:
        raise ValueError("need at least one cohort")
    mat = np.empty((n, n))
    for i in range(n):
        mat[i, i] = 1.0
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = similarity_R(covs[i], covs[j], w, same_cohort=False)
    mat, rescale = _repair_psd(mat, w.nugget, w.normalizer)
    if diagnostics is not None:
        diagnostics["nugget_rescale"] = rescale
    return mat


def _repair_psd(mat: np.ndarray, nugget: float, denom: float) -> tuple[np.ndarray, float]:
    """Inflate the nugget until the minimum eigenvalue clears -1e-8."""
    lam = float(np.linalg.eigvalsh(mat).min())
    if lam >= -1e-8:
        return mat, 1.0
    extra = (-lam + 1e-9) * denom  # in score units
    repaired = (mat * denom + extra * np.eye(mat.shape[0])) / (denom + extra)
    return repaired, (nugget + extra) / nugget


def marginal_moments(d: int, c: float) -> tuple[float, float]:
    """Logit-normal moments matching Be(c(d+1)^2, c(d+1)^2)."""
    if d < 1 or c <= 0:
        raise ValueError("marginal moments need d >= 1 and c > 0")
    return 0.0, 2.0 * trigamma(c * (d + 1) ** 2)


def deep_beta_params(d: int, c: float, rule: str = "dplus1") -> float:
    """Symmetric beta concentration at level d.

    "dplus1" gives c(d+1)^2 and "d" gives c d^2; "classic" is the canonical
    unit-precision schedule d^2, which is the one that reproduces the
    published a priori interval on a new-study median (c is inert there).
    """
    if rule == "dplus1":
        return c * (d + 1) ** 2
    if rule == "d":
        return c * d**2
    if rule == "classic":
        return float(d**2)
    raise ValueError(f"unknown deep-alpha rule {rule!r}")


def gp_node_paths(gp_depth: int) -> list[NodePath]:
    """Split-node ids (left-child paths) for levels 1..D, level then lex order."""
    out = []
    for d in range(1, gp_depth + 1):
        for idx in range(2 ** (d - 1)):
            parent = tuple((idx >> (d - 2 - i)) & 1 for i in range(d - 1)) if d > 1 else ()
            out.append(NodePath(parent + (0,)))
    return out


@dataclass(frozen=True)
class NodePrior:
    """Joint prior over all cohorts of one node's logit splitting probability."""

    node: NodePath
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("node prior dimensions disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class PriorSettings:
    """Shared-process hyperparameters used for elicitation and deep levels."""

    c: float = 5.0
    g0: DistributionSpec = field(default_factory=lambda: DistributionSpec.half_cauchy(3.5))
    gp_depth: int = 2
    alpha_rule: str = "dplus1"

    def concentration(self, d: int) -> float:
        """Beta concentration at level d under the configured rule."""
        return deep_beta_params(d, self.c, self.alpha_rule)

    def deep_alpha(self, d: int) -> float:
        return self.concentration(d)

    def gp_sigma2(self, d: int) -> float:
        """Logit-normal variance matching the level-d beta concentration."""
        return 2.0 * trigamma(self.concentration(d))


@dataclass
class ElicitationDiagnostics:
    n_mc: int = 0
    clamped: int = 0
    total_evals: int = 0


def _binary_digits(u: float, depth: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Binary expansion of u in [0, 1]: digits, per-level prefix indices, remainder."""
    digits = np.zeros(depth, dtype=np.int64)
    prefix = np.zeros(depth, dtype=np.int64)  # index of the parent interval at each level
    rem = min(max(u, 0.0), 1.0)
    acc = 0
    for d in range(depth):
        prefix[d] = acc
        rem *= 2.0
        bit = 1 if rem >= 1.0 else 0
        rem -= bit
        digits[d] = bit
        acc = (acc << 1) | bit
    return digits, prefix, rem


def elicit_node_moments(
    settings: PriorSettings,
    correlation: np.ndarray,
    trees: list[PartitionTree],
    n_mc: int,
    rng: np.random.Generator,
) -> tuple[list[NodePrior], ElicitationDiagnostics]:
    """Monte-Carlo moments of logit conditional probabilities per tree node.

    Simulates the shared-partition process (dyadic under g0, correlated
    logits at levels <= gp_depth, independent symmetric betas below) and
    evaluates each cohort's conditional splitting probabilities on its own
    anchored intervals. Returns one prior per split node at levels 1..D.
    """
    if n_mc < 1000:
        raise ValueError("moment elicitation needs n_mc >= 1000")
    n_cohorts = len(trees)
    if correlation.shape != (n_cohorts, n_cohorts):
        raise ValueError("correlation matrix does not match the cohort count")
    depth = trees[0].depth
    if any(t.depth != depth for t in trees):
        raise ValueError("all cohort trees must share the same depth")
    gp_depth = settings.gp_depth

    # evaluation u-points per cohort: the centering-CDF values of every
    # breakpoint at levels 1..gp_depth (parents and split points)
    points: list[tuple[int, float]] = []
    point_col: dict[tuple[int, float], int] = {}
    for i, tree in enumerate(trees):
        for u in tree.fvals[gp_depth]:
            key = (i, float(u))
            if key not in point_col:
                point_col[key] = len(points)
                points.append(key)
    n_points = len(points)

    digits = np.empty((n_points, depth), dtype=np.int64)
    prefixes = np.empty((n_points, depth), dtype=np.int64)
    fracs = np.empty(n_points)
    for p, (_, u) in enumerate(points):
        digits[p], prefixes[p], fracs[p] = _binary_digits(u, depth)

    # per level: which (cohort, node) pairs are needed, and a column lookup
    needed_cols: list[dict[tuple[int, int], int]] = []
    for d in range(depth):
        lookup: dict[tuple[int, int], int] = {}
        for p, (i, _) in enumerate(points):
            key = (i, int(prefixes[p, d]))
            if key not in lookup:
                lookup[key] = len(lookup)
        needed_cols.append(lookup)

    # draw splitting probabilities for every needed node
    chol = np.linalg.cholesky(correlation + 1e-10 * np.eye(n_cohorts))
    y_draws: list[np.ndarray] = []
    for d in range(depth):
        level = d + 1
        lookup = needed_cols[d]
        cols = np.empty((n_mc, len(lookup)))
        if level <= gp_depth:
            sigma = np.sqrt(settings.gp_sigma2(level))
            by_node: dict[int, np.ndarray] = {}
            for (i, node), col in lookup.items():
                if node not in by_node:
                    by_node[node] = expit(sigma * (rng.standard_normal((n_mc, n_cohorts)) @ chol.T))
                cols[:, col] = by_node[node][:, i]
        else:
            alpha = settings.deep_alpha(level)
            cols[:] = rng.beta(alpha, alpha, size=(n_mc, len(lookup)))
        y_draws.append(cols)

    # shared-process CDF at every evaluation point
    f_at = np.empty((n_mc, n_points))
    for p, (i, _) in enumerate(points):
        cum = np.ones(n_mc)
        f = np.zeros(n_mc)
        for d in range(depth):
            y = y_draws[d][:, needed_cols[d][(i, int(prefixes[p, d]))]]
            if digits[p, d]:
                f += cum * y
                cum *= 1.0 - y
            else:
                cum *= y
        f_at[:, p] = f + cum * fracs[p]

    def f_of(i: int, u: float) -> np.ndarray:
        if u <= 0.0:
            return np.zeros(n_mc)
        if u >= 1.0:
            return np.ones(n_mc)
        return f_at[:, point_col[(i, float(u))]]

    diag = ElicitationDiagnostics(n_mc=n_mc)
    priors = []
    for path in gp_node_paths(gp_depth):
        level = path.level
        parent_idx = path.index >> 1
        logits = np.empty((n_mc, n_cohorts))
        for i, tree in enumerate(trees):
            flo, fhi = tree.interval_f(level - 1, parent_idx) if level > 1 else (0.0, 1.0)
            fs = tree.split_f(level - 1, parent_idx) if level > 1 else float(tree.fvals[1][0])
            lo = f_of(i, flo)
            hi = f_of(i, fhi)
            mid = f_of(i, fs)
            denom = np.maximum(hi - lo, 1e-300)
            prob = np.clip((mid - lo) / denom, 0.0, 1.0)
            z = np.log(np.maximum(prob, 1e-300)) - np.log(np.maximum(1.0 - prob, 1e-300))
            clamped = np.abs(z) > LOGIT_CLAMP
            diag.clamped += int(clamped.sum())
            diag.total_evals += n_mc
            logits[:, i] = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
        mean = logits.mean(axis=0)
        cov = np.cov(logits, rowvar=False).reshape(n_cohorts, n_cohorts)
        priors.append(NodePrior(path, mean, cov))
    return priors, diag
