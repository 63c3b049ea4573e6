"""The Gibbs sampler over correlated splitting probabilities and latent data.

One sweep refreshes the latent censoring patterns, recounts interval
occupancy, updates the correlated (logit) splitting probabilities node by
node via Polya-Gamma augmentation, and draws the deep beta levels
conjugately. All randomness flows through counter-seeded streams, so a run
is bit-reproducible given the master seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit

from .data_model import CohortSummary, LatentImputer
from .kernel_prior import (
    CovariateVector,
    KernelWeights,
    NodePrior,
    PriorSettings,
    build_correlation_matrix,
    elicit_node_moments,
)
from .partition import NodePath, PartitionTree, build_cohort_partition, future_triple
from .special_math import (
    DistributionSpec,
    chol_with_jitter,
    rng_stream,
    sample_polya_gamma_batch,
)

__all__ = [
    "FitConfig",
    "ChainState",
    "PosteriorDraws",
    "TreeDistribution",
    "pg_node_update",
    "deep_level_update",
    "cdf_eval",
    "density_eval",
    "run_chain",
    "sample_prior_medians",
    "save_fit",
    "load_fit",
]

logger = logging.getLogger(__name__)

# stream coordinates: (chain, module, index)
_ELICIT, _INIT, _LATENT, _PG, _DEEP = 1, 2, 3, 4, 5

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 4000
    burn_in: int = 1000
    thinning: int = 3
    gp_depth: int = 2
    total_depth: int = 8
    c: float = 5.0
    g0: DistributionSpec = field(default_factory=lambda: DistributionSpec.half_cauchy(3.5))
    censoring: DistributionSpec = field(default_factory=lambda: DistributionSpec.exponential_from_mean(10.0))
    kernel: KernelWeights = field(default_factory=KernelWeights)
    transform: str = "log"
    seed: int = 20240601
    latent_steps: int = 1
    n_mc_elicit: int = 5000
    alpha_rule: str = "dplus1"
    debug_check_every: int = 100

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn-in must be smaller than the iteration count")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if not 1 <= self.gp_depth <= self.total_depth:
            raise ValueError("need 1 <= gp_depth <= total_depth")

    @property
    def prior_settings(self) -> PriorSettings:
        return PriorSettings(c=self.c, g0=self.g0, gp_depth=self.gp_depth, alpha_rule=self.alpha_rule)

    def deep_alpha(self, d: int) -> float:
        return self.prior_settings.deep_alpha(d)


class TreeDistribution:
    """One cohort's current random distribution: tree plus splitting probs.

    ``splits[d]`` is the vector of left-child probabilities of the level-d
    splits (length 2^(d-1)); beyond the stored depth the distribution
    follows the centering law conditionally within each leaf.
    """

    def __init__(self, tree: PartitionTree, splits: dict[int, np.ndarray], g0: DistributionSpec):
        self.tree = tree
        self.splits = splits
        self.g0 = g0
        depth = tree.depth
        self._leaf_f = np.concatenate(([0.0], tree.fvals[depth], [1.0]))
        # leaf masses by interleaved products down the tree
        mass = np.ones(1)
        for d in range(1, depth + 1):
            y = splits[d]
            mass = np.stack([mass * y, mass * (1.0 - y)], axis=1).reshape(-1)
        self._leaf_mass = mass
        self._cum_mass = np.concatenate(([0.0], np.cumsum(mass)))

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        leaf = self.tree.leaf_indices(tt)
        f_lo = self._leaf_f[leaf]
        f_hi = self._leaf_f[leaf + 1]
        u = self.g0.cdf(tt)
        frac = np.clip((u - f_lo) / np.maximum(f_hi - f_lo, 1e-300), 0.0, 1.0)
        out = self._cum_mass[leaf] + self._leaf_mass[leaf] * frac
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if scalar else out

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        uu = np.clip(np.atleast_1d(u).copy(), 0.0, 1.0 - 1e-16)
        leaf = np.searchsorted(self._cum_mass, uu, side="right") - 1
        leaf = np.clip(leaf, 0, self._leaf_mass.size - 1)
        rem = (uu - self._cum_mass[leaf]) / np.maximum(self._leaf_mass[leaf], 1e-300)
        rem = np.clip(rem, 0.0, 1.0 - 1e-16)
        f_lo = self._leaf_f[leaf]
        f_hi = self._leaf_f[leaf + 1]
        out = self.g0.quantile(np.minimum(f_lo + rem * (f_hi - f_lo), 1.0 - 1e-16))
        return float(out[0]) if scalar else out

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        leaf = self.tree.leaf_indices(tt)
        f_lo = self._leaf_f[leaf]
        f_hi = self._leaf_f[leaf + 1]
        out = self._leaf_mass[leaf] * self.g0.pdf(tt) / np.maximum(f_hi - f_lo, 1e-300)
        return float(out[0]) if scalar else out

    def survival(self, t):
        """P(T > t), switching to the centering tail within the last leaf."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        last_break = float(self._leaf_f[-2])
        out = 1.0 - self.cdf(tt)
        in_tail = self.g0.cdf(tt) >= last_break
        if np.any(in_tail):
            tail_mass = self._leaf_mass[-1]
            out = np.where(
                in_tail,
                tail_mass * self.g0.survival(tt) / max(1.0 - last_break, 1e-300),
                out,
            )
        return float(out[0]) if scalar else out

    def sample_above(self, t, rng: np.random.Generator):
        """Draws conditioned on exceeding t; exact in the far tail.

        Beyond the last breakpoint the conditional law coincides with the
        centering distribution's, so tail conditioning delegates there and
        never suffers cdf saturation.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.maximum(np.atleast_1d(t), 0.0)
        out = np.empty_like(tt)
        cut = float(self.tree.breaks[self.tree.depth][-1])
        lo = self.cdf(tt)
        tail = (tt >= cut) | (lo >= 1.0 - 1e-12)
        if np.any(tail):
            out[tail] = self.g0.sample_above(tt[tail], rng)
        bulk = ~tail
        if np.any(bulk):
            u = lo[bulk] + (1.0 - lo[bulk]) * rng.uniform(size=int(bulk.sum()))
            out[bulk] = self.quantile(np.minimum(u, 1.0 - 1e-16))
            out[bulk] = np.maximum(out[bulk], np.nextafter(tt[bulk], math.inf))
        return float(out[0]) if scalar else out

    def median(self) -> float:
        return float(self.quantile(0.5))


@dataclass
class ChainState:
    """Current draw: GP-node logits, deep splitting probabilities, latent data."""

    z: np.ndarray  # (n_gp_nodes, I)
    y_deep: dict[int, np.ndarray]  # level -> (I, 2^(d-1))
    iteration: int = 0

    def splits_for(self, cohort: int, gp_level_rows: dict[int, list[int]]) -> dict[int, np.ndarray]:
        out: dict[int, np.ndarray] = {}
        for d, rows in gp_level_rows.items():
            out[d] = expit(self.z[rows, cohort])
        for d, mat in self.y_deep.items():
            out[d] = mat[cohort]
        return out


def deep_level_update(counts: tuple, alpha: float, rng: np.random.Generator) -> float:
    """Conjugate beta draw for one deep node given its child counts."""
    if alpha <= 0:
        raise ValueError("beta parameter must be positive")
    n0, n1 = counts
    return float(rng.beta(alpha + n0, alpha + n1))


class _NodeUpdater:
    """Per-node linear-algebra cache for the Polya-Gamma update."""

    def __init__(self, prior: NodePrior):
        self.prior = prior
        self.label = f"node {prior.node}"
        self._full_chol = chol_with_jitter(prior.cov, self.label)
        self._by_active: dict[bytes, tuple] = {}

    def _operators(self, active: np.ndarray):
        key = active.tobytes()
        ops = self._by_active.get(key)
        if ops is None:
            idx = np.nonzero(active)[0]
            rest = np.nonzero(~active)[0]
            cov = self.prior.cov
            k11 = cov[np.ix_(idx, idx)]
            l11 = chol_with_jitter(k11, self.label)
            k11_inv = cho_solve((l11, True), np.eye(idx.size))
            if rest.size:
                gain = cov[np.ix_(rest, idx)] @ k11_inv
                schur = cov[np.ix_(rest, rest)] - gain @ cov[np.ix_(idx, rest)]
                schur_chol = chol_with_jitter(0.5 * (schur + schur.T), self.label)
            else:
                gain = np.zeros((0, idx.size))
                schur_chol = np.zeros((0, 0))
            ops = (idx, rest, k11_inv, gain, schur_chol)
            self._by_active[key] = ops
        return ops

    def update(
        self,
        counts_left: np.ndarray,
        counts_parent: np.ndarray,
        z: np.ndarray,
        rng: np.random.Generator,
    ) -> np.ndarray:
        prior = self.prior
        active = counts_parent >= 1
        out = np.empty_like(z)
        if not active.any():
            out[:] = prior.mean + self._full_chol @ rng.standard_normal(z.size)
            return out
        idx, rest, k11_inv, gain, schur_chol = self._operators(active)
        omega = sample_polya_gamma_batch(counts_parent[idx], z[idx], rng)
        kappa = counts_left[idx] - counts_parent[idx] / 2.0
        precision = k11_inv + np.diag(omega)
        chol_p = chol_with_jitter(precision, self.label)
        b = kappa + k11_inv @ prior.mean[idx]
        mean = cho_solve((chol_p, True), b)
        z_active = mean + solve_triangular(chol_p.T, rng.standard_normal(idx.size), lower=False)
        out[idx] = z_active
        if rest.size:
            cond_mean = prior.mean[rest] + gain @ (z_active - prior.mean[idx])
            out[rest] = cond_mean + schur_chol @ rng.standard_normal(rest.size)
        return out


def pg_node_update(
    prior: NodePrior,
    counts_left: np.ndarray,
    counts_parent: np.ndarray,
    z: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One Polya-Gamma Gibbs update of a node's logit vector across cohorts.

    Cohorts with observations in the parent interval get an omega draw and a
    joint Gaussian update; the remaining coordinates are propagated from the
    conditional prior.
    """
    return _NodeUpdater(prior).update(
        np.asarray(counts_left, float), np.asarray(counts_parent, float), np.asarray(z, float), rng
    )


def cdf_eval(dist: TreeDistribution, t) -> float:
    return dist.cdf(t)


def density_eval(dist: TreeDistribution, t) -> float:
    return dist.pdf(t)


@dataclass
class PosteriorDraws:
    """Retained snapshots of the chain plus per-draw derived medians."""

    z: np.ndarray  # (n_draws, n_gp_nodes, I)
    deep: np.ndarray  # (n_draws, I, n_deep_nodes)
    medians: np.ndarray  # (n_draws, I)
    gp_paths: list[str]
    deep_levels: list[int]
    cohort_ids: list[str]
    n_observed: int
    config: FitConfig
    trees: list[PartitionTree]
    node_priors: list[NodePrior]
    acceptance: dict | None = None
    covariates: list[CovariateVector] | None = None

    @property
    def n_draws(self) -> int:
        return self.z.shape[0]

    @property
    def n_cohorts(self) -> int:
        return self.z.shape[2]

    def _deep_slices(self) -> dict[int, slice]:
        out = {}
        start = 0
        for d in self.deep_levels:
            size = 2 ** (d - 1)
            out[d] = slice(start, start + size)
            start += size
        return out

    def tree_distribution(self, draw: int, cohort: int) -> TreeDistribution:
        gp_rows: dict[int, list[int]] = {}
        for row, path in enumerate(self.gp_paths):
            gp_rows.setdefault(len(path), []).append(row)
        splits = {d: expit(self.z[draw, rows, cohort]) for d, rows in gp_rows.items()}
        sl = self._deep_slices()
        for d in self.deep_levels:
            splits[d] = self.deep[draw, cohort, sl[d]]
        return TreeDistribution(self.trees[cohort], splits, self.config.g0)

    @classmethod
    def concatenate(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]
        return cls(
            z=np.concatenate([p.z for p in parts]),
            deep=np.concatenate([p.deep for p in parts]),
            medians=np.concatenate([p.medians for p in parts]),
            gp_paths=first.gp_paths,
            deep_levels=first.deep_levels,
            cohort_ids=first.cohort_ids,
            n_observed=first.n_observed,
            config=first.config,
            trees=first.trees,
            node_priors=first.node_priors,
            covariates=first.covariates,
        )


class _Chain:
    """Owns the mutable state and streams of a single chain."""

    def __init__(
        self,
        data: list[CohortSummary],
        covs: list[CovariateVector],
        config: FitConfig,
        chain_index: int = 0,
        node_priors: list[NodePrior] | None = None,
        trees: list[PartitionTree] | None = None,
    ):
        self.data = data
        self.covs = covs
        self.config = config
        self.chain_index = chain_index
        self.n = len(data)
        self.n_total = len(covs)
        if self.n_total < self.n:
            raise ValueError("covariate list must cover observed plus future cohorts")
        for summary, cov in zip(data, covs):
            if summary.covariates != cov:
                raise ValueError(f"covariates for cohort {summary.cohort_id} disagree with covs[:n]")

        cfg = config
        if trees is None:
            trees = [
                build_cohort_partition((s.l, s.m, s.h), cfg.g0, cfg.total_depth, s.cohort_id)
                for s in data
            ]
            if self.n_total > self.n:
                if self.n:
                    fut = future_triple([(s.l, s.m, s.h) for s in data])
                else:
                    fut = (cfg.g0.quantile(0.25), cfg.g0.quantile(0.5), cfg.g0.quantile(0.75))
                trees += [
                    build_cohort_partition(fut, cfg.g0, cfg.total_depth, f"future-{k}")
                    for k in range(self.n_total - self.n)
                ]
        self.trees = trees

        if node_priors is None:
            correlation = build_correlation_matrix(covs, cfg.kernel)
            node_priors, diag = elicit_node_moments(
                cfg.prior_settings,
                correlation,
                self.trees,
                cfg.n_mc_elicit,
                rng_stream(cfg.seed, 0, _ELICIT),
            )
            if diag.clamped:
                logger.info("elicitation clamped %d of %d logit evaluations", diag.clamped, diag.total_evals)
        self.node_priors = node_priors
        self.gp_paths = [p.node for p in node_priors]
        self.updaters = [_NodeUpdater(p) for p in node_priors]
        self.gp_level_rows: dict[int, list[int]] = {}
        for row, prior in enumerate(node_priors):
            self.gp_level_rows.setdefault(prior.node.level, []).append(row)

        self.rng_init = rng_stream(cfg.seed, chain_index, _INIT)
        self.rng_latent = [rng_stream(cfg.seed, chain_index, _LATENT, i) for i in range(self.n)]
        self.rng_pg = [rng_stream(cfg.seed, chain_index, _PG, k) for k in range(len(node_priors))]
        self.rng_deep = rng_stream(cfg.seed, chain_index, _DEEP)

        self.state = self._prior_state(self.rng_init)
        self.imputers = [LatentImputer(s, cfg.transform) for s in data]
        for i, imp in enumerate(self.imputers):
            imp.initialize(self.tree_distribution(i), cfg.censoring, self.rng_init)

    # -- state construction -------------------------------------------------
    def _prior_state(self, rng: np.random.Generator) -> ChainState:
        cfg = self.config
        z = np.empty((len(self.node_priors), self.n_total))
        for k, prior in enumerate(self.node_priors):
            chol = self.updaters[k]._full_chol
            z[k] = prior.mean + chol @ rng.standard_normal(self.n_total)
        y_deep = {}
        for d in range(cfg.gp_depth + 1, cfg.total_depth + 1):
            alpha = cfg.deep_alpha(d)
            y_deep[d] = rng.beta(alpha, alpha, size=(self.n_total, 2 ** (d - 1)))
        return ChainState(z=z, y_deep=y_deep)

    def tree_distribution(self, cohort: int) -> TreeDistribution:
        splits = self.state.splits_for(cohort, self.gp_level_rows)
        return TreeDistribution(self.trees[cohort], splits, self.config.g0)

    # -- one sweep ------------------------------------------------------------
    def sweep(self, check_invariant: bool = False) -> None:
        cfg = self.config
        state = self.state

        for i, imp in enumerate(self.imputers):
            g_i = self.tree_distribution(i)
            imp.step(g_i, cfg.censoring, self.rng_latent[i], moves=cfg.latent_steps)
            if check_invariant and not imp.matches():
                raise AssertionError(f"latent invariant broken for cohort {imp.summary.cohort_id}")

        depth = cfg.total_depth
        level_counts: dict[int, np.ndarray] = {
            d: np.zeros((self.n_total, 2**d), dtype=np.int64) for d in range(0, depth + 1)
        }
        for i, imp in enumerate(self.imputers):
            table = imp.counts(self.trees[i])
            for d in range(0, depth + 1):
                level_counts[d][i] = table.levels[d]

        for k, prior in enumerate(self.node_priors):
            path = prior.node
            d = path.level
            parent_idx = path.index >> 1
            left = level_counts[d][:, path.index]
            parent = level_counts[d - 1][:, parent_idx]
            state.z[k] = self.updaters[k].update(left, parent, state.z[k], self.rng_pg[k])

        for d in range(cfg.gp_depth + 1, depth + 1):
            alpha = cfg.deep_alpha(d)
            counts = level_counts[d]
            state.y_deep[d] = self.rng_deep.beta(
                alpha + counts[:, 0::2], alpha + counts[:, 1::2]
            )
        state.iteration += 1

    def snapshot_medians(self) -> np.ndarray:
        return np.array([self.tree_distribution(i).median() for i in range(self.n_total)])

    # -- checkpointing ---------------------------------------------------------
    def checkpoint_dict(self) -> dict:
        state = self.state
        return {
            "version": CHECKPOINT_VERSION,
            "iteration": state.iteration,
            "chain_index": self.chain_index,
            "config": _config_to_dict(self.config),
            "rng_states": {
                "init": self.rng_init.bit_generator.state,
                "latent": [r.bit_generator.state for r in self.rng_latent],
                "pg": [r.bit_generator.state for r in self.rng_pg],
                "deep": self.rng_deep.bit_generator.state,
            },
            "z": state.z.tolist(),
            "y_deep": {str(d): v.tolist() for d, v in state.y_deep.items()},
            "latent": [
                {
                    "t": imp.state.t.tolist(),
                    "c": imp.state.c.tolist(),
                    "target": [imp.target.l, imp.target.m, imp.target.h],
                }
                for imp in self.imputers
            ],
        }

    def restore(self, payload: dict) -> None:
        from .data_model import SummaryTriple

        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
        self.state.z = np.array(payload["z"])
        self.state.y_deep = {int(d): np.array(v) for d, v in payload["y_deep"].items()}
        self.state.iteration = int(payload["iteration"])
        self.rng_init.bit_generator.state = payload["rng_states"]["init"]
        for r, st in zip(self.rng_latent, payload["rng_states"]["latent"]):
            r.bit_generator.state = st
        for r, st in zip(self.rng_pg, payload["rng_states"]["pg"]):
            r.bit_generator.state = st
        self.rng_deep.bit_generator.state = payload["rng_states"]["deep"]
        for imp, saved in zip(self.imputers, payload["latent"]):
            imp.state.t = np.array(saved["t"])
            imp.state.c = np.array(saved["c"])
            l, m, h = saved["target"]
            imp.target = SummaryTriple(l, m, h)
            imp._anchor_values = [v for v in (l, m, h) if v is not None]


def run_chain(
    data: list[CohortSummary],
    covs: list[CovariateVector],
    config: FitConfig,
    chain_index: int = 0,
    checkpoint_path=None,
    resume: dict | None = None,
    verify_latent_every: int | None = None,
) -> PosteriorDraws:
    """Run one chain and return the retained draws.

    ``covs`` lists covariates for all I cohorts: the first len(data) entries
    must match the observed summaries, the remainder define future cohorts.
    The latent-summary invariant is asserted every ``verify_latent_every``
    sweeps (default from the config).
    """
    chain = _Chain(data, covs, config, chain_index)
    if resume is not None:
        chain.restore(resume)
    check_every = verify_latent_every or config.debug_check_every

    kept_z, kept_deep, kept_med = [], [], []
    try:
        while chain.state.iteration < config.iterations:
            it = chain.state.iteration + 1
            chain.sweep(check_invariant=(check_every > 0 and it % check_every == 0))
            if it > config.burn_in and (it - config.burn_in) % config.thinning == 0:
                kept_z.append(chain.state.z.copy())
                kept_deep.append(
                    np.concatenate(
                        [chain.state.y_deep[d] for d in sorted(chain.state.y_deep)], axis=1
                    )
                )
                kept_med.append(chain.snapshot_medians())
    except Exception:
        if checkpoint_path is not None:
            _write_json(checkpoint_path, chain.checkpoint_dict())
            logger.error("chain failed at iteration %d; checkpoint written to %s", chain.state.iteration, checkpoint_path)
        raise
    if checkpoint_path is not None:
        _write_json(checkpoint_path, chain.checkpoint_dict())

    acceptance = {
        imp.summary.cohort_id: (imp.n_accepted / imp.n_proposed if imp.n_proposed else 1.0)
        for imp in chain.imputers
    }
    return PosteriorDraws(
        z=np.array(kept_z) if kept_z else np.empty((0, len(chain.node_priors), chain.n_total)),
        deep=np.array(kept_deep) if kept_deep else np.empty((0, chain.n_total, 0)),
        medians=np.array(kept_med) if kept_med else np.empty((0, chain.n_total)),
        gp_paths=[str(p) for p in chain.gp_paths],
        deep_levels=sorted(chain.state.y_deep),
        cohort_ids=[s.cohort_id for s in data]
        + [f"future-{k}" for k in range(chain.n_total - chain.n)],
        n_observed=chain.n,
        config=config,
        trees=chain.trees,
        node_priors=chain.node_priors,
        acceptance=acceptance,
        covariates=list(covs),
    )


def sample_prior_medians(
    config: FitConfig,
    n_sims: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Medians of prior draws on the dyadic centering partition.

    Vectorized descent: each draw walks the path containing its median, so
    only the splitting probabilities along that path are sampled.
    """
    cfg = config
    target = np.full(n_sims, 0.5)
    lo = np.zeros(n_sims)
    hi = np.ones(n_sims)
    for d in range(1, cfg.total_depth + 1):
        if d <= cfg.gp_depth:
            sigma = math.sqrt(cfg.prior_settings.gp_sigma2(d))
            y = expit(sigma * rng.standard_normal(n_sims))
        else:
            alpha = cfg.deep_alpha(d)
            y = rng.beta(alpha, alpha, size=n_sims)
        go_right = target >= y
        target = np.where(go_right, (target - y) / np.maximum(1.0 - y, 1e-300), target / np.maximum(y, 1e-300))
        target = np.clip(target, 0.0, 1.0 - 1e-16)
        mid = 0.5 * (lo + hi)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    u = np.minimum(lo + target * (hi - lo), 1.0 - 1e-16)
    return cfg.g0.quantile(u)


# ---------------------------------------------------------------------------
# fit persistence
# ---------------------------------------------------------------------------


def _config_to_dict(config: FitConfig) -> dict:
    out = asdict(config)
    out["g0"] = {"family": config.g0.family, "median": config.g0.median, "weights": config.g0.weights}
    out["censoring"] = {
        "family": config.censoring.family,
        "median": config.censoring.median,
        "weights": config.censoring.weights,
    }
    return out


def _config_from_dict(payload: dict) -> FitConfig:
    payload = dict(payload)
    for key in ("g0", "censoring"):
        spec = payload[key]
        payload[key] = DistributionSpec(spec["family"], spec["median"], spec.get("weights") and tuple(spec["weights"]))
    payload["kernel"] = KernelWeights(**payload["kernel"])
    return FitConfig(**payload)


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh)


def save_fit(draws: PosteriorDraws, out_dir) -> None:
    """Persist draws as .npy arrays plus a JSON meta document."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    np.save(os.path.join(out_dir, "draws_z.npy"), draws.z)
    np.save(os.path.join(out_dir, "draws_deep.npy"), draws.deep)
    np.save(os.path.join(out_dir, "draws_median.npy"), draws.medians)
    np.save(
        os.path.join(out_dir, "node_prior_mean.npy"),
        np.stack([p.mean for p in draws.node_priors]),
    )
    np.save(
        os.path.join(out_dir, "node_prior_cov.npy"),
        np.stack([p.cov for p in draws.node_priors]),
    )
    meta = {
        "version": CHECKPOINT_VERSION,
        "gp_paths": draws.gp_paths,
        "deep_levels": draws.deep_levels,
        "cohort_ids": draws.cohort_ids,
        "n_observed": draws.n_observed,
        "config": _config_to_dict(draws.config),
        "acceptance": draws.acceptance,
        "covariates": [vars(c) for c in draws.covariates] if draws.covariates else None,
        "trees": [
            {
                "cohort_id": t.cohort_id,
                "depth": t.depth,
                "breaks": {str(d): t.breaks[d].tolist() for d in t.breaks},
                "fvals": {str(d): t.fvals[d].tolist() for d in t.fvals},
            }
            for t in draws.trees
        ],
    }
    _write_json(os.path.join(out_dir, "meta.json"), meta)


def load_fit(out_dir) -> PosteriorDraws:
    import os

    with open(os.path.join(out_dir, "meta.json")) as fh:
        meta = json.load(fh)
    config = _config_from_dict(meta["config"])
    trees = [
        PartitionTree(
            t["cohort_id"],
            t["depth"],
            {int(d): np.array(v) for d, v in t["breaks"].items()},
            {int(d): np.array(v) for d, v in t["fvals"].items()},
        )
        for t in meta["trees"]
    ]
    prior_mean = np.load(os.path.join(out_dir, "node_prior_mean.npy"))
    prior_cov = np.load(os.path.join(out_dir, "node_prior_cov.npy"))
    priors = [
        NodePrior(NodePath.from_string(pth), prior_mean[k], prior_cov[k])
        for k, pth in enumerate(meta["gp_paths"])
    ]
    return PosteriorDraws(
        z=np.load(os.path.join(out_dir, "draws_z.npy")),
        deep=np.load(os.path.join(out_dir, "draws_deep.npy")),
        medians=np.load(os.path.join(out_dir, "draws_median.npy")),
        gp_paths=meta["gp_paths"],
        deep_levels=[int(d) for d in meta["deep_levels"]],
        cohort_ids=meta["cohort_ids"],
        n_observed=int(meta["n_observed"]),
        config=config,
        trees=trees,
        node_priors=priors,
        acceptance=meta.get("acceptance"),
        covariates=[CovariateVector(**c) for c in meta["covariates"]] if meta.get("covariates") else None,
    )
