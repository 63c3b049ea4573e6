"""Cohort ingestion, Kaplan-Meier summary mapping, and latent-data imputation.

The reported data per cohort is the triple (l, m, h) and the sample size N.
Latent patient-level event and censoring times are imputed so that the
Kaplan-Meier estimate with Greenwood bands reproduces the reported triple
exactly; the Metropolis-Hastings moves here keep that constraint invariant.

Crossings of the survival estimate with 0.5 are decided with exact integer
arithmetic (the estimate is a product of rationals and even sample sizes hit
0.5 exactly); band crossings have no such structural ties and use floats.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .kernel_prior import CovariateVector
from .special_math import DistributionSpec

__all__ = [
    "CohortSummary",
    "SummaryTriple",
    "LatentState",
    "CountsTable",
    "KmCurve",
    "MedianUndefinedError",
    "parse_cohorts",
    "km_with_greenwood",
    "derive_summary",
    "counts_from_latent",
    "initialize_latent",
    "mh_latent_step",
    "LatentImputer",
]

logger = logging.getLogger(__name__)

CENSOR_CLASSES = ("exact-pattern", "count-known", "unknown")
_CLASS_ALIASES = {"exact": "exact-pattern", "count": "count-known"}
_TRANSFORMS = ("plain", "log", "log-log")


class MedianUndefinedError(RuntimeError):
    """The survival estimate never reaches 0.5."""


@dataclass(frozen=True)
class SummaryTriple:
    """Reported or derived (l, m, h); None marks an absent bound."""

    l: float | None
    m: float
    h: float | None

    def matches(self, other: "SummaryTriple") -> bool:
        """Equality on the components reported in ``self`` (the target)."""
        if other.m != self.m:
            return False
        if self.l is not None and other.l != self.l:
            return False
        if self.h is not None and other.h != self.h:
            return False
        return True


@dataclass(frozen=True)
class CohortSummary:
    study_id: str
    cohort_id: str
    covariates: CovariateVector
    l: float | None
    m: float
    h: float | None
    n: int
    n_events: int | None
    censor_class: str
    conf_level: float = 0.95

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"cohort {self.cohort_id}: sample size must be positive")
        if not self.m > 0:
            raise ValueError(f"cohort {self.cohort_id}: median must be positive")
        if self.l is not None and not 0 < self.l < self.m:
            raise ValueError(f"cohort {self.cohort_id}: triple not ordered (l={self.l}, m={self.m})")
        if self.h is not None and not self.h > self.m:
            raise ValueError(f"cohort {self.cohort_id}: triple not ordered (m={self.m}, h={self.h})")
        if self.censor_class not in CENSOR_CLASSES:
            raise ValueError(f"cohort {self.cohort_id}: unknown censor class {self.censor_class!r}")
        if self.n_events is not None and not 0 < self.n_events <= self.n:
            raise ValueError(f"cohort {self.cohort_id}: n_events must lie in 1..N")
        if self.censor_class == "count-known" and self.n_events is None:
            raise ValueError(f"cohort {self.cohort_id}: count-known cohorts must report n_events")
        if not 0 < self.conf_level < 1:
            raise ValueError(f"cohort {self.cohort_id}: conf_level must be in (0, 1)")

    @property
    def triple(self) -> SummaryTriple:
        return SummaryTriple(self.l, self.m, self.h)


_CSV_COLUMNS = [
    "study_id",
    "cohort_id",
    "biomarker",
    "tumor",
    "agent",
    "phase",
    "line",
    "therapy_type",
    "l",
    "m",
    "h",
    "n",
    "n_events",
    "censor_class",
    "conf_level",
]


def parse_cohorts(path) -> list[CohortSummary]:
    """Read and validate the cohort CSV (see the schema in the README)."""
    out: list[CohortSummary] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _CSV_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing required columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(_parse_row(row))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if out[-1].cohort_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate cohort id {out[-1].cohort_id!r}")
            seen.add(out[-1].cohort_id)
    if not out:
        raise ValueError(f"{path}: no cohort rows found")
    return out


def _parse_row(row: dict) -> CohortSummary:
    def clean(key: str) -> str:
        return (row.get(key) or "").strip()

    marker = clean("biomarker").lower()
    marker = {"positive": "pos", "+": "pos", "negative": "neg", "-": "neg"}.get(marker, marker)
    covs = CovariateVector(
        study_id=clean("study_id"),
        biomarker=marker,
        tumor=clean("tumor"),
        agent=clean("agent"),
        phase=clean("phase"),
        line=clean("line"),
        therapy_type=clean("therapy_type"),
    )
    l_raw = clean("l")
    l = None if l_raw in ("", "0", "0.0") else float(l_raw)
    if l is not None and l <= 0:
        raise ValueError(f"l must be positive or absent, got {l_raw!r}")
    h_raw = clean("h").lower()
    h = None if h_raw in ("", "inf", "+inf", "infinity") else float(h_raw)
    if h is not None and math.isinf(h):
        h = None
    ne_raw = clean("n_events")
    cls = clean("censor_class").lower()
    cls = _CLASS_ALIASES.get(cls, cls)
    conf_raw = clean("conf_level")
    return CohortSummary(
        study_id=covs.study_id,
        cohort_id=clean("cohort_id"),
        covariates=covs,
        l=l,
        m=float(clean("m")),
        h=h,
        n=int(clean("n")),
        n_events=int(ne_raw) if ne_raw else None,
        censor_class=cls,
        conf_level=float(conf_raw) if conf_raw else 0.95,
    )


# ---------------------------------------------------------------------------
# Kaplan-Meier with Greenwood bands
# ---------------------------------------------------------------------------


@dataclass
class KmCurve:
    """Product-limit estimate evaluated at the distinct event times."""

    times: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    median_index: int | None  # first event row with S <= 1/2 (exact test)

    def first_crossing(self, band: np.ndarray) -> int | None:
        hits = np.nonzero(band <= 0.5)[0]
        return int(hits[0]) if hits.size else None


def km_with_greenwood(
    times,
    events,
    conf_level: float = 0.95,
    transform: str = "log",
) -> KmCurve:
    """Kaplan-Meier estimator with Greenwood-variance confidence bands.

    ``transform`` selects the band construction: "plain" (linear), "log"
    (on log S, the survfit-style default) or "log-log".
    """
    if transform not in _TRANSFORMS:
        raise ValueError(f"unknown band transform {transform!r}")
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=bool)
    if t.size == 0 or not d.any():
        raise ValueError("Kaplan-Meier needs at least one observed event")
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    # events before censorings at tied times
    order = np.lexsort((~d, t))
    t, d = t[order], d[order]

    n = t.size
    ev_times: list[float] = []
    surv: list[float] = []
    gw: list[float] = []
    num, den = 1, 1  # exact running product of (n_i - d_i) / n_i
    median_index = None
    s = 1.0
    g = 0.0
    i = 0
    at_risk = n
    while i < n:
        tj = t[i]
        dj = 0
        cj = 0
        while i < n and t[i] == tj:
            if d[i]:
                dj += 1
            else:
                cj += 1
            i += 1
        if dj:
            s *= (at_risk - dj) / at_risk
            num *= at_risk - dj
            den *= at_risk
            if at_risk - dj > 0:
                g += dj / (at_risk * (at_risk - dj))
            else:
                g = math.inf
            ev_times.append(tj)
            surv.append(s)
            gw.append(g)
            if median_index is None and 2 * num <= den:
                median_index = len(ev_times) - 1
        at_risk -= dj + cj

    times_arr = np.array(ev_times)
    s_arr = np.array(surv)
    g_arr = np.array(gw)

    alpha = 1.0 - conf_level
    z = float(norm.ppf(1.0 - alpha / 2.0))
    lower = np.zeros_like(s_arr)
    upper = np.ones_like(s_arr)
    pos = s_arr > 0
    with np.errstate(over="ignore", invalid="ignore"):
        if transform == "plain":
            se = s_arr[pos] * np.sqrt(g_arr[pos])
            lower[pos] = s_arr[pos] - z * se
            upper[pos] = s_arr[pos] + z * se
        elif transform == "log":
            se = np.sqrt(g_arr[pos])
            lower[pos] = s_arr[pos] * np.exp(-z * se)
            upper[pos] = s_arr[pos] * np.exp(z * se)
        else:  # log-log
            logs = np.log(s_arr[pos])
            se = np.sqrt(g_arr[pos]) / np.abs(logs)
            lower[pos] = s_arr[pos] ** np.exp(z * se)
            upper[pos] = s_arr[pos] ** np.exp(-z * se)
    lower = np.clip(np.nan_to_num(lower, nan=0.0, posinf=1.0, neginf=0.0), 0.0, 1.0)
    upper = np.clip(np.nan_to_num(upper, nan=0.0, posinf=1.0), 0.0, 1.0)
    # S = 0 rows carry no information; pin both limits to the estimate
    lower[~pos] = 0.0
    upper[~pos] = 0.0

    return KmCurve(times_arr, s_arr, lower, upper, median_index)


# ---------------------------------------------------------------------------
# latent state and summary derivation
# ---------------------------------------------------------------------------


@dataclass
class LatentState:
    """Imputed event times T, censoring times C and implied indicators."""

    t: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.t.shape != self.c.shape:
            raise ValueError("event and censoring vectors differ in length")
        if np.any(self.t <= 0) or np.any(self.c <= 0):
            raise ValueError("latent times must be positive")

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def delta(self) -> np.ndarray:
        return self.t < self.c

    @property
    def observed(self) -> np.ndarray:
        return np.minimum(self.t, self.c)

    def copy(self) -> "LatentState":
        return LatentState(self.t.copy(), self.c.copy())


def derive_summary(
    latent: LatentState,
    conf_level: float = 0.95,
    transform: str = "log",
) -> SummaryTriple:
    """Map a latent state to the reported triple via KM band crossings.

    m is the smallest observed time with S <= 0.5; l and h come from the
    crossings of the lower and upper survival confidence limits with 0.5.
    A limit that never reaches 0.5 yields an absent bound.
    """
    curve = km_with_greenwood(latent.observed, latent.delta, conf_level, transform)
    if curve.median_index is None:
        raise MedianUndefinedError("survival estimate never reaches 0.5")
    m = float(curve.times[curve.median_index])
    li = curve.first_crossing(curve.lower)
    hi = curve.first_crossing(curve.upper)
    return SummaryTriple(
        l=float(curve.times[li]) if li is not None else None,
        m=m,
        h=float(curve.times[hi]) if hi is not None else None,
    )


@dataclass
class CountsTable:
    """Interval occupancy of the imputed event times, every level."""

    levels: dict[int, np.ndarray]

    def parent(self, level: int, index: int) -> int:
        if level == 0:
            return int(self.levels[0][0])
        return int(self.levels[level][index])

    @property
    def n(self) -> int:
        return int(self.levels[0][0])


def counts_from_latent(latent: LatentState, tree) -> CountsTable:
    """Node counts of all N imputed event times (censored ones included)."""
    depth = tree.depth
    leaf = tree.leaf_indices(latent.t)
    counts = {depth: np.bincount(leaf, minlength=2**depth).astype(np.int64)}
    for d in range(depth - 1, -1, -1):
        counts[d] = counts[d + 1].reshape(-1, 2).sum(axis=1)
    return CountsTable(counts)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _index_pattern_ranks(
    n: int, n_ev: int, conf_level: float, transform: str
) -> tuple[int | None, int | None, int | None]:
    """Band-crossing ranks for the pattern 'n_ev events then censorings'.

    Works on the index axis: crossing positions depend only on the pattern,
    not on the actual time values. Returns 1-based ranks (L, mid, H), with
    None for a crossing that never happens.
    """
    times = np.arange(1, n + 1, dtype=float)
    delta = np.zeros(n, dtype=bool)
    delta[:n_ev] = True
    try:
        curve = km_with_greenwood(times, delta, conf_level, transform)
    except ValueError:
        return None, None, None
    mid = curve.median_index
    li = curve.first_crossing(curve.lower)
    hi = curve.first_crossing(curve.upper)
    to_rank = lambda idx: int(curve.times[idx]) if idx is not None else None
    return to_rank(li), to_rank(mid), to_rank(hi)


def initialize_latent(
    target: SummaryTriple,
    n: int,
    g_dist,
    h_dist: DistributionSpec,
    conf_level: float,
    transform: str,
    rng: np.random.Generator,
    n_events: int | None = None,
) -> tuple[LatentState, SummaryTriple]:
    """Build a latent state whose derived summary reproduces the target.

    Starts from the pattern with all events observed (or ``n_events``
    observed followed by tail censoring when an event count is reported),
    pins the anchor order statistics at the band-crossing ranks, and fills
    the remaining positions with truncated draws from the current G and H.

    Returns the state together with the effective target: any component that
    cannot be reproduced under this pattern is dropped (with a warning) and
    treated as unconstrained from then on.
    """
    n_ev = n if n_events is None else min(int(n_events), n)
    mid_required = math.ceil(n / 2)
    if n_ev < mid_required:
        logger.warning(
            "event count %d cannot produce a median crossing for N=%d; raising to %d",
            n_ev,
            n,
            mid_required,
        )
        n_ev = mid_required
    ranks = _index_pattern_ranks(n, n_ev, conf_level, transform)
    l_rank, mid_rank, h_rank = ranks
    if mid_rank is None:
        raise MedianUndefinedError(f"no pattern with {n_ev} events crosses 0.5 for N={n}")

    effective = target
    anchors: list[tuple[int, float]] = []
    if target.l is not None:
        if l_rank is None or l_rank >= mid_rank:
            logger.warning("reported l=%s not reproducible; treating as unconstrained", target.l)
            effective = replace(effective, l=None)
        else:
            anchors.append((l_rank, target.l))
    anchors.append((mid_rank, target.m))
    if target.h is not None:
        if h_rank is None or h_rank <= mid_rank or h_rank > n_ev:
            logger.warning("reported h=%s not reproducible; treating as unconstrained", target.h)
            effective = replace(effective, h=None)
        else:
            anchors.append((h_rank, target.h))

    # fill free event ranks with ordered truncated draws between the anchors
    t_events = np.empty(n_ev)
    for rank, value in anchors:
        t_events[rank - 1] = value
    bounds = [(0, 0.0)] + anchors + [(n_ev + 1, math.inf)]
    for (r0, v0), (r1, v1) in zip(bounds[:-1], bounds[1:]):
        k = r1 - r0 - 1
        if k <= 0:
            continue
        lo = g_dist.cdf(v0) if v0 > 0 else 0.0
        hi = g_dist.cdf(v1) if math.isfinite(v1) else 1.0
        if not hi > lo:
            raise ValueError(f"reported triple leaves no mass in ({v0}, {v1})")
        u = np.sort(lo + (hi - lo) * rng.uniform(size=k))
        t_events[r0 : r1 - 1] = g_dist.quantile(u)

    # censoring times: beyond the last event for tail-censored subjects,
    # beyond the subject's own event time otherwise
    t_all = np.empty(n)
    c_all = np.empty(n)
    t_all[:n_ev] = t_events
    c_all[:n_ev] = h_dist.sample_above(t_events, rng)
    if n_ev < n:
        t_max = t_events[-1]
        c_tail = h_dist.sample_above(np.full(n - n_ev, t_max), rng)
        c_all[n_ev:] = c_tail
        t_all[n_ev:] = g_dist.sample_above(c_tail, rng)
    state = LatentState(t_all, c_all)

    derived = derive_summary(state, conf_level, transform)
    if not effective.matches(derived):
        raise AssertionError(
            f"initialization failed to reproduce the summary: target {effective}, derived {derived}"
        )
    return state, effective


# ---------------------------------------------------------------------------
# Metropolis-Hastings moves on the latent data
# ---------------------------------------------------------------------------


def _truncated_draw(dist, lo: float, hi: float, rng: np.random.Generator) -> float:
    if not math.isfinite(hi):
        return float(dist.sample_above(max(lo, 0.0), rng))
    a = dist.cdf(lo) if lo > 0 else 0.0
    b = dist.cdf(hi)
    u = a + (b - a) * rng.uniform()
    return float(dist.quantile(min(u, 1.0 - 1e-16)))


def _neighbors(observed: np.ndarray, idx: int) -> tuple[float, float]:
    x = observed[idx]
    below = observed[(observed < x)]
    above = observed[(observed > x)]
    lo = float(below.max()) if below.size else 0.0
    hi = float(above.min()) if above.size else math.inf
    return lo, hi


def mh_latent_step(
    state: LatentState,
    target: SummaryTriple,
    g_dist,
    h_dist: DistributionSpec,
    kind: str,
    rng: np.random.Generator,
    conf_level: float = 0.95,
    transform: str = "log",
    n_events: int | None = None,
) -> tuple[LatentState, bool]:
    """One ABC-style MH transition; rejection keeps the current state.

    Q1 redraws event and censoring times of two random subjects from G and H
    and accepts iff the derived summary still matches. Q2 flips one subject's
    censoring indicator with truncated proposals and the corresponding
    Hastings ratio. When ``n_events`` is given (count-known cohorts) the
    event count is part of the matching constraint.
    """
    n = state.n
    if kind == "Q1":
        if n < 2:
            return state, False
        r_i, s_i = rng.choice(n, size=2, replace=False)
        prop = state.copy()
        for j in (r_i, s_i):
            prop.t[j] = g_dist.quantile(min(rng.uniform(), 1.0 - 1e-16))
            prop.c[j] = h_dist.quantile(min(rng.uniform(), 1.0 - 1e-16))
        if _matches(prop, target, conf_level, transform, n_events):
            return prop, True
        return state, False

    if kind == "Q2":
        s_i = int(rng.integers(n))
        obs = state.observed
        lo, hi = _neighbors(obs, s_i)
        prop = state.copy()
        if state.delta[s_i]:
            # observed -> censored: C in the neighbor gap, T beyond C
            c_new = _truncated_draw(h_dist, lo, hi, rng)
            t_new = _truncated_draw(g_dist, c_new, math.inf, rng)
        else:
            # censored -> observed: T in the neighbor gap, C beyond T
            t_new = _truncated_draw(g_dist, lo, hi, rng)
            c_new = _truncated_draw(h_dist, t_new, math.inf, rng)
        ratio = q2_ratio(
            bool(state.delta[s_i]),
            float(state.t[s_i]),
            float(state.c[s_i]),
            t_new,
            c_new,
            lo,
            hi,
            g_dist,
            h_dist,
        )
        prop.t[s_i] = t_new
        prop.c[s_i] = c_new
        if not _matches(prop, target, conf_level, transform, n_events):
            return state, False
        if rng.uniform() < min(1.0, ratio):
            return prop, True
        return state, False

    raise ValueError(f"unknown move kind {kind!r}")


def q2_ratio(
    delta_old: bool,
    t_old: float,
    c_old: float,
    t_new: float,
    c_new: float,
    lo: float,
    hi: float,
    g_dist,
    h_dist,
) -> float:
    """Hastings ratio of the censoring-flip move, given the proposed times.

    Derived from the flip proposal (gap-truncated draw for the switched
    coordinate, survival-truncated draw for the other): the target density
    and proposal factors cancel down to gap masses and survival terms.
    """
    g_gap = (g_dist.cdf(hi) if math.isfinite(hi) else 1.0) - (g_dist.cdf(lo) if lo > 0 else 0.0)
    h_gap = (h_dist.cdf(hi) if math.isfinite(hi) else 1.0) - (h_dist.cdf(lo) if lo > 0 else 0.0)
    if delta_old:
        num = h_gap * float(g_dist.survival(c_new))
        den = g_gap * float(h_dist.survival(t_old))
    else:
        num = g_gap * float(h_dist.survival(t_new))
        den = h_gap * float(g_dist.survival(c_old))
    return num / max(den, 1e-300)


def _matches(
    state: LatentState,
    target: SummaryTriple,
    conf_level: float,
    transform: str,
    n_events: int | None,
) -> bool:
    if n_events is not None and int(state.delta.sum()) != n_events:
        return False
    try:
        derived = derive_summary(state, conf_level, transform)
    except MedianUndefinedError:
        return False
    return target.matches(derived)


class LatentImputer:
    """Per-cohort latent-data machinery: policy, moves and count extraction.

    The move policy follows the cohort's censoring-information class:
    exact-pattern cohorts refresh within-interval positions by truncated
    Gibbs draws (their level-1/2 counts are fixed); count-known cohorts use
    Q1 only, with the event count added to the matching constraint; unknown
    cohorts pick Q1 or Q2 uniformly at random.
    """

    def __init__(self, summary: CohortSummary, transform: str = "log"):
        self.summary = summary
        self.transform = transform
        self.target = summary.triple
        self.state: LatentState | None = None
        self.n_accepted = 0
        self.n_proposed = 0

    @property
    def count_constraint(self) -> int | None:
        if self.summary.censor_class == "count-known":
            return self.summary.n_events
        if self.summary.censor_class == "exact-pattern":
            return self.summary.n_events if self.summary.n_events is not None else self.summary.n
        return None

    def initialize(self, g_dist, h_dist: DistributionSpec, rng: np.random.Generator) -> None:
        n_ev = None
        if self.summary.censor_class in ("exact-pattern", "count-known"):
            n_ev = self.count_constraint
        self.state, self.target = initialize_latent(
            self.summary.triple,
            self.summary.n,
            g_dist,
            h_dist,
            self.summary.conf_level,
            self.transform,
            rng,
            n_events=n_ev,
        )
        self._anchor_values = [v for v in (self.target.l, self.target.m, self.target.h) if v is not None]

    def matches(self, state: LatentState | None = None) -> bool:
        state = state if state is not None else self.state
        n_ev = self.count_constraint if self.summary.censor_class != "unknown" else None
        return _matches(state, self.target, self.summary.conf_level, self.transform, n_ev)

    def step(self, g_dist, h_dist: DistributionSpec, rng: np.random.Generator, moves: int = 1) -> None:
        cls = self.summary.censor_class
        for _ in range(moves):
            self.n_proposed += 1
            if cls == "exact-pattern":
                self._gibbs_refresh(g_dist, h_dist, rng)
                self.n_accepted += 1
            else:
                if cls == "count-known":
                    kind = "Q1"
                else:
                    kind = "Q1" if rng.uniform() < 0.5 else "Q2"
                n_ev = self.count_constraint
                self.state, ok = mh_latent_step(
                    self.state,
                    self.target,
                    g_dist,
                    h_dist,
                    kind,
                    rng,
                    self.summary.conf_level,
                    self.transform,
                    n_events=n_ev,
                )
                self.n_accepted += int(ok)
        self._refresh_censored_tails(g_dist, rng)

    def _gibbs_refresh(self, g_dist, h_dist: DistributionSpec, rng: np.random.Generator) -> None:
        """Exact conditional redraw of all non-anchor positions.

        Event times move within their anchor-delimited gap (and below their
        own censoring time and any tail censoring), which preserves the
        crossing ranks and hence the derived summary exactly.
        """
        state = self.state
        anchors = np.array(sorted(self._anchor_values))
        delta = state.delta
        censored = ~delta
        c_min = float(state.c[censored].min()) if censored.any() else math.inf

        free = delta & ~np.isin(state.t, anchors)
        idx = np.nonzero(free)[0]
        if idx.size:
            gap = np.searchsorted(anchors, state.t[idx], side="right")
            lo = np.where(gap > 0, anchors[np.maximum(gap - 1, 0)], 0.0)
            hi_anchor = np.where(gap < anchors.size, anchors[np.minimum(gap, anchors.size - 1)], math.inf)
            hi = np.minimum(np.minimum(hi_anchor, state.c[idx]), c_min)
            ok = hi > lo
            u_lo = np.where(lo > 0, g_dist.cdf(lo), 0.0)
            u_hi = np.where(np.isfinite(hi), g_dist.cdf(np.where(np.isfinite(hi), hi, 1.0)), 1.0)
            u = u_lo + (u_hi - u_lo) * rng.uniform(size=idx.size)
            new_t = g_dist.quantile(np.minimum(u, 1.0 - 1e-16))
            state.t[idx[ok]] = new_t[ok]
        # censoring times: above the subject's event for observed subjects,
        # between the last event and the latent event for tail-censored ones
        obs_idx = np.nonzero(delta)[0]
        state.c[obs_idx] = h_dist.sample_above(state.t[obs_idx], rng)
        cen_idx = np.nonzero(censored)[0]
        if cen_idx.size:
            t_max = float(state.t[delta].max()) if delta.any() else 0.0
            lo = h_dist.cdf(t_max)
            hi = h_dist.cdf(state.t[cen_idx])
            ok = hi > lo
            u = lo + (hi - lo) * rng.uniform(size=cen_idx.size)
            new_c = h_dist.quantile(np.minimum(u, 1.0 - 1e-16))
            state.c[cen_idx[ok]] = new_c[ok]

    def _refresh_censored_tails(self, g_dist, rng: np.random.Generator) -> None:
        """Redraw latent event times beyond censoring; invisible to the summary."""
        state = self.state
        cen_idx = np.nonzero(~state.delta)[0]
        if cen_idx.size:
            state.t[cen_idx] = g_dist.sample_above(state.c[cen_idx], rng)

    def counts(self, tree) -> CountsTable:
        return counts_from_latent(self.state, tree)
