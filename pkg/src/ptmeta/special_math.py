"""Distribution primitives, special functions and samplers shared by the engine.

Everything here is a pure function of its arguments plus an explicit numpy
``Generator``; callers own their RNG streams (see :func:`rng_stream`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import brentq
from scipy.special import erf, erfinv, ndtr

__all__ = [
    "DistributionSpec",
    "MvnSpec",
    "trigamma",
    "quantile",
    "sample_polya_gamma",
    "sample_polya_gamma_batch",
    "polya_gamma_mean",
    "polya_gamma_var",
    "mvn_condition",
    "sample_truncated",
    "rng_stream",
]

_HALF_NORMAL_MEDIAN_SCALE = math.sqrt(2.0) * erfinv(0.5)  # median of |N(0,1)|


def rng_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-seeded generator for (chain, module, node, ...) coordinates.

    Streams with distinct keys are statistically independent and the whole
    family is bit-reproducible given ``master_seed``.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


# ---------------------------------------------------------------------------
# trigamma
# ---------------------------------------------------------------------------

# Bernoulli-number coefficients of the asymptotic expansion of psi'(x).
_TRIGAMMA_TAIL = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66, -691.0 / 2730, 7.0 / 6)


def trigamma(x: float) -> float:
    """psi'(x) for x > 0, accurate to better than 1e-10.

    Uses the recurrence psi'(x) = psi'(x+1) + 1/x^2 to shift the argument to
    x >= 10, where the asymptotic series converges to full double precision.
    """
    if not x > 0:
        raise ValueError(f"trigamma is defined for x > 0, got {x!r}")
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # psi'(x) ~ 1/x + 1/(2x^2) + sum_k B_{2k} / x^{2k+1}
    series = inv + 0.5 * inv2
    term = inv * inv2
    for coef in _TRIGAMMA_TAIL:
        series += coef * term
        term *= inv2
    return acc + series


# ---------------------------------------------------------------------------
# distribution specs
# ---------------------------------------------------------------------------

_FAMILIES = ("exponential", "half-normal", "half-cauchy", "two-component-mixture")


@dataclass(frozen=True)
class DistributionSpec:
    """A nonnegative event-time law parameterized by its median (in months).

    The two-component mixture combines an exponential and a half-normal
    component sharing the same median, so the mixture median equals
    ``median`` for any weights.
    """

    family: str
    median: float
    weights: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.median > 0:
            raise ValueError(f"median must be positive, got {self.median!r}")
        if self.family == "two-component-mixture":
            w = self.weights if self.weights is not None else (0.5, 0.5)
            if min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise ValueError(f"mixture weights must be a probability pair, got {w!r}")
            object.__setattr__(self, "weights", (float(w[0]), float(w[1])))
        elif self.weights is not None:
            raise ValueError("weights are only meaningful for mixtures")

    # -- constructors -------------------------------------------------------
    @classmethod
    def exponential(cls, median: float) -> "DistributionSpec":
        return cls("exponential", median)

    @classmethod
    def exponential_from_mean(cls, mean: float) -> "DistributionSpec":
        return cls("exponential", mean * math.log(2.0))

    @classmethod
    def half_normal(cls, median: float) -> "DistributionSpec":
        return cls("half-normal", median)

    @classmethod
    def half_cauchy(cls, sigma: float) -> "DistributionSpec":
        # the half-Cauchy median equals its scale
        return cls("half-cauchy", sigma)

    @classmethod
    def mixture(cls, median: float, weights: tuple[float, float] = (0.5, 0.5)) -> "DistributionSpec":
        return cls("two-component-mixture", median, weights)

    # -- derived parameters --------------------------------------------------
    @property
    def rate(self) -> float:
        """Exponential rate implied by the median."""
        return math.log(2.0) / self.median

    @property
    def sigma(self) -> float:
        """Scale of the underlying normal for the half-normal family."""
        return self.median / _HALF_NORMAL_MEDIAN_SCALE

    # -- cdf / pdf / quantile -------------------------------------------------
    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        tp = t[pos] if t.ndim else (t if pos else 0.0)
        if self.family == "exponential":
            val = -np.expm1(-self.rate * tp)
        elif self.family == "half-normal":
            val = erf(tp / (self.sigma * math.sqrt(2.0)))
        elif self.family == "half-cauchy":
            val = (2.0 / math.pi) * np.arctan(tp / self.median)
        else:
            w0, w1 = self.weights
            val = w0 * (-np.expm1(-self.rate * tp)) + w1 * erf(
                tp / (self.sigma * math.sqrt(2.0))
            )
        if t.ndim:
            out[pos] = val
            return out
        return float(val) if pos else 0.0

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t >= 0
        tp = np.where(pos, t, 0.0)
        if self.family == "exponential":
            val = self.rate * np.exp(-self.rate * tp)
        elif self.family == "half-normal":
            s = self.sigma
            val = math.sqrt(2.0 / math.pi) / s * np.exp(-0.5 * (tp / s) ** 2)
        elif self.family == "half-cauchy":
            s = self.median
            val = 2.0 / (math.pi * s * (1.0 + (tp / s) ** 2))
        else:
            w0, w1 = self.weights
            s = self.sigma
            val = w0 * self.rate * np.exp(-self.rate * tp) + w1 * math.sqrt(
                2.0 / math.pi
            ) / s * np.exp(-0.5 * (tp / s) ** 2)
        out = np.where(pos, val, 0.0)
        return out if t.ndim else float(out)

    def survival(self, t):
        """P(T > t), numerically stable in the far tail."""
        t = np.asarray(t, dtype=float)
        tp = np.maximum(t, 0.0)
        if self.family == "exponential":
            out = np.exp(-self.rate * tp)
        elif self.family == "half-normal":
            from scipy.special import erfc

            out = erfc(tp / (self.sigma * math.sqrt(2.0)))
        elif self.family == "half-cauchy":
            # 1 - (2/pi) atan(t/s) = (2/pi) atan(s/t)
            out = (2.0 / math.pi) * np.arctan(self.median / np.maximum(tp, 1e-300))
        else:
            from scipy.special import erfc

            w0, w1 = self.weights
            out = w0 * np.exp(-self.rate * tp) + w1 * erfc(tp / (self.sigma * math.sqrt(2.0)))
        out = np.where(t < 0, 1.0, out)
        return out if t.ndim else float(out)

    def sample_above(self, t, rng: np.random.Generator):
        """Draws conditioned on exceeding t, stable even when cdf(t) == 1.

        Works on the survival scale: solves S(x) = S(t) * U per family, so
        far-tail conditioning never collapses to the unconditional quantile.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.maximum(np.atleast_1d(t), 0.0)
        if self.family == "exponential":
            # memoryless: exact and exempt from survival underflow
            out = tt + rng.exponential(scale=1.0 / self.rate, size=tt.shape)
            out = np.maximum(out, np.nextafter(tt, math.inf))
            return float(out[0]) if scalar else out
        u = np.maximum(rng.uniform(size=tt.shape), 1e-300)
        if self.family == "half-normal":
            from scipy.special import erfc, erfcinv

            s = self.sigma * math.sqrt(2.0)
            target = np.maximum(erfc(tt / s) * u, 5e-324)
            out = s * erfcinv(target)
        elif self.family == "half-cauchy":
            target = (2.0 / math.pi) * np.arctan(self.median / np.maximum(tt, 1e-300)) * u
            out = self.median / np.tan(math.pi * np.minimum(target, 1.0 - 1e-16) / 2.0)
        else:
            out = np.array([self._mixture_above(float(x), float(v)) for x, v in zip(tt, u)])
        out = np.maximum(out, np.nextafter(tt, math.inf))
        return float(out[0]) if scalar else out

    def _mixture_above(self, t: float, u: float) -> float:
        target = float(self.survival(t)) * u
        if target <= 0:
            return math.inf
        w0, w1 = self.weights
        # bracket by the component inverses of the survival equation
        hi_exp = -math.log(min(target, 1.0)) / self.rate
        from scipy.special import erfcinv

        hi_hn = self.sigma * math.sqrt(2.0) * erfcinv(max(min(target, 1.0), 5e-324))
        hi = max(hi_exp, hi_hn, t * (1 + 1e-9) + 1e-12)
        f = lambda x: float(self.survival(x)) - target
        if f(hi) > 0:  # degenerate float corner: widen
            hi *= 2
        return brentq(f, t, hi, xtol=1e-12, rtol=8.9e-16)

    def quantile(self, p):
        """Inverse CDF; supports scalars and arrays, 0 <= p < 1."""
        arr = np.asarray(p, dtype=float)
        if np.any((arr < 0) | (arr >= 1)):
            raise ValueError(f"quantile requires 0 <= p < 1, got {p!r}")
        if self.family == "exponential":
            out = -np.log1p(-arr) / self.rate
        elif self.family == "half-normal":
            out = self.sigma * math.sqrt(2.0) * erfinv(arr)
        elif self.family == "half-cauchy":
            out = self.median * np.tan(math.pi * arr / 2.0)
        else:
            out = np.vectorize(self._mixture_quantile, otypes=[float])(arr)
        return out if arr.ndim else float(out)

    def _mixture_quantile(self, p: float) -> float:
        if p == 0.0:
            return 0.0
        # bracket between the component quantiles (mixture CDF lies between
        # the component CDFs, so its quantile lies between theirs)
        lo = -math.log1p(-p) / self.rate
        hi = self.sigma * math.sqrt(2.0) * erfinv(p)
        if lo > hi:
            lo, hi = hi, lo
        if abs(hi - lo) < 1e-14:
            return lo
        return brentq(lambda t: self.cdf(t) - p, lo, hi, xtol=1e-13, rtol=8.9e-16)


def quantile(dist: DistributionSpec, p) -> float:
    """Functional alias for ``dist.quantile``."""
    return dist.quantile(p)


def sample_truncated(dist: DistributionSpec, lower: float, upper: float, rng: np.random.Generator):
    """One draw from ``dist`` conditioned to (lower, upper), by inverse CDF.

    Unbounded-above intervals use the survival-scale sampler, which stays
    exact when cdf(lower) rounds to 1.
    """
    if not lower < upper:
        raise ValueError(f"empty truncation interval ({lower}, {upper})")
    if not math.isfinite(upper):
        return dist.sample_above(max(lower, 0.0), rng)
    a = dist.cdf(max(lower, 0.0))
    b = dist.cdf(upper)
    if not b - a > 0:
        raise ValueError(f"interval ({lower}, {upper}) carries no mass under {dist.family}")
    u = a + (b - a) * rng.uniform()
    return dist.quantile(u)


# ---------------------------------------------------------------------------
# Polya-Gamma sampling (exact alternating-series method for unit shape)
# ---------------------------------------------------------------------------

_PG_TRUNC = 0.64
_PG_EXACT_MAX = 170


def polya_gamma_mean(b: float, z: float) -> float:
    z = abs(z)
    if z < 1e-6:
        return b * (0.25 - z * z / 48.0)
    return b * math.tanh(z / 2.0) / (2.0 * z)


def polya_gamma_var(b: float, z: float) -> float:
    z = abs(z)
    if z < 1e-3:
        return b * (1.0 / 24.0 - z * z / 120.0)
    return b * (math.sinh(z) - z) / (4.0 * z**3 * math.cosh(z / 2.0) ** 2)


def _pg_series_coef(n: int, x: float) -> float:
    if x > _PG_TRUNC:
        return math.pi * (n + 0.5) * math.exp(-((n + 0.5) ** 2) * math.pi**2 * x / 2.0)
    return (
        math.pi
        * (n + 0.5)
        * (2.0 / (math.pi * x)) ** 1.5
        * math.exp(-2.0 * (n + 0.5) ** 2 / x)
    )


def _pg_texpon_mass(z: float) -> float:
    """P(proposal falls in the truncated-exponential piece beyond the cutpoint)."""
    t = _PG_TRUNC
    fz = math.pi**2 / 8.0 + z * z / 2.0
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    with np.errstate(divide="ignore"):
        xb = x0 - z + math.log(max(ndtr(b), 5e-324))
        xa = x0 + z + math.log(max(ndtr(a), 5e-324))
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


def _pg_rtigauss(z: float, rng: np.random.Generator) -> float:
    """Inverse-Gaussian IG(1/z, 1) restricted to (0, trunc]."""
    t = _PG_TRUNC
    if z < 1.0 / t:  # mu > t: rejection via truncated inverse-chi-square
        while True:
            while True:
                e1 = rng.exponential()
                e2 = rng.exponential()
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / (1.0 + t * e1) ** 2
            if rng.uniform() <= math.exp(-0.5 * z * z * x):
                return x
    mu = 1.0 / z
    while True:
        y = rng.standard_normal() ** 2
        muy = mu * y
        x = mu * (1.0 + 0.5 * muy - 0.5 * math.sqrt(4.0 * muy + muy * muy))
        if rng.uniform() > mu / (mu + x):
            x = mu * mu / x
        if x <= t:
            return x


def _pg1(z: float, rng: np.random.Generator) -> float:
    """One exact PG(1, z) draw (alternating-series rejection sampler)."""
    z = abs(z) * 0.5
    fz = math.pi**2 / 8.0 + z * z / 2.0
    p_texp = _pg_texpon_mass(z)
    while True:
        if rng.uniform() < p_texp:
            x = _PG_TRUNC + rng.exponential() / fz
        else:
            x = _pg_rtigauss(z, rng)
        s = _pg_series_coef(0, x)
        y = rng.uniform() * s
        n = 0
        while True:
            n += 1
            if n & 1:
                s -= _pg_series_coef(n, x)
                if y <= s:
                    return x / 4.0
            else:
                s += _pg_series_coef(n, x)
                if y > s:
                    break


def sample_polya_gamma(b: int, z: float, rng: np.random.Generator) -> float:
    """Draw omega ~ PG(b, z).

    Exact for integer b <= 170 (sum of unit draws); for larger shapes a
    normal approximation on the analytic moments is used, which is accurate
    to a fraction of a standard deviation at those counts.
    """
    if b <= 0:
        raise ValueError(f"Polya-Gamma shape must be positive, got {b!r}")
    if b <= _PG_EXACT_MAX and b == int(b):
        return sum(_pg1(z, rng) for _ in range(int(b)))
    m = polya_gamma_mean(b, z)
    sd = math.sqrt(polya_gamma_var(b, z))
    return max(m + sd * rng.standard_normal(), 1e-12)


def _pg1_batch(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized exact PG(1, z) draws, one per entry of ``z``."""
    z = np.abs(np.asarray(z, dtype=float)) * 0.5
    n = z.size
    fz = math.pi**2 / 8.0 + z * z / 2.0
    p_texp = np.array([_pg_texpon_mass(v) for v in z])
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        zt = z[todo]
        ft = fz[todo]
        m = todo.size
        use_texp = rng.uniform(size=m) < p_texp[todo]
        x = np.empty(m)
        x[use_texp] = _PG_TRUNC + rng.exponential(size=int(use_texp.sum())) / ft[use_texp]
        ig_idx = np.nonzero(~use_texp)[0]
        for j in ig_idx:
            x[j] = _pg_rtigauss(zt[j], rng)
        # alternating-series accept/reject, resolved lanewise
        s = _pg_coef_batch(0, x)
        y = rng.uniform(size=m) * s
        accept = np.zeros(m, dtype=bool)
        reject = np.zeros(m, dtype=bool)
        level = 0
        open_ = np.ones(m, dtype=bool)
        while open_.any():
            level += 1
            coef = _pg_coef_batch(level, x)
            if level & 1:
                s = np.where(open_, s - coef, s)
                newly = open_ & (y <= s)
                accept |= newly
            else:
                s = np.where(open_, s + coef, s)
                newly = open_ & (y > s)
                reject |= newly
            open_ &= ~newly
        out[todo[accept]] = x[accept] / 4.0
        todo = todo[reject]
    return out


def _pg_coef_batch(n: int, x: np.ndarray) -> np.ndarray:
    big = x > _PG_TRUNC
    out = np.empty_like(x)
    xb = x[big]
    xs = x[~big]
    out[big] = math.pi * (n + 0.5) * np.exp(-((n + 0.5) ** 2) * math.pi**2 * xb / 2.0)
    out[~big] = (
        math.pi
        * (n + 0.5)
        * (2.0 / (math.pi * xs)) ** 1.5
        * np.exp(-2.0 * (n + 0.5) ** 2 / xs)
    )
    return out


def sample_polya_gamma_batch(b: np.ndarray, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vector of PG(b_i, z_i) draws; exact whenever b_i <= 170."""
    b = np.asarray(b)
    z = np.asarray(z, dtype=float)
    out = np.zeros(b.shape, dtype=float)
    small = (b > 0) & (b <= _PG_EXACT_MAX)
    if small.any():
        reps = b[small].astype(int)
        unit = _pg1_batch(np.repeat(z[small], reps), rng)
        out[small] = np.add.reduceat(unit, np.concatenate(([0], np.cumsum(reps)[:-1])))
    for i in np.nonzero(b > _PG_EXACT_MAX)[0]:
        out[i] = sample_polya_gamma(int(b[i]), float(z[i]), rng)
    if np.any(b <= 0):
        raise ValueError("Polya-Gamma shapes must be positive")
    return out


# ---------------------------------------------------------------------------
# multivariate normal conditioning
# ---------------------------------------------------------------------------

_JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class MvnSpec:
    """Mean vector and covariance matrix of a multivariate normal."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.size == 0:
            cov = cov.reshape(0, 0)
        cov = np.atleast_2d(cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        if cov.size and not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def chol_with_jitter(mat: np.ndarray, label: str = "matrix"):
    """Cholesky factor with escalating diagonal jitter; raises naming ``label``."""
    if mat.size == 0:
        return np.zeros((0, 0))
    scale = max(float(np.mean(np.diag(mat))), 1e-300)
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(mat + jit * scale * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(f"Cholesky factorization failed for {label} even after jitter")


def mvn_condition(
    spec: MvnSpec,
    observed_indices,
    observed_values,
    label: str = "mvn",
) -> MvnSpec:
    """Condition a multivariate normal on a subset of coordinates.

    Returns the distribution of the unobserved coordinates (in their original
    relative order): mean mu_r + K_ro K_oo^-1 (z - mu_o) and covariance
    K_rr - K_ro K_oo^-1 K_or.
    """
    idx = np.asarray(list(observed_indices), dtype=int)
    vals = np.asarray(observed_values, dtype=float)
    if idx.size != vals.size:
        raise ValueError("observed indices and values differ in length")
    if idx.size == 0:
        return spec
    if len(np.unique(idx)) != idx.size or idx.min() < 0 or idx.max() >= spec.dim:
        raise ValueError(f"invalid observed index set {idx!r} for dimension {spec.dim}")
    rest = np.setdiff1d(np.arange(spec.dim), idx)
    k_oo = spec.cov[np.ix_(idx, idx)]
    if rest.size == 0:
        return MvnSpec(np.zeros(0), np.zeros((0, 0)))
    k_ro = spec.cov[np.ix_(rest, idx)]
    try:
        factor = cho_factor(k_oo + 1e-12 * np.eye(idx.size) * max(np.mean(np.diag(k_oo)), 1e-300))
        alpha = cho_solve(factor, vals - spec.mean[idx])
        gain = cho_solve(factor, k_ro.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular conditioning block at {label}") from exc
    mean = spec.mean[rest] + k_ro @ alpha
    cov = spec.cov[np.ix_(rest, rest)] - gain @ k_ro.T
    cov = 0.5 * (cov + cov.T)
    return MvnSpec(mean, cov)
