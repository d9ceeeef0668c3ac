"""Probability kernels used by the simulator, the sampler and the evaluation harness.

The truncated Student's t is the workhorse: every observation in the condition
model is drawn from one, either as a deterioration step or as a post-repair
level. Sampling goes through the inverse CDF so that common random numbers can
be fed in directly (see :func:`trunc_t_ppf`).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._validation import check_positive, check_rng

__all__ = [
    "DegenerateTruncationError",
    "TruncStudentT",
    "DirichletParams",
    "SummaryStats",
    "sample_dirichlet",
    "dirichlet_logpdf",
    "trunc_t_logpdf",
    "trunc_t_logpdf_arrays",
    "trunc_t_log_mass",
    "trunc_t_ppf",
    "trunc_t_sample",
    "normal_logpdf",
    "truncnorm_logpdf",
    "truncnorm_sample",
    "gamma_logpdf",
    "beta_logpdf",
    "hdi",
    "equal_tailed_interval",
    "standard_error",
    "summarize",
]

MIN_TRUNCATION_MASS = 1e-300


class DegenerateTruncationError(ValueError):
    """The truncation interval carries (numerically) no probability mass."""


def _student_log_kernel(y, nu):
    # log density of the standard t at y
    return (
        special.gammaln(0.5 * (nu + 1.0))
        - special.gammaln(0.5 * nu)
        - 0.5 * np.log(nu * np.pi)
        - 0.5 * (nu + 1.0) * np.log1p(y * y / nu)
    )


def _standard_mass(a, b, nu):
    """P(a <= T <= b) for standard t with ``nu`` dof, computed tail-aware."""
    a, b, nu = np.asarray(a, float), np.asarray(b, float), np.asarray(nu, float)
    # one-sided truncation needs a single CDF call, accurate in either tail
    if a.ndim == 0 and a == -np.inf:
        return special.stdtr(nu, b)
    if b.ndim == 0 and b == np.inf:
        return special.stdtr(nu, -a)
    a, b, nu = np.broadcast_arrays(a, b, nu)
    lower = special.stdtr(nu, b) - special.stdtr(nu, a)
    upper = special.stdtr(nu, -a) - special.stdtr(nu, -b)
    middle = 1.0 - special.stdtr(nu, a) - special.stdtr(nu, -b)
    return np.where(b <= 0, lower, np.where(a >= 0, upper, middle))


def trunc_t_log_mass(loc, scale, nu, lb, ub):
    """Log of the base-t probability of ``[lb, ub]``."""
    scale = np.asarray(scale, float)
    lb, ub = np.asarray(lb, float), np.asarray(ub, float)
    a = lb if lb.ndim == 0 and lb == -np.inf else (lb - loc) / scale
    b = ub if ub.ndim == 0 and ub == np.inf else (ub - loc) / scale
    with np.errstate(divide="ignore"):
        return np.log(_standard_mass(a, b, nu)) + np.zeros(np.shape(loc))


def trunc_t_logpdf_arrays(x, loc, scale, nu, lb=-np.inf, ub=np.inf):
    """Vectorised truncated Student's t log-density; all arguments broadcast.

    Returns ``-inf`` outside ``[lb, ub]`` and wherever the truncation mass
    underflows.
    """
    x = np.asarray(x, float)
    scale = np.asarray(scale, float)
    y = (x - loc) / scale
    log_mass = trunc_t_log_mass(loc, scale, nu, lb, ub)
    out = _student_log_kernel(y, nu) - np.log(scale) - log_mass
    inside = (x >= lb) & (x <= ub) & np.isfinite(log_mass)
    return np.where(inside, out, -np.inf)


def trunc_t_ppf(u, loc, scale, nu, lb=-np.inf, ub=np.inf):
    """Inverse CDF of the truncated t at probabilities ``u`` (vectorised).

    The base-t CDF is evaluated on whichever tail keeps the interval's
    probabilities away from 1, so intervals deep in the upper tail keep their
    precision. Raises :class:`DegenerateTruncationError` if any interval has
    mass below 1e-300.
    """
    u, loc, scale, nu, lb, ub = np.broadcast_arrays(
        np.asarray(u, float),
        np.asarray(loc, float),
        np.asarray(scale, float),
        np.asarray(nu, float),
        np.asarray(lb, float),
        np.asarray(ub, float),
    )
    a = (lb - loc) / scale
    b = (ub - loc) / scale
    upper = a >= 0
    # lower-side formulation
    Fa = special.stdtr(nu, a)
    Fb = special.stdtr(nu, b)
    # upper-side formulation, G(x) = P(T > x)
    Ga = special.stdtr(nu, -a)
    Gb = special.stdtr(nu, -b)
    mass = np.where(upper, Ga - Gb, Fb - Fa)
    if np.any(~(mass >= MIN_TRUNCATION_MASS)):
        raise DegenerateTruncationError(
            "truncation interval has probability mass below 1e-300"
        )
    p_low = Fa + u * (Fb - Fa)
    p_up = Ga - u * (Ga - Gb)
    tiny = np.finfo(float).tiny
    y = np.where(
        upper,
        -special.stdtrit(nu, np.clip(p_up, tiny, 1.0)),
        special.stdtrit(nu, np.clip(p_low, tiny, 1.0)),
    )
    y = np.clip(y, a, b)
    out = loc + scale * y
    return np.clip(out, lb, ub)


@dataclass(frozen=True)
class TruncStudentT:
    """Student's t with location ``mu``, scale ``sigma`` and ``nu`` dof on ``[lb, ub]``."""

    mu: float
    sigma: float
    nu: float
    lb: float = -np.inf
    ub: float = np.inf

    def __post_init__(self):
        check_positive("sigma", self.sigma)
        check_positive("nu", self.nu)
        if not self.lb < self.ub:
            raise ValueError(f"need lb < ub, got lb={self.lb}, ub={self.ub}")

    @property
    def log_mass(self):
        return float(trunc_t_log_mass(self.mu, self.sigma, self.nu, self.lb, self.ub))

    def logpdf(self, x):
        return trunc_t_logpdf_arrays(x, self.mu, self.sigma, self.nu, self.lb, self.ub)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        return trunc_t_ppf(u, self.mu, self.sigma, self.nu, self.lb, self.ub)

    def sample(self, rng=None, size=None):
        rng = check_rng(rng)
        return self.ppf(rng.random(size))


def trunc_t_logpdf(x, d):
    """Log-density of ``d`` (a :class:`TruncStudentT`) at ``x``."""
    out = d.logpdf(x)
    return float(out) if np.ndim(out) == 0 else out


def trunc_t_sample(d, rng=None, size=None):
    """Draw from ``d`` by inverse CDF; a scalar when ``size`` is None."""
    out = d.sample(rng, size)
    return float(out) if size is None else out


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1:
            raise ValueError("alpha must be a non-empty 1-d vector")
        if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise ValueError(f"Dirichlet concentrations must be positive, got {alpha!r}")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    def __len__(self):
        return self.alpha.size

    @property
    def mean(self):
        return self.alpha / self.alpha.sum()


def sample_dirichlet(params, rng=None):
    """One draw from ``Dirichlet(params.alpha)``, renormalised to sum to 1."""
    if not isinstance(params, DirichletParams):
        params = DirichletParams(params)
    rng = check_rng(rng)
    draw = rng.dirichlet(params.alpha)
    return draw / draw.sum()


def dirichlet_logpdf(x, alpha):
    """Dirichlet log-density over the trailing axis (rows may be batched)."""
    x = np.asarray(x, float)
    alpha = np.asarray(alpha, float)
    norm = special.gammaln(alpha.sum(axis=-1)) - special.gammaln(alpha).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = np.where(alpha == 1.0, 0.0, (alpha - 1.0) * np.log(x)).sum(axis=-1)
    return norm + body


_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


def truncnorm_logpdf(x, mean, sd, lb=-np.inf, ub=np.inf):
    x = np.asarray(x, float)
    a = (lb - mean) / sd
    b = (ub - mean) / sd
    if b <= 0:
        log_mass = special.log_ndtr(b) + np.log1p(-np.exp(special.log_ndtr(a) - special.log_ndtr(b)))
    else:
        log_mass = np.log(special.ndtr(-a) - special.ndtr(-b))
    out = normal_logpdf(x, mean, sd) - log_mass
    return np.where((x >= lb) & (x <= ub), out, -np.inf)


def truncnorm_sample(mean, sd, lb=-np.inf, ub=np.inf, rng=None, size=None):
    from scipy.stats import truncnorm

    rng = check_rng(rng)
    a = (lb - mean) / sd
    b = (ub - mean) / sd
    return truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)


def gamma_logpdf(x, shape, rate):
    """Gamma density in the shape/rate parametrisation."""
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * np.log(rate) - special.gammaln(shape) + (shape - 1) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def beta_logpdf(x, a, b):
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)
    return np.where((x > 0) & (x < 1), out, -np.inf)


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    se: float
    hdi_lo: float
    hdi_hi: float
    mass: float = 0.95

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")
        if self.hdi_lo > self.hdi_hi:
            raise ValueError("hdi_lo must not exceed hdi_hi")
        if not 0 < self.mass <= 1:
            raise ValueError("mass must lie in (0, 1]")

    def as_dict(self):
        return {
            "mean": self.mean,
            "se": self.se,
            "hdi_lo": self.hdi_lo,
            "hdi_hi": self.hdi_hi,
            "mass": self.mass,
        }


def hdi(samples, mass=0.95):
    """Narrowest window of sorted samples that holds ``ceil(mass * n)`` points.

    Assumes a unimodal sample; on ties the leftmost window wins.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("hdi of an empty sample is undefined")
    if not 0 < mass <= 1:
        raise ValueError(f"mass must lie in (0, 1], got {mass}")
    k = max(1, min(n, math.ceil(mass * n - 1e-9)))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def equal_tailed_interval(samples, mass=0.95):
    tail = 0.5 * (1.0 - mass)
    lo, hi = np.quantile(np.asarray(samples, dtype=float), [tail, 1.0 - tail])
    return float(lo), float(hi)


def standard_error(samples):
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(x.size))


def summarize(samples, mass=0.95, interval="hdi"):
    """Mean, standard error and a ``mass`` credible interval of ``samples``.

    ``interval`` selects the minimal-width HDI (default) or equal-tailed
    quantiles (``"equal-tailed"``).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if interval == "hdi":
        lo, hi = hdi(x, mass)
    elif interval == "equal-tailed":
        lo, hi = equal_tailed_interval(x, mass)
    else:
        raise ValueError(f"unknown interval kind {interval!r}")
    return SummaryStats(float(x.mean()), standard_error(x), lo, hi, mass)
