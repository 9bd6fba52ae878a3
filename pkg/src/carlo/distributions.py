"""Distribution families, exact samplers and the normal cdf/quantile pair.

Continuous densities, cdfs and quantiles delegate to :mod:`scipy.stats` and
:mod:`scipy.special`; the samplers that illustrate a construction (inversion,
waiting times, Box-Muller, the twelve-uniform sum, truncation by inversion,
mixture representations) are written out here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import special, stats

from .errors import CapabilityError, DomainError, UnderflowError
from .rng import RngStream

FAMILIES = {
    "uniform": 2,
    "normal": 2,
    "exponential": 1,
    "gamma": 2,
    "inverse_gamma": 2,
    "beta": 2,
    "cauchy": 2,
    "pareto": 1,
    "double_exponential": 1,
    "poisson": 1,
    "binomial": 2,
    "dirichlet": None,
    "noncentral_chisq": 2,
    "truncated_normal": 4,
}
DISCRETE = {"poisson", "binomial"}

# Upper-tail mass dropped when tabulating a discrete cdf.
TABLE_TAIL = 1e-9


def normal_cdf_quantile(x, direction: Literal["cdf", "logcdf", "sf", "quantile"] = "cdf"):
    """Standard normal cdf, log-cdf, survival function or quantile.

    Parameters
    ----------
    x : float or array_like
        Abscissa for ``cdf``/``logcdf``/``sf``; probability for ``quantile``.
    direction : {"cdf", "logcdf", "sf", "quantile"}

    Returns
    -------
    float or ndarray

    Notes
    -----
    Backed by the Cephes routines in :mod:`scipy.special`, which keep full
    relative accuracy far into the lower tail (``cdf(-20)`` is about
    ``2.7536e-89``).
    """
    x = np.asarray(x, dtype=float)
    if direction == "cdf":
        out = special.ndtr(x)
    elif direction == "logcdf":
        out = special.log_ndtr(x)
    elif direction == "sf":
        out = special.ndtr(-x)
    elif direction == "quantile":
        if np.any((x < 0) | (x > 1)):
            raise DomainError("normal quantile needs p in [0, 1]")
        out = special.ndtri(x)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(out) if out.ndim == 0 else out


def _check(family: str, params: tuple) -> None:
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}")
    arity = FAMILIES[family]
    if arity is not None and len(params) != arity:
        raise DomainError(f"{family} takes {arity} parameters, got {len(params)}")
    p = [float(v) for v in params]
    if not all(math.isfinite(v) or family == "truncated_normal" for v in p):
        raise DomainError(f"non-finite parameter for {family}: {params}")
    bad = False
    if family == "uniform":
        bad = not p[0] < p[1]
    elif family in ("normal", "cauchy"):
        bad = p[1] <= 0
    elif family in ("exponential", "pareto", "double_exponential", "poisson"):
        bad = p[0] <= 0
    elif family in ("gamma", "inverse_gamma", "beta"):
        bad = p[0] <= 0 or p[1] <= 0
    elif family == "binomial":
        bad = p[0] < 0 or p[0] != int(p[0]) or not 0 <= p[1] <= 1
    elif family == "dirichlet":
        bad = len(p) < 2 or min(p) <= 0
    elif family == "noncentral_chisq":
        bad = p[0] <= 0 or p[1] < 0
    elif family == "truncated_normal":
        bad = p[1] <= 0 or not p[2] < p[3] or not (math.isfinite(p[0]) and math.isfinite(p[1]))
    if bad:
        raise DomainError(f"invalid parameters for {family}: {params}")


@lru_cache(maxsize=256)
def _frozen(f: str, p: tuple):
    """scipy frozen distribution for a validated family; cached because freezing is slow."""
    if f == "uniform":
        return stats.uniform(loc=p[0], scale=p[1] - p[0])
    if f == "normal":
        return stats.norm(loc=p[0], scale=p[1])
    if f == "exponential":
        return stats.expon(scale=1.0 / p[0])
    if f == "gamma":
        return stats.gamma(p[0], scale=1.0 / p[1])
    if f == "inverse_gamma":
        return stats.invgamma(p[0], scale=p[1])
    if f == "beta":
        return stats.beta(p[0], p[1])
    if f == "cauchy":
        return stats.cauchy(loc=p[0], scale=p[1])
    if f == "pareto":
        return stats.pareto(p[0])
    if f == "double_exponential":
        return stats.laplace(scale=1.0 / p[0])
    if f == "poisson":
        return stats.poisson(p[0])
    if f == "binomial":
        return stats.binom(int(p[0]), p[1])
    if f == "noncentral_chisq":
        return stats.ncx2(p[0], p[1]) if p[1] > 0 else stats.chi2(p[0])
    if f == "truncated_normal":
        mu, s, lo, up = p
        return stats.truncnorm((lo - mu) / s, (up - mu) / s, loc=mu, scale=s)
    raise CapabilityError(f"{f} has no univariate scipy counterpart")


@dataclass(frozen=True)
class DistributionSpec:
    """A parametric family with its density, cdf, quantile and sampler.

    Parameterisations: ``uniform(a, b)``, ``normal(mu, sigma)``,
    ``exponential(rate)``, ``gamma(shape, rate)``, ``inverse_gamma(shape, scale)``,
    ``beta(a, b)``, ``cauchy(loc, scale)``, ``pareto(alpha)`` on ``(1, inf)``,
    ``double_exponential(rate)`` centred at zero, ``poisson(lam)``,
    ``binomial(n, p)``, ``dirichlet(*alphas)``, ``noncentral_chisq(df, nc)``
    and ``truncated_normal(mu, sigma, lo, up)``.
    """

    family: str
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        _check(self.family, self.params)

    @property
    def discrete(self) -> bool:
        return self.family in DISCRETE

    def _scipy(self):
        return _frozen(self.family, self.params)

    def log_density(self, x):
        """Log density (or log mass for discrete families)."""
        if self.family == "dirichlet":
            x = np.asarray(x, dtype=float)
            a = np.asarray(self.params)
            norm = special.gammaln(a.sum()) - special.gammaln(a).sum()
            with np.errstate(divide="ignore"):
                return norm + np.sum(special.xlogy(a - 1, x), axis=-1)
        if self.family == "normal":
            mu, s = self.params
            z = (np.asarray(x, dtype=float) - mu) / s
            return -0.5 * z * z - math.log(s) - 0.5 * math.log(2 * math.pi)
        d = self._scipy()
        return d.logpmf(x) if self.discrete else d.logpdf(x)

    def cdf(self, x):
        if self.family == "dirichlet":
            raise CapabilityError("dirichlet has no scalar cdf")
        if self.family == "normal":
            mu, s = self.params
            return normal_cdf_quantile((np.asarray(x, dtype=float) - mu) / s, "cdf")
        return self._scipy().cdf(x)

    def quantile(self, p):
        if self.family == "dirichlet":
            raise CapabilityError("dirichlet has no quantile function")
        p = np.asarray(p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise DomainError("quantile needs p in [0, 1]")
        if self.family == "normal":
            mu, s = self.params
            return mu + s * normal_cdf_quantile(p, "quantile")
        if self.family == "pareto":
            return (1.0 - p) ** (-1.0 / self.params[0])
        if self.family == "exponential":
            return -np.log1p(-p) / self.params[0]
        return self._scipy().ppf(p)

    def sample(self, stream: RngStream, n: int | None = None):
        """Exact draws using only ``stream``."""
        f, p = self.family, self.params
        g = stream.generator
        size = None if n is None else int(n)
        if f == "uniform":
            return p[0] + (p[1] - p[0]) * stream.uniform(size)
        if f == "normal":
            return p[0] + p[1] * stream.normal(size)
        if f == "exponential":
            return stream.exponential(size, p[0])
        if f == "gamma":
            return g.standard_gamma(p[0], size) / p[1]
        if f == "inverse_gamma":
            return inverse_gamma_sample(p[0], p[1], stream, size)
        if f == "beta":
            return g.beta(p[0], p[1], size)
        if f == "cauchy":
            return p[0] + p[1] * np.tan(np.pi * (stream.uniform(size) - 0.5))
        if f == "pareto":
            return stream.uniform(size) ** (-1.0 / p[0])
        if f == "double_exponential":
            e = stream.exponential(size, p[0])
            s = np.where(stream.uniform(size) < 0.5, -1.0, 1.0)
            return e * s if size is not None else float(e * s)
        if f == "poisson":
            return g.poisson(p[0], size)
        if f == "binomial":
            return g.binomial(int(p[0]), p[1], size)
        if f == "dirichlet":
            return dirichlet_sample(p, stream, size)
        if f == "noncentral_chisq":
            return noncentral_chisq_sample(p[0], p[1], stream, "poisson_mixture", size)
        if f == "truncated_normal":
            return truncated_normal_sample(*p, stream=stream, n=size)
        raise CapabilityError(f)  # pragma: no cover


def inverse_cdf_sample(spec: DistributionSpec, stream: RngStream, n: int | None = None):
    """Draw by applying the quantile function to stream uniforms."""
    if spec.discrete:
        return discrete_inverse_sample(spec, stream, n)
    if spec.family in ("dirichlet",):
        raise CapabilityError(f"{spec.family} has no closed-form quantile")
    return spec.quantile(stream.uniform(n))


def cdf_table(spec: DistributionSpec) -> np.ndarray:
    """Cumulative probabilities ``F(0), F(1), ...`` up to the ``1 - 1e-9`` quantile."""
    if not spec.discrete:
        raise CapabilityError("cdf tables are for discrete families")
    top = int(spec._scipy().ppf(1.0 - TABLE_TAIL))
    return spec.cdf(np.arange(top + 1))


def discrete_inverse_sample(spec: DistributionSpec, stream: RngStream, n: int | None = None):
    """Smallest ``k >= 0`` with ``F(k) >= u``, from a truncated cdf table.

    Draws falling in the discarded upper tail are clamped to the last entry.
    """
    table = cdf_table(spec)
    u = stream.uniform(n)
    k = np.minimum(np.searchsorted(table, u, side="left"), len(table) - 1)
    return int(k) if n is None else k.astype(np.int64)


def pois1_window_sample(lam: float, stream: RngStream, n: int | None = None):
    """Poisson draws from a cdf window of ``lam +/- 3 sqrt(lam)``.

    Reproduces the window construction as commonly printed: the window starts
    at ``max(0, round(lam - spread))`` and the count of window cdf values
    below ``u`` is added to it minus one. That recipe is shifted down by one
    relative to exact inversion, so it is clamped at zero here; it is kept for
    comparison only. Use :func:`discrete_inverse_sample` for exact draws.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    spread = 3 * math.sqrt(lam)
    start = max(0.0, lam - spread)
    window = np.round(start + np.arange(int(math.floor(lam + spread - start)) + 1)).astype(np.int64)
    probs = stats.poisson.cdf(window, lam)
    u = np.atleast_1d(stream.uniform(n))
    x = window[0] + (probs[None, :] < u[:, None]).sum(axis=1) - 1
    x = np.maximum(x, 0)
    return int(x[0]) if n is None else x


# Offset between the waiting-time count and a Poisson variate.
POIS2_OFFSET = 1


def poisson_waiting_sample(lam: float, stream: RngStream, n: int | None = None):
    """Count exponential inter-arrival times until their sum passes one.

    The loop starts with one ``Exp(lam)`` draw and ``k = 1`` and adds draws
    while the running sum stays below one, returning ``k``. The result is
    ``N + 1`` with ``N ~ Poisson(lam)``, so the support starts at one;
    subtract :data:`POIS2_OFFSET` to get a Poisson variate.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    size = 1 if n is None else int(n)
    out = np.empty(size, dtype=np.int64)
    # Vectorised over draws: chunks of exponentials, summed until every row crosses 1.
    chunk = max(8, int(lam + 6 * math.sqrt(lam) + 8))
    for i in range(size):
        total, k = 0.0, 0
        while True:
            e = stream.exponential(chunk, lam)
            cs = total + np.cumsum(e)
            hit = np.flatnonzero(cs >= 1.0)
            if hit.size:
                k += int(hit[0]) + 1
                break
            total = cs[-1]
            k += chunk
        out[i] = k
    return int(out[0]) if n is None else out


def box_muller_transform(u1, u2):
    """Map two uniforms to two independent standard normals."""
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)


def box_muller_pair(stream: RngStream, n: int | None = None):
    """Pairs of standard normals from the Box-Muller transform."""
    u = stream.uniform(2 if n is None else 2 * int(n))
    x1, x2 = box_muller_transform(u[0::2], u[1::2])
    if n is None:
        return float(x1[0]), float(x2[0])
    return x1, x2


def clt12_normal(stream: RngStream, n: int | None = None):
    """Approximate normal as the sum of twelve ``U(-1/2, 1/2)`` variates.

    The support is ``[-6, 6]`` and the tails are too light.
    """
    size = 1 if n is None else int(n)
    z = (stream.uniform(12 * size).reshape(size, 12) - 0.5).sum(axis=1)
    return float(z[0]) if n is None else z


def truncated_normal_sample(mu, sigma, lo, up, stream: RngStream, n: int | None = None):
    """Normal ``N(mu, sigma^2)`` restricted to ``[lo, up]`` by cdf inversion.

    The inversion runs in log space on the side of the mean that holds the
    interval, so far-tail truncation such as ``[40, inf)`` stays exact.

    Raises
    ------
    UnderflowError
        If the retained mass cannot be resolved even in log space.
    """
    if sigma <= 0 or not lo < up:
        raise DomainError("need sigma > 0 and lo < up")
    a, b = (lo - mu) / sigma, (up - mu) / sigma
    # Reflect so the interval sits in the lower tail: P(Z <= hi) with hi = -a.
    upper = a > 0
    lo_z, hi_z = (-b, -a) if upper else (a, b)
    l_hi = special.log_ndtr(hi_z)
    l_lo = special.log_ndtr(lo_z)
    with np.errstate(divide="ignore"):
        log_mass = l_hi + np.log1p(-np.exp(l_lo - l_hi))
    if not np.isfinite(log_mass):
        raise UnderflowError(f"truncation interval [{lo}, {up}] holds no representable mass")
    u = stream.uniform(n)
    # Inverse cdf of P(Z <= z) = Phi(lo_z) + u * mass, in logs.
    lq = np.logaddexp(l_lo, np.log(u) + log_mass)
    z = special.ndtri_exp(np.minimum(lq, 0.0))
    if upper:
        z = -z
    x = np.clip(mu + sigma * z, lo, up)
    return float(x) if n is None else x


def noncentral_chisq_sample(
    p: float,
    lam: float,
    stream: RngStream,
    method: Literal["poisson_mixture", "normal_square"] = "poisson_mixture",
    n: int | None = None,
):
    """Noncentral chi-squared draws with ``p`` degrees of freedom and noncentrality ``lam``.

    ``poisson_mixture`` draws ``K ~ Poisson(lam / 2)`` then ``chi2(p + 2K)``;
    ``normal_square`` adds ``chi2(p - 1)`` and ``(Z + sqrt(lam))^2`` and needs
    ``p >= 1``.
    """
    if p <= 0 or lam < 0:
        raise DomainError("need p > 0 and lam >= 0")
    g = stream.generator
    size = 1 if n is None else int(n)
    if method == "poisson_mixture":
        k = g.poisson(lam / 2.0, size)
        x = 2.0 * g.standard_gamma((p + 2 * k) / 2.0)
    elif method == "normal_square":
        if p < 1:
            raise DomainError("normal_square needs p >= 1")
        central = 2.0 * g.standard_gamma((p - 1) / 2.0, size) if p > 1 else np.zeros(size)
        x = central + (g.standard_normal(size) + math.sqrt(lam)) ** 2
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(x[0]) if n is None else x


def dirichlet_sample(alpha, stream: RngStream, n: int | None = None):
    """Dirichlet draws as normalised independent gammas."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1 or a.size < 2 or np.any(a <= 0):
        raise DomainError("alpha must hold at least two positive values")
    size = 1 if n is None else int(n)
    gam = stream.generator.standard_gamma(a, (size, a.size))
    x = gam / gam.sum(axis=1, keepdims=True)
    return x[0] if n is None else x


def inverse_gamma_sample(a: float, b: float, stream: RngStream, n: int | None = None):
    """``1 / Gamma(a, rate=b)``, i.e. the inverse gamma with shape ``a`` and scale ``b``."""
    if a <= 0 or b <= 0:
        raise DomainError("need a > 0 and b > 0")
    return b / stream.generator.standard_gamma(a, n)
