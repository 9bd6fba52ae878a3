"""Variance reduction: antithetic pairs, control variates, Rao-Blackwellisation, thinning and the bootstrap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import DegenerateError, DomainError
from .integrate import RunningEstimate, running_mean
from .rng import RngStream


@dataclass
class PairedEstimate:
    """A plain estimator next to its variance-reduced counterpart.

    ``variance_ratio`` compares the variances of the two final estimates;
    :meth:`from_runs` takes it as ``se(reduced)^2 / se(plain)^2``.
    ``replicates`` optionally holds final estimates from independent
    replications, keyed ``"plain"`` and ``"reduced"``.
    """

    plain: RunningEstimate
    reduced: RunningEstimate
    variance_ratio: float
    replicates: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, plain: RunningEstimate, reduced: RunningEstimate, replicates=None):
        ratio = reduced.se**2 / plain.se**2 if plain.se > 0 else math.inf
        return cls(plain, reduced, ratio, replicates or {})

    def replicate_variances(self) -> tuple[float, float]:
        """Across-replication variances of the plain and reduced estimates."""
        return float(np.var(self.replicates["plain"], ddof=1)), float(np.var(self.replicates["reduced"], ddof=1))


def antithetic_estimate(h: Callable, n: int, stream: RngStream) -> PairedEstimate:
    """Estimate ``E h(U)`` for ``U ~ U(0, 1)`` with antithetic pairs ``(U, 1 - U)``.

    The plain estimator spends the same ``2n`` evaluations on independent
    uniforms; the reduced one averages ``(h(U) + h(1 - U)) / 2`` over ``n``
    pairs.
    """
    plain_terms = np.asarray(h(stream.uniform(2 * n)), dtype=float)
    u = stream.uniform(n)
    reduced_terms = 0.5 * (np.asarray(h(u), dtype=float) + np.asarray(h(1.0 - u), dtype=float))
    # Compare at equal cost: n pairs against 2n single draws.
    var_plain = np.var(plain_terms, ddof=1) / (2 * n)
    var_red = np.var(reduced_terms, ddof=1) / n
    ratio = float(var_red / var_plain) if var_plain > 0 else math.inf
    return PairedEstimate(running_mean(plain_terms), running_mean(reduced_terms), ratio)


@dataclass
class ControlVariateResult:
    """Control-variate adjusted estimate."""

    beta: float
    estimate: float
    plain: float
    variance_ratio: float


def control_variate(d, c, c_mean: float) -> ControlVariateResult:
    """Adjust ``mean(d)`` with a control ``c`` of known mean.

    The optimal coefficient ``beta = cov(d, c) / var(c)`` is estimated from
    the sample and the estimate is ``mean(d) - beta (mean(c) - c_mean)``.
    ``variance_ratio`` is ``1 - corr(d, c)^2``.

    Raises
    ------
    DegenerateError
        If ``c`` is constant.
    """
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    if d.shape != c.shape or d.size < 2:
        raise DomainError("d and c must be equal-length samples")
    vc = float(np.var(c, ddof=1))
    if vc == 0:
        raise DegenerateError("control has zero variance")
    cov = float(np.cov(d, c, ddof=1)[0, 1])
    beta = cov / vc
    vd = float(np.var(d, ddof=1))
    ratio = 1 - cov**2 / (vd * vc) if vd > 0 else 0.0
    return ControlVariateResult(beta, float(d.mean() - beta * (c.mean() - c_mean)), float(d.mean()), ratio)


def rb_exp_negsquare(mu, sigma2, y):
    """``E[exp(-X^2) | y]`` for ``X | y ~ N(mu, sigma2 / y)``.

    Equals ``exp(-mu^2 / (1 + 2 sigma2 / y)) / sqrt(1 + 2 sigma2 / y)``.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or sigma2 <= 0:
        raise DomainError("need y > 0 and sigma2 > 0")
    k = 1.0 + 2.0 * sigma2 / y
    return np.exp(-(mu**2) / k) / np.sqrt(k)


RbModel = Literal["poisson_gamma", "normal_gamma_tsq", "beta_binomial"]


def rb_mixture_compare(
    model: RbModel,
    a: float,
    b: float,
    n_sims: int,
    replications: int,
    stream: RngStream,
    n_trials: int = 10,
) -> PairedEstimate:
    """Compare ``mean h(X)`` with its conditional-expectation version ``mean E[h(X) | Y]``.

    Models and targets
    ------------------
    poisson_gamma
        ``Y ~ Ga(a, rate b)``, ``X | Y ~ Poisson(Y)``; ``E X = a / b``.
    normal_gamma_tsq
        ``Y ~ Ga(a, rate b)``, ``X | Y ~ N(0, Y)``, ``h(x) = x^2``; ``E X^2 = a / b``.
    beta_binomial
        ``Y ~ Be(a, b)``, ``X | Y ~ Bin(n_trials, Y)``; ``E X = n_trials a / (a + b)``.

    Running estimates come from the first replication; the final estimates
    of all ``replications`` are kept in ``replicates``.
    """
    if a <= 0 or b <= 0:
        raise DomainError("a and b must be positive")
    g = stream.generator
    shape = (replications, n_sims)
    if model == "poisson_gamma":
        y = g.standard_gamma(a, shape) / b
        hx, hy = g.poisson(y).astype(float), y
    elif model == "normal_gamma_tsq":
        y = g.standard_gamma(a, shape) / b
        hx, hy = (np.sqrt(y) * g.standard_normal(shape)) ** 2, y
    elif model == "beta_binomial":
        y = g.beta(a, b, shape)
        hx, hy = g.binomial(n_trials, y).astype(float), n_trials * y
    else:
        raise ValueError(f"unknown model {model!r}")
    reps = {"plain": hx.mean(axis=1), "reduced": hy.mean(axis=1)}
    return PairedEstimate.from_runs(running_mean(hx[0]), running_mean(hy[0]), reps)


def rb_target(model: RbModel, a: float, b: float, n_trials: int = 10) -> float:
    """Exact value estimated by :func:`rb_mixture_compare`."""
    if model in ("poisson_gamma", "normal_gamma_tsq"):
        return a / b
    if model == "beta_binomial":
        return n_trials * a / (a + b)
    raise ValueError(model)


@dataclass
class CovarianceCheck:
    """Empirical covariance next to its closed form."""

    empirical: float
    analytic: float
    jackknife_se: float


def _jackknife_cov_se(u: np.ndarray, v: np.ndarray) -> float:
    n = u.size
    su, sv, suv = u.sum(), v.sum(), (u * v).sum()
    loo = (suv - u * v - (su - u) * (sv - v) / (n - 1)) / (n - 2)
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def running_mean_cov(k: int, k2: int, sigma2: float, replications: int, stream: RngStream) -> CovarianceCheck:
    """``cov(Xbar_k, Xbar_k2)`` for iid ``N(0, sigma2)`` draws, which equals ``sigma2 / max(k, k2)``."""
    if min(k, k2) < 1 or sigma2 <= 0 or replications < 3:
        raise DomainError("need k, k2 >= 1, sigma2 > 0 and at least 3 replications")
    m = max(k, k2)
    x = math.sqrt(sigma2) * stream.normal(replications * m).reshape(replications, m)
    cs = np.cumsum(x, axis=1)
    u, v = cs[:, k - 1] / k, cs[:, k2 - 1] / k2
    emp = float(np.cov(u, v, ddof=1)[0, 1])
    return CovarianceCheck(emp, sigma2 / m, _jackknife_cov_se(u, v))


@dataclass
class ThinningComparison:
    """Across-replication variances of the full and the thinned average."""

    var_full: float
    var_thinned: float


def batch_thin_compare(chains, h: Callable, k: int) -> ThinningComparison:
    """Compare averaging every state with averaging every ``k``-th state.

    ``chains`` holds independent replications of a chain, one per row (or a
    list of traces). The full average uses all ``T k`` states of a row and the
    thinned one uses states ``k, 2k, ...``.
    """
    rows = [np.asarray(getattr(c, "states", c), dtype=float).ravel() for c in chains]
    x = np.vstack(rows)
    if k < 1 or x.shape[1] % k:
        raise DomainError("chain length must be a multiple of k")
    hx = np.asarray(h(x), dtype=float)
    full = hx.mean(axis=1)
    thin = hx[:, k - 1 :: k].mean(axis=1)
    return ThinningComparison(float(np.var(full, ddof=1)), float(np.var(thin, ddof=1)))


def bootstrap_ci(
    data,
    stat: Callable,
    n_outer: int,
    stream: RngStream,
    level: float = 0.95,
    n_inner: int = 0,
    inner_reduce: Callable | None = None,
) -> tuple[float, float, np.ndarray]:
    """Percentile bootstrap interval, optionally nested.

    Each outer resample yields ``stat(resample)``. With ``n_inner > 0`` each
    outer resample is itself resampled ``n_inner`` times and
    ``inner_reduce`` (default the 95% quantile) collapses the inner values of
    ``stat`` into the outer value.

    Returns
    -------
    lower, upper, values
        Interval end points at ``level`` and the outer values.
    """
    x = np.asarray(data)
    n = x.shape[0]
    if n < 2 or not 0 < level < 1 or n_outer < 2:
        raise DomainError("need n >= 2, 0 < level < 1 and n_outer >= 2")
    g = stream.generator
    reduce = inner_reduce or (lambda v: np.quantile(v, 0.95))
    vals = np.empty(n_outer)
    for i in range(n_outer):
        star = x[g.integers(0, n, n)]
        if n_inner:
            inner = star[g.integers(0, n, (n_inner, n))]
            vals[i] = reduce(stat_rows(stat, inner))
        else:
            vals[i] = stat(star)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(vals, [alpha, 1 - alpha])
    return float(lo), float(hi), vals


def stat_rows(stat: Callable, rows: np.ndarray) -> np.ndarray:
    """Apply ``stat`` to each row; uses a vectorised ``axis`` form when ``stat`` accepts one."""
    try:
        out = np.asarray(stat(rows, axis=1))
        if out.shape == (rows.shape[0],):
            return out
    except TypeError:
        pass
    return np.array([stat(r) for r in rows])


@dataclass
class BootstrapBands:
    """Bootstrap confidence band for a running mean."""

    checkpoints: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def bootstrap_variance_bands(trace, checkpoints, stream: RngStream, batch: int = 100) -> BootstrapBands:
    """Band ``mean(x[:T]) -/+ 2 sd`` where ``sd`` comes from ``batch`` bootstrap means.

    At each checkpoint ``T`` the first ``T`` values are resampled into a
    ``T x batch`` matrix whose column means give the spread.
    """
    x = np.asarray(getattr(trace, "states", trace), dtype=float).ravel()
    cps = np.asarray(checkpoints, dtype=int)
    if np.any(cps < 2) or np.any(cps > x.size):
        raise DomainError("checkpoints must lie in [2, len(trace)]")
    g = stream.generator
    center, sd = np.empty(cps.size), np.empty(cps.size)
    for j, T in enumerate(cps):
        cols = x[g.integers(0, T, (T, batch))].mean(axis=0)
        center[j] = x[:T].mean()
        sd[j] = np.std(cols, ddof=1)
    return BootstrapBands(cps, center, center - 2 * sd, center + 2 * sd)
