"""Metropolis-Hastings, Gibbs and slice kernels.

Every sampler returns a :class:`Trace`. Random numbers for a chain are drawn
from its stream up front, in a fixed order, so a chain is a pure function of
``(seed, stream_id, arguments)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit, gammaln, log_ndtr

from .distributions import DistributionSpec, truncated_normal_sample
from .errors import ConfigurationError, DomainError, SeparationError
from .rng import RngStream


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trace:
    """Output of one chain.

    Parameters
    ----------
    states : ndarray, shape (T, d)
        Chain states, one row per iteration. Row 0 is the initial state.
    accept_flags : ndarray of bool, shape (T,) or (T, k)
        Whether each move (or each of ``k`` component moves) was accepted.
        Gibbs draws are always accepted. Row 0 is ``True``.
    log_target : ndarray, shape (T,)
        Log target at each state, NaN where the sampler does not evaluate it.
    kernel_name : str
    param_names : tuple of str
    seed, stream_id : int
        Identify the stream the chain was drawn from.
    burn_in : int
        Iterations to discard; defaults to ``T // 10``.
    extras : dict
        Sampler-specific side traces (for instance Rao-Blackwellised terms).
    """

    states: np.ndarray
    accept_flags: np.ndarray
    log_target: np.ndarray
    kernel_name: str
    param_names: tuple
    seed: int
    stream_id: int
    burn_in: int = -1
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if len(self.param_names) != s.shape[1]:
            raise DomainError("param_names must name every column of states")
        flags = np.asarray(self.accept_flags, dtype=bool)
        lt = np.asarray(self.log_target, dtype=float)
        if flags.shape[0] != s.shape[0] or lt.shape != (s.shape[0],):
            raise DomainError("accept_flags and log_target must have one entry per iteration")
        object.__setattr__(self, "states", _freeze(s))
        object.__setattr__(self, "accept_flags", _freeze(flags))
        object.__setattr__(self, "log_target", _freeze(lt))
        object.__setattr__(self, "param_names", tuple(self.param_names))
        if self.burn_in < 0:
            object.__setattr__(self, "burn_in", s.shape[0] // 10)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def acceptance_rate(self):
        """Share of accepted moves after the initial state; one value per component for component-wise kernels."""
        rate = self.accept_flags[1:].mean(axis=0)
        return float(rate) if np.ndim(rate) == 0 else rate

    def unique_rate(self) -> np.ndarray:
        """Number of distinct values per column over ``T``, the proxy used in some references."""
        return np.array([np.unique(c).size for c in self.states.T]) / self.n

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.param_names.index(name)]

    def post_burn(self, name: str | None = None) -> np.ndarray:
        s = self.states[self.burn_in :]
        return s if name is None else s[:, self.param_names.index(name)]


def _trace(states, flags, log_target, name, names, stream: RngStream, **extras) -> Trace:
    return Trace(states, flags, log_target, name, tuple(names), stream.seed, stream.stream_id, extras=extras)


# Families whose location-zero members are symmetric about 0.
_SYMMETRIC = {
    "normal": lambda p: p[0] == 0,
    "cauchy": lambda p: p[0] == 0,
    "double_exponential": lambda p: True,
    "uniform": lambda p: p[0] == -p[1],
    "truncated_normal": lambda p: p[0] == 0 and p[2] == -p[3],
}


@dataclass(frozen=True)
class ProposalKernel:
    """MH proposal ``q(y | x)``.

    ``independent`` draws ``y = scale * Z`` and ``random_walk`` draws
    ``y = x + scale * Z``, with ``Z`` from ``increment`` coordinate-wise.
    """

    kind: Literal["independent", "random_walk"]
    increment: DistributionSpec
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("independent", "random_walk"):
            raise DomainError(f"unknown proposal kind {self.kind!r}")
        if not self.scale > 0:
            raise DomainError("scale must be positive")
        if self.kind == "random_walk":
            check = _SYMMETRIC.get(self.increment.family)
            if check is None or not check(self.increment.params):
                raise DomainError("random-walk increments must be symmetric about 0")

    def log_density(self, y) -> np.ndarray:
        """Log density of an independent proposal at ``y``, summed over coordinates."""
        y = np.asarray(y, dtype=float)
        ld = self.increment.log_density(y / self.scale) - math.log(self.scale)
        return np.sum(ld, axis=-1) if ld.ndim > 1 else ld


def mh_chain(
    target_logpdf: Callable,
    proposal: ProposalKernel,
    init,
    n: int,
    stream: RngStream,
) -> Trace:
    """Metropolis-Hastings chain of length ``n`` started at ``init``.

    Scalar chains pass floats to ``target_logpdf``; vector chains pass 1-D
    arrays. Independent proposals accept with
    ``min(1, f(y) g(x) / (f(x) g(y)))``; random walks with ``min(1, f(y) / f(x))``.

    Raises
    ------
    DomainError
        If the target is not finite at ``init``.
    ConfigurationError
        If a proposal has non-finite proposal log-density.
    """
    x0 = np.atleast_1d(np.asarray(init, dtype=float))
    d = x0.size
    scalar = d == 1

    def f(x):
        return float(target_logpdf(x[0] if scalar else x))

    lf = f(x0)
    if not math.isfinite(lf):
        raise DomainError("target log-density is not finite at init")
    z = proposal.scale * np.asarray(proposal.increment.sample(stream, n * d), dtype=float).reshape(n, d)
    log_u = np.log(stream.uniform(n))
    indep = proposal.kind == "independent"
    if indep:
        lq = proposal.log_density(z if d > 1 else z[:, 0])
        if not np.all(np.isfinite(lq[1:])):
            raise ConfigurationError("proposal log-density is not finite at a proposed point")
        lq_x = float(proposal.log_density(x0 if d > 1 else x0[0]))
    states = np.empty((n, d))
    flags = np.zeros(n, dtype=bool)
    lt = np.empty(n)
    states[0], flags[0], lt[0] = x0, True, lf
    x = x0
    for t in range(1, n):
        y = z[t] if indep else x + z[t]
        ly = f(y)
        ratio = ly - lf
        if indep:
            ratio += lq_x - lq[t]
        if log_u[t] < ratio:
            x, lf = y, ly
            if indep:
                lq_x = lq[t]
            flags[t] = True
        states[t], lt[t] = x, lf
    names = ["x"] if scalar else [f"x{i + 1}" for i in range(d)]
    return _trace(states, flags, lt, f"mh_{proposal.kind}", names, stream)


def ar1_chain(rho: float, n: int, stream: RngStream) -> Trace:
    """Gaussian AR(1) chain ``x_t = rho x_{t-1} + e_t`` from ``x_0 ~ N(0, 1)``.

    Raises
    ------
    DomainError
        If ``|rho| >= 1``.
    """
    return _ar1(rho, n, 1, stream)[0]


def ar1_chains(rho: float, n: int, n_chains: int, stream: RngStream) -> list[Trace]:
    """``n_chains`` AR(1) chains drawn row by row from one stream."""
    return _ar1(rho, n, n_chains, stream)


def _ar1(rho, n, k, stream):
    if not abs(rho) < 1:
        raise DomainError("need |rho| < 1")
    e = stream.normal(k * n).reshape(k, n)
    x = lfilter([1.0], [1.0, -rho], e, axis=1)
    lt = -0.5 * x**2 * (1 - rho**2)
    return [_trace(x[i], np.ones(n, bool), lt[i], "ar1", ["x"], stream) for i in range(k)]


@dataclass
class AcceptanceCurve:
    """Acceptance rate of an MH kernel across a tuning grid."""

    family: str
    grid: np.ndarray
    rates: np.ndarray


def acceptance_scan(
    target: DistributionSpec,
    family: Literal["laplace_indep", "normal_indep", "laplace_rw"],
    grid,
    n: int,
    stream: RngStream,
) -> AcceptanceCurve:
    """Acceptance rates of three kernels for a normal target over a tuning grid.

    laplace_indep
        Independent Laplace proposals with rate ``alpha = grid[j]``.
    normal_indep
        Independent ``N(0, omega^2)`` proposals with ``omega^2 = grid[j]``.
    laplace_rw
        Random walk with Laplace steps of rate ``alpha = grid[j]``.

    One set of base draws and uniforms is shared across the grid (common
    random numbers), so the curve is smooth in the tuning parameter. The
    chain starts at a fixed uniform draw.
    """
    if target.family != "normal":
        raise DomainError("acceptance_scan needs a normal target")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise DomainError("grid values must be positive")
    start = stream.uniform()
    if family == "normal_indep":
        base = stream.normal(n)
    else:
        sign = np.where(stream.uniform(n) > 0.5, 1.0, -1.0)
        base = sign * stream.exponential(n)
    log_u = np.log(stream.uniform(n))
    rates = np.empty(grid.size)
    for j, g in enumerate(grid):
        if family == "laplace_indep":
            prop = DistributionSpec("double_exponential", (g,))
            kernel, inc = "independent", base / g
        elif family == "normal_indep":
            prop = DistributionSpec("normal", (0.0, math.sqrt(g)))
            kernel, inc = "independent", base * math.sqrt(g)
        elif family == "laplace_rw":
            prop = None
            kernel, inc = "random_walk", base / g
        else:
            raise DomainError(f"unknown family {family!r}")
        lf_inc = target.log_density(inc)
        lg_inc = prop.log_density(inc) if prop is not None else None
        x, lf, lg = start, float(target.log_density(start)), float(prop.log_density(start)) if prop else 0.0
        acc = 0
        for t in range(1, n):
            if kernel == "independent":
                y, ly = inc[t], lf_inc[t]
                r = ly - lf + lg - lg_inc[t]
            else:
                y = x + inc[t]
                ly = float(target.log_density(y))
                r = ly - lf
            if log_u[t] < r:
                x, lf = y, ly
                if kernel == "independent":
                    lg = lg_inc[t]
                acc += 1
        rates[j] = acc / (n - 1)
    return AcceptanceCurve(family, grid, rates)


@dataclass
class LogisticFit:
    """Maximum-likelihood logistic regression."""

    coef: np.ndarray
    cov_unscaled: np.ndarray
    iterations: int


def logistic_mle(X, y, tol: float = 1e-8, max_iter: int = 100) -> LogisticFit:
    """Newton iterations (IRLS) for logistic regression without an implicit intercept.

    Stops when the gradient norm drops below ``tol`` and returns the inverse
    Fisher information ``(X' W X)^{-1}``.

    Raises
    ------
    SeparationError
        If the linear predictor diverges, which happens when the classes are
        separable.
    DomainError
        If ``X`` is rank deficient.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DomainError("design matrix is rank deficient")
    beta = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ beta
        if np.max(np.abs(eta)) > 50:
            raise SeparationError("linear predictor diverges; the classes look separable")
        p = expit(eta)
        grad = X.T @ (y - p)
        info = X.T @ (X * (p * (1 - p))[:, None])
        if np.linalg.norm(grad) < tol:
            return LogisticFit(beta, np.linalg.inv(info), it)
        beta = beta + np.linalg.solve(info, grad)
    raise SeparationError("Newton iterations did not converge")


def challenger_log_posterior(a, b, temps, failures, prior_sds) -> float:
    """Logistic log likelihood plus independent normal log priors on ``(a, b)``."""
    eta = a + b * temps
    ll = np.sum(failures * eta - np.logaddexp(0.0, eta))
    sa, sb = prior_sds
    return float(ll - 0.5 * (a / sa) ** 2 - 0.5 * (b / sb) ** 2 - math.log(sa * sb) - math.log(2 * math.pi))


def challenger_mh(
    temps,
    failures,
    n: int,
    stream: RngStream,
    prior_sds: tuple[float, float] | None = None,
) -> Trace:
    """Component-wise MH for the logistic failure model.

    Each component moves by a symmetric Laplace step scaled by the square
    root of the matching diagonal entry of the MLE covariance. The chain
    starts at the MLE. Default prior sds are ``5`` and ``5 / sd(temps)``.
    ``accept_flags`` has one column per component.
    """
    x = np.asarray(temps, dtype=float)
    yv = np.asarray(failures, dtype=float)
    if not np.all(np.isin(yv, (0.0, 1.0))):
        raise DomainError("failures must be binary")
    fit = logistic_mle(np.column_stack([np.ones_like(x), x]), yv)
    sds = prior_sds or (5.0, 5.0 / float(np.std(x, ddof=1)))
    scale = np.sqrt(np.diag(fit.cov_unscaled))
    sign = np.where(stream.uniform(2 * n) < 0.5, -1.0, 1.0).reshape(n, 2)
    steps = sign * stream.exponential(2 * n).reshape(n, 2) * scale
    log_u = np.log(stream.uniform(2 * n)).reshape(n, 2)

    def lp(a, b):
        return challenger_log_posterior(a, b, x, yv, sds)

    a, b = fit.coef
    cur = lp(a, b)
    states = np.empty((n, 2))
    flags = np.zeros((n, 2), dtype=bool)
    lt = np.empty(n)
    states[0], flags[0], lt[0] = (a, b), True, cur
    for t in range(1, n):
        pa = a + steps[t, 0]
        la = lp(pa, b)
        if log_u[t, 0] < la - cur:
            a, cur, flags[t, 0] = pa, la, True
        pb = b + steps[t, 1]
        lb = lp(a, pb)
        if log_u[t, 1] < lb - cur:
            b, cur, flags[t, 1] = pb, lb, True
        states[t], lt[t] = (a, b), cur
    return _trace(states, flags, lt, "challenger_mh", ["alpha", "beta"], stream, mle=fit.coef)


def failure_probability(trace: Trace, temp: float) -> float:
    """Posterior mean of the failure probability at ``temp`` over the whole chain."""
    return float(np.mean(expit(trace.column("alpha") + trace.column("beta") * temp)))


def braking_mh(speed, distance, n: int, stream: RngStream) -> Trace:
    """Random-walk MH for the quadratic stopping-distance regression.

    Model ``d = b1 + b2 s + b3 s^2 + e``, ``e ~ N(0, sigma2)``, flat prior on
    ``(b1, b2, b3, log sigma2)``. All four coordinates move together by
    independent Gaussian steps whose sds are the least-squares standard
    errors (for ``sigma2``, ``s^2 sqrt(2 / (n - 3))``). The chain starts at
    the least-squares fit.
    """
    s = np.asarray(speed, dtype=float)
    dist = np.asarray(distance, dtype=float)
    X = np.column_stack([np.ones_like(s), s, s**2])
    m = X.shape[0]
    coef, rss, *_ = np.linalg.lstsq(X, dist, rcond=None)
    s2 = float(rss[0]) / (m - 3)
    se = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    scale = np.append(se, s2 * math.sqrt(2.0 / (m - 3)))

    def lp(th):
        if th[3] <= 0:
            return -math.inf
        r = dist - X @ th[:3]
        return float(-0.5 * m * math.log(th[3]) - 0.5 * (r @ r) / th[3] - math.log(th[3]))

    steps = stream.normal(4 * n).reshape(n, 4) * scale
    log_u = np.log(stream.uniform(n))
    th = np.append(coef, s2)
    cur = lp(th)
    states = np.empty((n, 4))
    flags = np.zeros(n, dtype=bool)
    lt = np.empty(n)
    states[0], flags[0], lt[0] = th, True, cur
    for t in range(1, n):
        prop = th + steps[t]
        lprop = lp(prop)
        if log_u[t] < lprop - cur:
            th, cur, flags[t] = prop, lprop, True
        states[t], lt[t] = th, cur
    return _trace(states, flags, lt, "braking_mh", ["b1", "b2", "b3", "sigma2"], stream, ls_coef=coef, ls_sigma2=s2)


def credible_interval(trace: Trace, name: str, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval from the post-burn-in draws of one parameter."""
    a = (1 - level) / 2
    lo, hi = np.quantile(trace.post_burn(name), [a, 1 - a])
    return float(lo), float(hi)


def gibbs_bivariate_normal(
    rho: float,
    n: int,
    stream: RngStream,
    sigma_x: float = 1.0,
    sigma_y: float = 1.0,
    init: tuple[float, float] = (0.0, 0.0),
) -> Trace:
    """Two-stage Gibbs sampler for a bivariate normal with correlation ``rho``.

    Draws ``Y | x ~ N(rho sy/sx x, sy^2 (1 - rho^2))`` and then
    ``X | y ~ N(rho sx/sy y, sx^2 (1 - rho^2))``.
    """
    if not abs(rho) < 1 or sigma_x <= 0 or sigma_y <= 0:
        raise DomainError("need |rho| < 1 and positive sds")
    z = stream.normal(2 * n).reshape(n, 2)
    c = math.sqrt(1 - rho**2)
    states = np.empty((n, 2))
    x, y = init
    states[0] = init
    for t in range(1, n):
        y = rho * sigma_y / sigma_x * x + sigma_y * c * z[t, 1]
        x = rho * sigma_x / sigma_y * y + sigma_x * c * z[t, 0]
        states[t] = x, y
    return _trace(states, np.ones(n, bool), np.full(n, np.nan), "gibbs_bivariate_normal", ["X", "Y"], stream)


def _equi_params(p: int, r: float) -> tuple[float, float]:
    k = 1 + (p - 2) * r
    return (p - 1) * r / k, math.sqrt((k - (p - 1) * r**2) / k)


def gibbs_equicorrelated(
    p: int,
    r: float,
    n: int,
    stream: RngStream,
    constrained: bool = False,
    m: int = 1,
) -> Trace:
    """Gibbs sampler for ``N_p(0, (1 - r) I + r J)``.

    Each coordinate is drawn from ``N(c mbar, s^2)`` with ``mbar`` the mean of
    the other coordinates. In constrained mode a draw is kept only when it
    preserves ``sum_{i<=m} x_i^2 < sum_{i>m} x_i^2``; otherwise the coordinate
    keeps its value. The constrained chain starts with the first ``m``
    coordinates at zero so that the start satisfies the constraint.
    ``accept_flags`` has one column per coordinate.
    """
    if p < 2 or not -1 / (p - 1) < r < 1:
        raise DomainError("need p >= 2 and -1/(p-1) < r < 1")
    if constrained and not 1 <= m < p:
        raise DomainError("need 1 <= m < p")
    c, sd = _equi_params(p, r)
    cur = stream.normal(p)
    if constrained:
        cur[:m] = 0.0
    z = stream.normal(n * p).reshape(n, p)
    states = np.empty((n, p))
    flags = np.ones((n, p), dtype=bool)
    states[0] = cur
    total = cur.sum()
    for t in range(1, n):
        for j in range(p):
            prop = c * (total - cur[j]) / (p - 1) + sd * z[t, j]
            if constrained:
                sq = cur**2
                sq[j] = prop**2
                if not sq[:m].sum() < sq[m:].sum():
                    flags[t, j] = False
                    continue
            total += prop - cur[j]
            cur[j] = prop
        states[t] = cur
    name = "gibbs_equicorrelated_constrained" if constrained else "gibbs_equicorrelated"
    return _trace(states, flags, np.full(n, np.nan), name, [f"x{i + 1}" for i in range(p)], stream)


def equicorrelated_direct(p: int, r: float, n: int, stream: RngStream) -> np.ndarray:
    """Exact draws from ``N_p(0, (1 - r) I + r J)`` by Cholesky factorisation."""
    cov = (1 - r) * np.eye(p) + r * np.ones((p, p))
    return stream.normal(n * p).reshape(n, p) @ np.linalg.cholesky(cov).T


def gibbs_censored_normal(y, n_total: int, a: float, n: int, stream: RngStream) -> Trace:
    """Gibbs sampler for a ``N(theta, 1)`` sample right-censored at ``a``.

    Alternates the completion of the ``n_total - m`` censored units from
    ``N(theta, 1)`` truncated to ``[a, inf)`` and
    ``theta ~ N((m ybar + (n_total - m) zbar) / n_total, 1 / n_total)``.
    ``extras`` holds the Rao-Blackwellised terms ``rb`` (the conditional
    mean of ``theta``) and the smallest completed value ``z_min`` at each
    iteration. The chain starts at ``theta = ybar``.
    """
    y = np.asarray(y, dtype=float)
    mobs = y.size
    k = n_total - mobs
    if k < 1:
        raise DomainError("n_total must exceed the number of observed values")
    ybar = float(y.mean())
    eps = stream.normal(n)
    theta = np.empty(n)
    zbar = np.full(n, a)
    rb = np.full(n, np.nan)
    zmin = np.full(n, np.nan)
    theta[0] = ybar
    for t in range(1, n):
        z = truncated_normal_sample(theta[t - 1], 1.0, a, math.inf, stream, k)
        zbar[t] = z.mean()
        zmin[t] = z.min()
        rb[t] = (mobs * ybar + k * zbar[t]) / n_total
        theta[t] = rb[t] + eps[t] / math.sqrt(n_total)
    return _trace(
        np.column_stack([theta, zbar]), np.ones(n, bool), np.full(n, np.nan),
        "gibbs_censored_normal", ["theta", "zbar"], stream, rb=rb, z_min=zmin,
    )


def gibbs_blood_groups(counts: Sequence[int], n: int, stream: RngStream, init=(0.25, 0.05)) -> Trace:
    """Gibbs sampler for ABO allele frequencies under Hardy-Weinberg equilibrium.

    ``counts`` is ``(n_A, n_B, n_AB, n_O)``. Completes the homozygous counts
    ``Z_A, Z_B`` by binomial draws and then draws ``(p_A, p_B, p_O)`` from
    ``Dir(n_A + n_AB + Z_A + 1, n_B + n_AB + Z_B + 1, n_A - Z_A + n_B - Z_B + 2 n_O + 1)``.
    """
    nA, nB, nAB, nO = (int(c) for c in counts)
    if min(nA, nB, nAB, nO) < 0:
        raise DomainError("counts must be non-negative")
    g = stream.generator
    states = np.empty((n, 3))
    pA, pB = init
    states[0] = pA, pB, 1 - pA - pB
    for t in range(1, n):
        pO = 1 - pA - pB
        zA = g.binomial(nA, pA**2 / (pA**2 + 2 * pA * pO))
        zB = g.binomial(nB, pB**2 / (pB**2 + 2 * pB * pO))
        w = g.standard_gamma([nA + nAB + zA + 1, nB + nAB + zB + 1, nA - zA + nB - zB + 2 * nO + 1])
        w /= w.sum()
        pA, pB = w[0], w[1]
        states[t] = w
    return _trace(states, np.ones(n, bool), np.full(n, np.nan), "gibbs_blood_groups", ["pA", "pB", "pO"], stream)


def blood_groups_loglik(pA, pB, counts) -> np.ndarray:
    """Observed-data log likelihood of the ABO counts."""
    nA, nB, nAB, nO = counts
    pA, pB = np.asarray(pA, float), np.asarray(pB, float)
    pO = 1 - pA - pB
    with np.errstate(invalid="ignore", divide="ignore"):
        return (
            nA * np.log(pA**2 + 2 * pA * pO) + nB * np.log(pB**2 + 2 * pB * pO)
            + nAB * np.log(pA * pB) + 2 * nO * np.log(pO)
        )


# Upper quantile level at which the truncated Poisson table is cut.
POISSON_TABLE_TAIL = 1e-9


def truncated_poisson_table(lam: float, lower: int) -> tuple[np.ndarray, np.ndarray]:
    """Support and cumulative probabilities of ``Poisson(lam)`` conditioned on ``X >= lower``.

    The table stops at the first value whose conditional cdf reaches
    ``1 - 1e-9``.
    """
    if not lam > 0:
        raise DomainError("lam must be positive")
    width = int(lam + 40 * math.sqrt(lam) + 40)
    k = np.arange(lower, lower + width)
    logp = k * math.log(lam) - lam - gammaln(k + 1)
    p = np.exp(logp - logp.max())
    cp = np.cumsum(p / p.sum())
    top = int(np.searchsorted(cp, 1 - POISSON_TABLE_TAIL, side="left"))
    k, cp = k[: top + 1], cp[: top + 1]
    return k, cp / cp[-1]


def gibbs_truncated_poisson(
    sum_uncensored: int,
    n_obs: int,
    n_censored: int,
    n: int,
    stream: RngStream,
    lower: int = 4,
) -> Trace:
    """Gibbs sampler for a Poisson sample with ``n_censored`` values only known to be ``>= lower``.

    Completes the censored values by table inversion and draws
    ``lambda ~ Ga(sum_uncensored + sum z, rate n_obs)``. The ``rb`` column
    holds ``(sum_uncensored + sum z) / n_obs``. Both start at
    ``sum_uncensored / n_obs``.
    """
    if n_obs <= 0 or n_censored < 0 or sum_uncensored < 0:
        raise DomainError("counts must be non-negative and n_obs positive")
    g = stream.generator
    lam = np.full(n, sum_uncensored / n_obs)
    rb = lam.copy()
    zmin = np.full(n, np.nan)
    for t in range(1, n):
        k, cp = truncated_poisson_table(lam[t - 1], lower)
        u = stream.uniform(n_censored)
        z = k[np.minimum(np.searchsorted(cp, u, side="left"), k.size - 1)]
        zmin[t] = z.min() if z.size else np.nan
        rb[t] = (sum_uncensored + z.sum()) / n_obs
        lam[t] = g.standard_gamma(n_obs * rb[t]) / n_obs
    return _trace(
        np.column_stack([lam, rb]), np.ones(n, bool), np.full(n, np.nan),
        "gibbs_truncated_poisson", ["lambda", "rb"], stream, z_min=zmin,
    )


def gibbs_truncexp_pair(B: float | None, n: int, stream: RngStream) -> Trace:
    """Gibbs sampler on ``f(x, y) ∝ exp(-x y)``, on ``(0, B)^2`` or, with ``B=None``, on the whole quadrant.

    Each conditional is an exponential with rate equal to the other
    coordinate, truncated to ``(0, B)`` when ``B`` is given:
    ``x = -log(1 - u (1 - exp(-B y))) / y``. Without ``B`` the joint is not
    integrable and the chain has no stationary law. Starts from two
    ``Exp(1)`` draws.
    """
    if B is not None and not B > 0:
        raise DomainError("B must be positive")
    start = stream.exponential(2)
    u = stream.uniform(2 * n).reshape(n, 2)
    states = np.empty((n, 2))
    x, y = start
    states[0] = start
    for t in range(1, n):
        if B is None:
            x = -math.log(u[t, 0]) / y
            y = -math.log(u[t, 1]) / x
        else:
            x = -math.log1p(u[t, 0] * math.expm1(-B * y)) / y
            y = -math.log1p(u[t, 1] * math.expm1(-B * x)) / x
        states[t] = x, y
    name = "gibbs_truncexp_pair" if B is not None else "gibbs_improper_pair"
    return _trace(states, np.ones(n, bool), np.full(n, np.nan), name, ["X", "Y"], stream)


def truncexp_marginal(x, B: float) -> np.ndarray:
    """Unnormalised marginal ``(1 - exp(-B x)) / x`` of either coordinate on ``(0, B)``."""
    x = np.asarray(x, dtype=float)
    return -np.expm1(-B * x) / x


def slice_expsqrt(n: int, stream: RngStream) -> Trace:
    """Slice sampler for ``f(x) = exp(-sqrt(x)) / 2`` on ``x > 0``.

    Alternates ``U | x ~ U(0, f(x))`` and ``X | u ~ U(0, log(2u)^2)``. Row
    ``t`` holds the pair ``(X_t, U_t)``; the first ``X`` is uniform on
    ``(0, 1)``.
    """
    v = stream.uniform(2 * n).reshape(n, 2)
    x = np.empty(n)
    u = np.empty(n)
    x[0] = v[0, 0]
    u[0] = v[0, 1] * 0.5 * math.exp(-math.sqrt(x[0]))
    for t in range(1, n):
        u[t] = v[t, 1] * 0.5 * math.exp(-math.sqrt(x[t - 1]))
        x[t] = v[t, 0] * math.log(2 * u[t]) ** 2
    return _trace(np.column_stack([x, u]), np.ones(n, bool), np.log(0.5) - np.sqrt(x), "slice_expsqrt", ["X", "U"], stream)


def expsqrt_direct(n: int, stream: RngStream) -> np.ndarray:
    """Independent draws from ``exp(-sqrt(x)) / 2`` as ``Y^2`` with ``Y ~ Ga(2, 1)``."""
    return (stream.exponential(n) + stream.exponential(n)) ** 2


BASEBALL_SIGMA2 = 0.00434


def gibbs_baseball(y, n: int, stream: RngStream, sigma2: float = BASEBALL_SIGMA2) -> Trace:
    """Gibbs sampler for the normal hierarchy ``y_i ~ N(theta_i, sigma2)``, ``theta_i ~ N(mu, alpha)``.

    Priors ``mu ~ N(0, 1)`` and ``alpha ~ IG(2, 2)``. Conditionals:

    - ``theta_i ~ N((mu/alpha + y_i/sigma2) / (1/alpha + 1/sigma2), 1 / (1/alpha + 1/sigma2))``
    - ``mu ~ N(sum theta / (alpha + k), 1 / (1 + k/alpha))``
    - ``alpha ~ IG(2 + k/2, 2 + sum (theta_i - mu)^2 / 2)``

    with ``k = len(y)``. Starts from ``theta ~ N(0, 1)``, ``mu ~ N(0, 1)``,
    ``alpha ~ Exp(1)``.
    """
    y = np.asarray(y, dtype=float)
    k = y.size
    g = stream.generator
    theta = stream.normal(k)
    mu = stream.normal()
    alpha = stream.exponential()
    zt = stream.normal(n * k).reshape(n, k)
    zm = stream.normal(n)
    ga = g.standard_gamma(2 + k / 2, n)
    states = np.empty((n, k + 2))
    states[0, :k], states[0, k], states[0, k + 1] = theta, mu, alpha
    prec_y = 1 / sigma2
    for t in range(1, n):
        prec = 1 / alpha + prec_y
        theta = (mu / alpha + prec_y * y) / prec + zt[t] / math.sqrt(prec)
        mu = theta.sum() / (alpha + k) + zm[t] / math.sqrt(1 + k / alpha)
        alpha = (2 + 0.5 * np.sum((theta - mu) ** 2)) / ga[t]
        states[t, :k], states[t, k], states[t, k + 1] = theta, mu, alpha
    names = [f"theta{i + 1}" for i in range(k)] + ["mu", "alpha"]
    return _trace(states, np.ones(n, bool), np.full(n, np.nan), "gibbs_baseball", names, stream)


def baseball_alpha_logpdf(alpha, y, sigma2: float = BASEBALL_SIGMA2) -> np.ndarray:
    """Unnormalised log posterior of ``alpha`` with ``theta`` and ``mu`` integrated out.

    Marginally ``y ~ N(0, (alpha + sigma2) I + J)``; with ``v = alpha + sigma2``
    and ``k = len(y)`` this gives
    ``-3 log alpha - 2/alpha - (k-1)/2 log v - log(v + k)/2 - S/(2v) + T^2 / (2 v (v + k))``
    where ``S = sum y^2`` and ``T = sum y``.
    """
    a = np.asarray(alpha, dtype=float)
    y = np.asarray(y, dtype=float)
    k = y.size
    v = a + sigma2
    S, T = float(y @ y), float(y.sum())
    return (
        -3 * np.log(a) - 2 / a - 0.5 * (k - 1) * np.log(v) - 0.5 * np.log(v + k)
        - S / (2 * v) + T**2 / (2 * v * (v + k))
    )


def beta_kernel_chain(alpha: float, variant: Literal["bernoulli_move", "ratio_move"], n: int, stream: RngStream) -> Trace:
    """Chains with stationary law ``Be(alpha, 1)`` driven by ``Be(alpha + 1, 1)`` candidates.

    ``bernoulli_move`` moves to the candidate ``y`` with probability ``x``;
    ``ratio_move`` with probability ``min(1, x / y)``. Starts from a uniform draw.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if variant not in ("bernoulli_move", "ratio_move"):
        raise DomainError(f"unknown variant {variant!r}")
    x0 = stream.uniform()
    y = stream.uniform(n) ** (1 / (alpha + 1))
    u = stream.uniform(n)
    x = np.empty(n)
    flags = np.zeros(n, dtype=bool)
    x[0], flags[0] = x0, True
    cur = x0
    ratio = variant == "ratio_move"
    for t in range(1, n):
        if u[t] < (cur / y[t] if ratio else cur):
            cur = y[t]
            flags[t] = True
        x[t] = cur
    lt = math.log(alpha) + (alpha - 1) * np.log(x)
    return _trace(x, flags, lt, f"beta_{variant}", ["x"], stream)


def beta_kernel_density(alpha: float, variant: str, x, y) -> np.ndarray:
    """Density of the move ``x -> y`` for ``y != x`` (the continuous part of the kernel)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    q = (alpha + 1) * y**alpha
    accept = np.minimum(1.0, x / y) if variant == "ratio_move" else x
    return accept * q


@dataclass
class PimaData:
    """Pedigree covariate and binary diabetes indicator."""

    ped: np.ndarray
    diabetic: np.ndarray


def pima_log_posterior(beta: float, sigma2: float, data: PimaData) -> float:
    """Log posterior of the scaled probit model with ``N(0, 25)`` on ``beta`` and ``Ga(2, 1)`` on ``1/sigma2``.

    ``P(d = 1) = Phi(r beta / sigma2)``. The prior term is the gamma density
    of the precision ``1/sigma2``; the ``sigma2`` move in
    :func:`pima_probit_mh` supplies the change of variable.
    """
    if sigma2 <= 0:
        return -math.inf
    eta = data.ped * beta / sigma2
    d = data.diabetic
    ll = float(np.sum(log_ndtr(np.where(d == 1, eta, -eta))))
    prec = 1 / sigma2
    return ll - beta**2 / 50 + math.log(prec) - prec


def pima_probit_mh(data: PimaData, n: int, n_chains: int, stream: RngStream) -> list[Trace]:
    """Alternating MH on ``beta`` and ``log sigma2``, one chain per stream id.

    ``beta`` moves by ``N(0, sigma2 v)`` steps, ``v`` the unscaled variance of
    the logistic fit of ``d`` on ``r`` without intercept. ``sigma2`` moves by
    a log-normal random walk accepted with ratio
    ``sigma2_old pi(beta, sigma2') / (sigma2' pi(beta, sigma2_old))``.
    Each chain starts at the logistic estimate with ``sigma2 = 1 / U``.
    Chain ``c`` draws from ``stream.spawn(stream.stream_id + c)``.
    """
    fit = logistic_mle(data.ped, data.diabetic)
    v = float(fit.cov_unscaled[0, 0])
    out = []
    for c in range(n_chains):
        s = stream.spawn(stream.stream_id + c)
        sig = 1 / s.uniform()
        z = s.normal(2 * n).reshape(n, 2)
        lu = np.log(s.uniform(2 * n)).reshape(n, 2)
        b = float(fit.coef[0])
        cur = pima_log_posterior(b, sig, data)
        states = np.empty((n, 2))
        flags = np.zeros((n, 2), dtype=bool)
        lt = np.empty(n)
        states[0], flags[0], lt[0] = (b, sig), True, cur
        for t in range(1, n):
            pb = b + z[t, 0] * math.sqrt(sig * v)
            lp = pima_log_posterior(pb, sig, data)
            if lu[t, 0] < lp - cur:
                b, cur, flags[t, 0] = pb, lp, True
            ps = sig * math.exp(z[t, 1])
            lp = pima_log_posterior(b, ps, data)
            if lu[t, 1] < lp - cur + math.log(sig / ps):
                sig, cur, flags[t, 1] = ps, lp, True
            states[t], lt[t] = (b, sig), cur
        out.append(_trace(states, flags, lt, "pima_probit_mh", ["beta", "sigma2"], s))
    return out


def log_scale_rw(precision_logpdf: Callable[[float], float], init: float, n: int, stream: RngStream, step: float = 1.0) -> Trace:
    """Random walk on ``log x`` accepted with the ``x_old / x_new`` factor.

    This is the ``sigma2`` move of :func:`pima_probit_mh`. With that factor the
    chain on ``x`` is the image of a chain whose stationary law has density
    ``precision_logpdf`` for the precision ``1 / x``, evaluated at ``1/x``.
    For instance a ``Ga(a, b)`` precision density yields ``x ~ IG(a, b)``.
    ``precision_logpdf`` receives ``x``.
    """
    z = stream.normal(n) * step
    lu = np.log(stream.uniform(n))
    x = float(init)
    cur = precision_logpdf(x)
    out = np.empty(n)
    flags = np.zeros(n, dtype=bool)
    lt = np.empty(n)
    out[0], flags[0], lt[0] = x, True, cur
    for t in range(1, n):
        y = x * math.exp(z[t])
        ly = precision_logpdf(y)
        if lu[t] < ly - cur + math.log(x / y):
            x, cur, flags[t] = y, ly, True
        out[t], lt[t] = x, cur
    return _trace(out, flags, lt, "log_scale_rw", ["x"], stream)
