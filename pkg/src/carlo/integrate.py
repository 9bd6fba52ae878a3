"""Monte Carlo integration: running estimates, importance sampling and evidence estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import multivariate_t

from .distributions import DistributionSpec, normal_cdf_quantile
from .errors import DegenerateError, DomainError, OverlapError, PoisonedEstimateError
from .rng import RngStream

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class RunningEstimate:
    """Cumulative means and their standard-error track.

    Attributes
    ----------
    n : int
    means : ndarray
        ``means[t-1]`` is the estimate after ``t`` draws.
    ses : ndarray
        Matching standard errors.
    """

    n: int
    means: np.ndarray
    ses: np.ndarray

    @property
    def estimate(self) -> float:
        return float(self.means[-1])

    @property
    def se(self) -> float:
        return float(self.ses[-1])

    def band(self, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise ``means -/+ k ses``."""
        return self.means - k * self.ses, self.means + k * self.ses


def running_mean(values) -> RunningEstimate:
    """Running average with its cumulative standard-error band.

    The error after ``t`` draws is ``sqrt(sum_{i<=t} (x_i - m_i)^2) / t`` where
    ``m_i`` is the running mean at step ``i``: deviations are taken against
    the estimate current at each step and the sum is divided by ``t``.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("need at least one value")
    t = np.arange(1, x.size + 1)
    means = np.cumsum(x) / t
    ses = np.sqrt(np.cumsum((x - means) ** 2)) / t
    return RunningEstimate(x.size, means, ses)


@dataclass
class WeightedSample:
    """Points with log importance weights."""

    points: np.ndarray
    log_weights: np.ndarray
    normalized: bool = False

    def weights(self) -> np.ndarray:
        """Self-normalised weights summing to one."""
        lw = np.asarray(self.log_weights, dtype=float)
        return np.exp(lw - logsumexp(lw))

    def normalize(self) -> "WeightedSample":
        lw = np.asarray(self.log_weights, dtype=float)
        return WeightedSample(self.points, lw - logsumexp(lw), True)

    @property
    def ess(self) -> float:
        return ess_weights(self.weights())


def ess_weights(weights) -> float:
    """Effective sample size ``1 / sum(wbar^2)`` of nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateError("weights sum to zero")
    wb = w / total
    return float(1.0 / np.sum(wb**2))


def _check_finite(points, log_w):
    bad = ~np.isfinite(log_w) & ~(np.isneginf(log_w))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise PoisonedEstimateError(f"non-finite weight at point {points[i]!r}")


def self_normalized_running(values, log_weights) -> RunningEstimate:
    """Running ``sum(w h) / sum(w)`` with a delta-method error track."""
    h = np.asarray(values, dtype=float)
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    sw = np.cumsum(w)
    means = np.cumsum(w * h) / sw
    # sum w^2 (h - m)^2 expanded so every prefix is O(1).
    s2 = np.cumsum(w**2 * h**2) - 2 * means * np.cumsum(w**2 * h) + means**2 * np.cumsum(w**2)
    ses = np.sqrt(np.maximum(s2, 0.0)) / sw
    return RunningEstimate(h.size, means, ses)


def is_estimate(
    target_logpdf: Callable,
    proposal: DistributionSpec,
    h: Callable,
    n: int,
    stream: RngStream,
    self_normalized: bool = False,
) -> tuple[RunningEstimate, WeightedSample]:
    """Importance-sampling estimate of ``E_f[h(X)]`` with draws from ``proposal``.

    With ``self_normalized`` the target may be unnormalised and the estimate is
    ``sum(w h) / sum(w)``; otherwise it is the running mean of ``w h``.

    Raises
    ------
    PoisonedEstimateError
        If any weight is NaN or infinite.
    """
    y = proposal.sample(stream, n)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        lw = np.asarray(target_logpdf(y), dtype=float) - proposal.log_density(y)
    _check_finite(y, lw)
    hv = np.asarray(h(y), dtype=float)
    ws = WeightedSample(y, lw)
    if self_normalized:
        return self_normalized_running(hv, lw), ws
    return running_mean(hv * np.exp(lw)), ws


def indicator_variance_track(values, weights) -> np.ndarray:
    """Running ``sum_{i<=t} (1 - m_i)^2 w_i / i^2`` for an indicator target.

    ``m_i`` is the running mean of ``values``.
    """
    x = np.asarray(values, dtype=float)
    t = np.arange(1, x.size + 1)
    m = np.cumsum(x) / t
    return np.cumsum((1 - m) ** 2 * np.asarray(weights, dtype=float) / t**2)


TailKind = Literal["normal", "normal_uniform", "chisq3", "t5"]


def _log_h_inverse(u):
    # Integrand of P(Z > a) after x = 1/u.
    return -0.5 / u**2 - _LOG_SQRT_2PI - 2.0 * np.log(u)


def tail_probability_shifted(
    kind: TailKind, threshold: float, n: int, stream: RngStream
) -> tuple[RunningEstimate, WeightedSample]:
    """Small tail probabilities by importance sampling from a shifted proposal.

    Kinds
    -----
    normal
        ``P(Z > a)`` with ``X = a + Exp(1)`` and weight ``phi(X) e^{X - a}``.
    normal_uniform
        ``P(Z > a)`` via ``x = 1/u`` with ``u ~ U(0, 1/a)``.
    chisq3
        ``P(chi2_3 > a)`` with ``Y = a/2 + Exp(1)`` and weight
        ``e^{-a/2} sqrt(Y) / Gamma(3/2)``.
    t5
        ``P(T_5 > a)`` with ``X = a + Exp(1)``. The weights have infinite
        variance, which :func:`divergence_flag` is meant to catch.

    Returns
    -------
    RunningEstimate, WeightedSample
        The running estimate and the draws with their log weights.
    """
    if threshold <= 0:
        raise DomainError("threshold must be positive")
    a = float(threshold)
    e = stream.exponential(n)
    if kind == "normal":
        x = a + e
        lw = -0.5 * x * x - _LOG_SQRT_2PI + e
    elif kind == "normal_uniform":
        u = stream.uniform(n) / a
        x = 1.0 / u
        lw = _log_h_inverse(u) - math.log(a)
    elif kind == "chisq3":
        x = a / 2 + e
        lw = -a / 2 + 0.5 * np.log(x) - gammaln(1.5)
    elif kind == "t5":
        x = a + e
        lconst = gammaln(3.0) - 0.5 * math.log(5 * math.pi) - gammaln(2.5)
        lw = lconst - 3.0 * np.log1p(x * x / 5) + e
    else:
        raise ValueError(f"unknown kind {kind!r}")
    _check_finite(x, lw)
    return running_mean(np.exp(lw)), WeightedSample(x, lw)


def tail_probability_exact(kind: TailKind, threshold: float) -> float:
    """Closed-form value of the tail probability targeted by each kind."""
    from scipy import stats

    if kind in ("normal", "normal_uniform"):
        return normal_cdf_quantile(-threshold)
    if kind == "chisq3":
        return float(stats.chi2.sf(threshold, 3))
    if kind == "t5":
        return float(stats.t.sf(threshold, 5))
    raise ValueError(kind)


@dataclass
class DivergenceReport:
    """Evidence behind an infinite-variance flag."""

    flag: bool
    max_normalized_weight: float
    variance_growth: float
    tail_index: float


# Thresholds for declaring importance weights unstable.
MAX_WEIGHT_SHARE = 0.05
VARIANCE_GROWTH = 0.5


def divergence_flag(sample: WeightedSample) -> DivergenceReport:
    """Flag weight sequences that look infinite-variance.

    Fires when one normalised weight carries more than 5% of the total mass,
    or when the running variance of the weights grows by more than 50% over
    the last tenth of the sample.

    The Hill estimate of the weight tail index (top ``sqrt(n)`` order
    statistics) is reported alongside but does not enter the flag; values
    below 2 point to infinite variance when the weights are unbounded.
    """
    lw = np.asarray(sample.log_weights, dtype=float)
    wn = np.exp(lw - logsumexp(lw))
    top = float(wn.max())
    w = np.exp(lw - lw.max())
    n = w.size
    cut = max(2, int(0.9 * n))
    v_early = float(np.var(w[:cut]))
    v_late = float(np.var(w))
    growth = (v_late / v_early - 1.0) if v_early > 0 else 0.0
    k = max(2, int(math.sqrt(n)))
    srt = np.sort(lw)[::-1]
    excess = float(np.mean(srt[:k] - srt[min(k, n - 1)])) if n > 2 else 0.0
    tail = 1.0 / excess if excess > 0 else math.inf
    return DivergenceReport(top > MAX_WEIGHT_SHARE or growth > VARIANCE_GROWTH, top, growth, tail)


@dataclass
class RatioEstimate:
    """Ratio of two running means tracked with its parts."""

    ratio: RunningEstimate
    numerator: RunningEstimate
    denominator: RunningEstimate
    num_terms: np.ndarray
    den_terms: np.ndarray

    def required_size(self, digits: int = 3) -> int:
        """Draws needed for ``digits`` accuracy on both numerator and denominator."""
        sd = max(float(np.std(self.num_terms, ddof=1)), float(np.std(self.den_terms, ddof=1)))
        return required_sample_size(sd, digits=digits)


def posterior_ratio(
    x: float,
    sampler: Literal["cauchy_prior_normal_lik", "normal_prior_cauchy_lik"],
    n: int,
    stream: RngStream,
) -> RatioEstimate:
    """Posterior mean of ``theta`` under a Cauchy prior and ``N(theta, 1)`` likelihood.

    ``delta(x) = int theta pi(theta) phi(x - theta) / int pi(theta) phi(x - theta)``
    is estimated by drawing from one factor and weighting by the other:
    ``cauchy_prior_normal_lik`` draws ``theta`` from the Cauchy prior,
    ``normal_prior_cauchy_lik`` draws ``theta ~ N(x, 1)`` and weights by the
    Cauchy density.
    """
    if sampler == "cauchy_prior_normal_lik":
        th = np.tan(np.pi * (stream.uniform(n) - 0.5))
        w = np.exp(-0.5 * (x - th) ** 2 - _LOG_SQRT_2PI)
    elif sampler == "normal_prior_cauchy_lik":
        th = x + stream.normal(n)
        w = 1.0 / (np.pi * (1 + th * th))
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    num = running_mean(th * w)
    den = running_mean(w)
    t = np.arange(1, n + 1)
    ratio = np.divide(num.means, den.means, out=np.zeros(n), where=den.means > 0)
    # Delta-method error of the ratio of means.
    resid = th * w - ratio * w
    ses = np.sqrt(np.cumsum(resid**2)) / t / np.where(den.means > 0, den.means, np.inf)
    return RatioEstimate(RunningEstimate(n, ratio, ses), num, den, th * w, w)


def required_sample_size(sigma_hat: float, digits: int | None = None, tolerance: float | None = None) -> int:
    """Smallest ``n`` with ``2 sigma_hat / sqrt(n) <= tolerance``.

    ``tolerance`` defaults to ``10**-digits``.
    """
    if sigma_hat < 0:
        raise DomainError("sigma_hat must be nonnegative")
    if (digits is None) == (tolerance is None):
        raise DomainError("give exactly one of digits or tolerance")
    if digits is not None:
        need = 4 * sigma_hat**2 * 10 ** (2 * int(digits)) if digits >= 0 else 4 * sigma_hat**2 / 10 ** (-2 * int(digits))
    else:
        if tolerance <= 0:
            raise DomainError("tolerance must be positive")
        need = 4 * sigma_hat**2 / tolerance**2
    return max(1, math.ceil(need - 1e-9 * need))


def marginal_from_joint(x_star, x, y, log_w: Callable, joint_logpdf: Callable):
    """Estimate the marginal ``f_X(x_star)`` from joint draws ``(x_i, y_i)``.

    ``f_X(x*) ~ mean( f(x*, y_i) w(x_i) / f(x_i, y_i) )`` for any density ``w``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    base = np.asarray(log_w(x)) - np.asarray(joint_logpdf(x, y))
    out = np.array([np.mean(np.exp(np.asarray(joint_logpdf(np.full_like(x, v), y)) + base)) for v in xs])
    return float(out[0]) if np.ndim(x_star) == 0 else out


def harmonic_mean_evidence(loglik_values, logprior_values, log_tau_values) -> float:
    """Evidence ``m(x)`` from posterior draws via ``1 / mean(tau / (L pi))``.

    ``tau`` is any density; taking it equal to the posterior makes the
    estimator exact.
    """
    r = np.asarray(log_tau_values) - np.asarray(loglik_values) - np.asarray(logprior_values)
    return float(math.exp(-(logsumexp(r) - math.log(r.size))))


def prior_sampling_evidence(loglik_values) -> float:
    """Evidence as the average likelihood over prior draws."""
    ll = np.asarray(loglik_values, dtype=float)
    return float(math.exp(logsumexp(ll) - math.log(ll.size)))


def bridge_ratio(
    log_tilde1: Callable,
    log_tilde2: Callable,
    draws1,
    draws2,
    log_alpha: Callable | None = None,
) -> float:
    """Bridge estimate of ``c1 / c2`` for unnormalised densities ``pi~_1``, ``pi~_2``.

    ``mean_{x ~ pi_2}[pi~_1 alpha] / mean_{x ~ pi_1}[pi~_2 alpha]``, computed
    in logs. ``log_alpha`` defaults to zero (``alpha = 1``).

    Raises
    ------
    OverlapError
        If either cross-evaluation has no mass.
    """
    d1 = np.asarray(draws1)
    d2 = np.asarray(draws2)
    la = log_alpha or (lambda z: np.zeros(np.shape(z)[0] if np.ndim(z) else 1))
    with np.errstate(divide="ignore"):
        top = np.asarray(log_tilde1(d2)) + np.asarray(la(d2))
        bot = np.asarray(log_tilde2(d1)) + np.asarray(la(d1))
    if not (np.any(np.isfinite(top)) and np.any(np.isfinite(bot))):
        raise OverlapError("samples share no support")
    lnum = logsumexp(top) - math.log(d2.shape[0])
    lden = logsumexp(bot) - math.log(d1.shape[0])
    return float(math.exp(lnum - lden))


def reciprocal_alpha(log_tilde1: Callable, log_tilde2: Callable) -> Callable:
    """``alpha = 1 / (pi~_1 pi~_2)``; sensible only on a bounded common support."""
    return lambda z: -(np.asarray(log_tilde1(z)) + np.asarray(log_tilde2(z)))


def direct_ratio(log_tilde1: Callable, log_tilde2: Callable, draws2) -> float:
    """``c1 / c2`` as the mean of ``pi~_1 / pi~_2`` over draws from ``pi_2``."""
    d2 = np.asarray(draws2)
    r = np.asarray(log_tilde1(d2)) - np.asarray(log_tilde2(d2))
    return float(math.exp(logsumexp(r) - math.log(d2.shape[0])))


def candidate_constant(chain, log_target_unnorm: Callable, log_phi: Callable) -> float:
    """Normalising constant ``C`` of ``f~`` from a chain targeting ``f = f~ / C``.

    ``mean(phi / f~)`` over the chain converges to ``1 / C`` for any density
    ``phi``.
    """
    x = np.asarray(getattr(chain, "states", chain), dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    r = np.asarray(log_phi(x)) - np.asarray(log_target_unnorm(x))
    return float(math.exp(-(logsumexp(r) - math.log(r.size))))


@dataclass
class ChibTrace:
    """Evidence weights ``omega_t`` along a chain and their running mean."""

    t: np.ndarray
    omega: np.ndarray
    running: RunningEstimate


def chib_weight_trace(
    chain,
    loglik: Callable,
    logprior: Callable,
    bandwidth: float | None = None,
    start: int | None = None,
    block: int = 512,
) -> ChibTrace:
    """Evidence weights ``L(theta_t) pi(theta_t) / pihat_t(theta_t)``.

    ``pihat_t`` is a Gaussian kernel density estimate built from the first
    ``t`` states. Weights start at ``start`` (default a tenth of the chain,
    at least 50) so the estimate has some support.

    Raises
    ------
    DomainError
        If ``bandwidth <= 0``.
    DegenerateError
        If the chain is constant.
    """
    x = np.asarray(getattr(chain, "states", chain), dtype=float).ravel()
    T = x.size
    sd = float(np.std(x))
    if sd == 0 or T < 2:
        raise DegenerateError("chain has no spread")
    if bandwidth is None:
        iqr = float(np.subtract(*np.percentile(x, [75, 25])))
        spread = min(sd, iqr / 1.349) if iqr > 0 else sd
        bandwidth = 0.9 * spread * T ** (-0.2)
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    t0 = max(50, T // 10) if start is None else int(start)
    t0 = min(max(t0, 1), T)
    ts = np.arange(t0, T + 1)
    log_kde = np.empty(ts.size)
    # Evaluate pihat_t(x_{t-1}) over the first t states, in blocks of t.
    for b0 in range(0, ts.size, block):
        tb = ts[b0 : b0 + block]
        pts = x[tb - 1]
        tmax = tb[-1]
        z = (pts[:, None] - x[None, :tmax]) / bandwidth
        k = np.exp(-0.5 * z * z)
        mask = np.arange(tmax)[None, :] < tb[:, None]
        dens = (k * mask).sum(axis=1) / (tb * bandwidth * math.sqrt(2 * math.pi))
        log_kde[b0 : b0 + block] = np.log(dens)
    pts = x[ts - 1]
    log_omega = np.asarray(loglik(pts)) + np.asarray(logprior(pts)) - log_kde
    omega = np.exp(log_omega)
    return ChibTrace(ts, omega, running_mean(omega))


def log_evidence_gprior(y, X, beta_tilde=None) -> float:
    """Log marginal likelihood of a linear model under Zellner's g-prior with ``g = n``.

    With ``y | sigma^2 ~ N(X b, sigma^2 (I + n P_X))`` for a prior guess
    ``b = beta_tilde`` and ``pi(sigma^2) = 1/sigma^2``, integrating out
    ``sigma^2`` gives
    ``(n+1)^{-p/2} pi^{-n/2} Gamma(n/2) [r'r - n/(n+1) r'P_X r]^{-n/2}``
    with ``r = y - X b`` and ``p`` the number of columns of ``X`` (intercept
    included). For ``b = 0`` the bracket is ``y'y - n/(n+1) y'P_X y``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DomainError("y and X disagree in length")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise DegenerateError("X is rank deficient")
    b = np.zeros(p) if beta_tilde is None else np.asarray(beta_tilde, dtype=float)
    r = y - X @ b
    Pr = X @ np.linalg.solve(X.T @ X, X.T @ r)
    s = r @ r - n / (n + 1) * (r @ Pr)
    if s <= 0:
        raise DomainError("quadratic form is not positive")
    return float(-p / 2 * math.log(n + 1) - n / 2 * math.log(math.pi) + gammaln(n / 2) - n / 2 * math.log(s))


def log_t_projection_density(y, X, df: float) -> float:
    """Log density at ``y`` of a centred multivariate t with scale ``I + P_X`` and ``df`` degrees of freedom.

    ``P_X`` is the orthogonal projection on the columns of ``X``. With
    ``df = n - 1`` this reproduces the tabulated swiss evidence value.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n = y.size
    S = np.eye(n) + X @ np.linalg.solve(X.T @ X, X.T)
    return float(multivariate_t(np.zeros(n), S, df=df).logpdf(y))


FitzProposal = Literal["double_exponential", "cauchy2", "normal"]


def fitz_log_target(x) -> np.ndarray:
    """Log of ``exp(-sqrt(x)) sin(x)^2`` on ``x > 0``, ``-inf`` elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    with np.errstate(divide="ignore"):
        out[pos] = -np.sqrt(x[pos]) + 2 * np.log(np.abs(np.sin(x[pos])))
    return out


def fitz_weights(proposal: FitzProposal, n: int, stream: RngStream, form: Literal["intended", "printed"] = "intended") -> WeightedSample:
    """Importance sample for ``exp(-sqrt(x)) sin(x)^2 1(x > 0)`` under one of three proposals.

    ``double_exponential`` is the standard Laplace law, ``cauchy2`` a Cauchy
    with scale 2 and ``normal`` the standard normal. With ``form="intended"``
    weights are the target divided by the proposal density, so points on the
    negative half-line carry weight zero.

    ``form="printed"`` evaluates the weight expressions as commonly typed in
    R: the Laplace weight ``f(x) / .5 * dexp(x)`` (which multiplies by the
    exponential density instead of dividing by the Laplace density) and the
    Cauchy weight ``f(x) / dcauchy(x / 2)``. The second differs from the
    intended weight by a constant factor only.
    """
    if form not in ("intended", "printed"):
        raise DomainError(f"unknown form {form!r}")
    if proposal == "double_exponential":
        sign = np.where(stream.uniform(n) < 0.5, -1.0, 1.0)
        x = sign * stream.exponential(n)
        spec = DistributionSpec("double_exponential", (1.0,))
    elif proposal == "cauchy2":
        spec = DistributionSpec("cauchy", (0.0, 2.0))
        x = spec.sample(stream, n)
    elif proposal == "normal":
        spec = DistributionSpec("normal", (0.0, 1.0))
        x = stream.normal(n)
    else:
        raise DomainError(f"unknown proposal {proposal!r}")
    lf = fitz_log_target(x)
    if form == "printed" and proposal == "double_exponential":
        return WeightedSample(x, lf + math.log(2.0) - np.abs(x))
    if form == "printed" and proposal == "cauchy2":
        return WeightedSample(x, lf - spec.log_density(x) - math.log(2.0))
    return WeightedSample(x, lf - spec.log_density(x))
