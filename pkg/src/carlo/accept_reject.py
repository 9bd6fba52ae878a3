"""Accept-reject sampling, optimal envelope constants and weight recycling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln, xlogy

from .distributions import DistributionSpec
from .errors import CapabilityError, DivergenceError, DomainError, SetupError
from .rng import RngStream

# Consecutive rejections tolerated before a run is declared divergent.
MAX_REJECTIONS = 10**7
# Relative slack allowed when spot-checking an envelope.
ENVELOPE_SLACK = 1e-9


@dataclass
class Envelope:
    """Dominating proposal ``M g >= f`` for accept-reject.

    Parameters
    ----------
    target_logpdf : callable
        Vectorised log of the (possibly unnormalised) target ``f``.
    proposal : DistributionSpec
        Proposal family ``g``.
    log_M : float
        Log of the bound ``M``.
    capped : bool, default False
        Accept with probability ``min(1, f / (M g))`` without requiring the
        bound to hold. The output then follows ``min(f, M g)`` normalised
        rather than ``f``; this reproduces constructions where no finite
        bound exists.
    """

    target_logpdf: Callable
    proposal: DistributionSpec
    log_M: float
    capped: bool = False

    def __post_init__(self):
        if not math.isfinite(self.log_M):
            raise DomainError("log_M must be finite")
        if not self.capped:
            self.check()

    def log_ratio(self, x):
        """``log f(x) - log g(x) - log M``."""
        return np.asarray(self.target_logpdf(x)) - self.proposal.log_density(x) - self.log_M

    def check(self, n_grid: int = 1000) -> None:
        """Spot-check ``f <= M g`` on a grid of proposal quantiles."""
        if self.proposal.family == "dirichlet":
            return
        p = np.linspace(0.5 / n_grid, 1 - 0.5 / n_grid, n_grid)
        x = np.unique(self.proposal.quantile(p))
        r = self.log_ratio(x)
        worst = int(np.nanargmax(r))
        if r[worst] > ENVELOPE_SLACK:
            raise DomainError(f"envelope violated at x={x[worst]:.6g} by log factor {r[worst]:.3g}")


@dataclass
class ArResult:
    """Accepted draws together with the proposal budget spent on them."""

    accepted: np.ndarray
    proposals_used: int
    acceptance_rate: float


def ar_sample(envelope: Envelope, n: int, stream: RngStream, batch: int | None = None) -> ArResult:
    """Draw ``n`` variates by accept-reject.

    Proposals are generated in batches but counted one by one, so
    ``proposals_used`` stops at the proposal that delivered the ``n``-th
    acceptance.

    Raises
    ------
    DivergenceError
        After ``MAX_REJECTIONS`` consecutive rejections.
    """
    if n < 0:
        raise DomainError("n must be non-negative")
    out: list[np.ndarray] = []
    have, used, run = 0, 0, 0
    size = batch or max(64, min(2 * n + 64, 10**6))
    while have < n:
        y = envelope.proposal.sample(stream, size)
        u = stream.uniform(size)
        lr = envelope.log_ratio(y)
        ok = np.log(u) < np.minimum(lr, 0.0) if envelope.capped else np.log(u) < lr
        idx = np.flatnonzero(ok)
        need = n - have
        if idx.size >= need:
            last = idx[need - 1]
            out.append(y[idx[:need]])
            used += int(last) + 1
            have = n
            break
        if idx.size:
            run = size - 1 - int(idx[-1])
        else:
            run += size
        if run >= MAX_REJECTIONS:
            raise DivergenceError(f"{run} consecutive rejections", partial=np.concatenate(out) if out else None)
        out.append(y[idx])
        have += idx.size
        used += size
    accepted = np.concatenate(out) if out else np.empty(0)
    rate = n / used if used else float("nan")
    return ArResult(accepted, used, rate)


def beta_envelope(alpha: float, beta: float, a: float, b: float) -> float:
    """Log bound for a ``Be(alpha, beta)`` target under a ``Be(a, b)`` proposal.

    Requires ``0 < a <= alpha`` and ``0 < b <= beta``; ``0 log 0`` is taken as 0.
    """
    if not (0 < a <= alpha and 0 < b <= beta):
        raise DomainError("need 0 < a <= alpha and 0 < b <= beta")
    da, db = alpha - a, beta - b
    return float(
        gammaln(alpha + beta) + gammaln(a) + gammaln(b)
        - gammaln(alpha) - gammaln(beta) - gammaln(a + b)
        + xlogy(da, da) + xlogy(db, db) - xlogy(da + db, da + db)
    )


@dataclass(frozen=True)
class GammaEnvelope:
    """Optimal ``Ga(a, b_opt)`` proposal for a ``Ga(alpha, 1)`` target."""

    b_opt: float
    log_M: float


def gamma_envelope(alpha: float, a: float) -> GammaEnvelope:
    """Optimal rate and log bound for an ``Ga(a, b)`` proposal, ``a <= alpha``.

    The rate minimising ``sup_x f/g`` is ``b = a / alpha``. The bound between
    the normalised densities is then
    ``Gamma(a) / Gamma(alpha) * alpha**alpha / a**a * exp(a - alpha)``,
    which equals one at ``a = alpha`` and decreases in ``a``.
    """
    if not 0 < a <= alpha:
        raise DomainError("need 0 < a <= alpha")
    log_M = gammaln(a) - gammaln(alpha) + alpha * math.log(alpha) - a * math.log(a) - (alpha - a)
    return GammaEnvelope(a / alpha, float(log_M))


def laplace_normal_envelope(alpha: float) -> float:
    """Log bound for ``N(0, 1)`` under a double exponential with rate ``alpha``.

    ``log M = log sqrt(2/pi) + alpha^2/2 - log(alpha)``, minimised at ``alpha = 1``.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    return 0.5 * math.log(2 / math.pi) + alpha**2 / 2 - math.log(alpha)


_INV_PHI = (math.sqrt(5) - 1) / 2


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10):
    """Maximise a unimodal scalar function on ``[lo, hi]``.

    Returns
    -------
    (x, f(x))
    """
    a, b = float(lo), float(hi)
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * (1 + abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = (a + b) / 2
    return x, f(x)


@dataclass
class PosteriorAr:
    """Posterior draws by accept-reject from the prior."""

    result: ArResult
    theta_hat: float
    loglik_max: float


def posterior_ar(
    loglik: Callable[[np.ndarray], np.ndarray],
    prior: DistributionSpec,
    n: int,
    stream: RngStream,
    bracket: tuple[float, float],
) -> PosteriorAr:
    """Sample ``pi(theta | x)`` proposing from the prior.

    The bound is the maximised likelihood, found by golden-section search
    over ``bracket`` (typically the data range). Acceptance probability is
    ``L(theta) / L(theta_hat)``.

    Raises
    ------
    SetupError
        If the search ends on a bracket edge beyond which the likelihood still
        increases, or the maximum is not finite.
    """
    lo, hi = bracket
    if not lo < hi:
        raise SetupError("bracket must satisfy lo < hi")

    def f(t):
        return float(loglik(np.array([t]))[0])

    theta_hat, lmax = golden_section_max(f, lo, hi)
    if not math.isfinite(lmax):
        raise SetupError("likelihood maximum is not finite")
    step = 1e-3 * (hi - lo)
    for edge, out in ((lo, lo - step), (hi, hi + step)):
        if abs(theta_hat - edge) < 1e-6 * (hi - lo) and f(out) > lmax:
            raise SetupError(f"likelihood maximum lies outside the bracket near {edge}")
    env = Envelope(lambda t: loglik(t) + prior.log_density(t), prior, lmax, capped=True)
    return PosteriorAr(ar_sample(env, n, stream), theta_hat, lmax)


def constant_from_acceptance(log_M_tilde: float, rate: float) -> float:
    """Normalising constant of ``f~`` from the empirical acceptance rate.

    With ``f~ <= M~ g`` the acceptance probability is ``1 / (k M~)`` where
    ``f = f~ / k``, so ``k = 1 / (M~ * rate)``.
    """
    if not 0 < rate <= 1:
        raise DomainError("rate must lie in (0, 1]")
    return 1.0 / (math.exp(log_M_tilde) * rate)


def _poisson_binomial(w: np.ndarray) -> np.ndarray:
    """Probabilities of 0..len(w) successes for independent Bernoulli(w_j)."""
    pmf = np.zeros(len(w) + 1)
    pmf[0] = 1.0
    for j, p in enumerate(w):
        pmf[1 : j + 2] = pmf[1 : j + 2] * (1 - p) + pmf[: j + 1] * p
        pmf[0] *= 1 - p
    return pmf


def recycle_weights(weights, m: int, stopping_index: int | None = None, max_n: int = 18) -> np.ndarray:
    """Conditional acceptance probabilities of every proposal in an accept-reject run.

    Given the ratios ``w_j = f(Y_j) / (M g(Y_j))`` of a run that stopped at its
    ``m``-th acceptance, return ``rho_j = P(U_j <= w_j | N, Y_1..Y_N)``. The
    stopping draw gets ``rho = 1``; every other draw gets
    ``w_i S_{m-2}(others) / S_{m-1}(all but the stopping draw)``, where
    ``S_k`` is the probability of exactly ``k`` acceptances.

    The sums over acceptance patterns are evaluated exactly by the
    Poisson-binomial recursion.

    Raises
    ------
    CapabilityError
        If the run is longer than ``max_n``.
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    if n > max_n:
        raise CapabilityError(f"run of length {n} exceeds the bound {max_n}")
    if not 1 <= m <= n:
        raise DomainError("need 1 <= m <= len(weights)")
    if np.any((w < 0) | (w > 1)):
        raise DomainError("weights must lie in [0, 1]")
    stop = n - 1 if stopping_index is None else int(stopping_index)
    rest = np.delete(np.arange(n), stop)
    rho = np.ones(n)
    if m == 1:
        rho[rest] = 0.0
        return rho
    denom = _poisson_binomial(w[rest])[m - 1]
    if denom <= 0:
        raise DomainError("weights are inconsistent with m acceptances")
    for i in rest:
        others = w[rest[rest != i]]
        rho[i] = w[i] * _poisson_binomial(others)[m - 2] / denom
    return rho


def recycled_estimates(envelope: Envelope, h: Callable, m: int, stream: RngStream, max_n: int = 18):
    """One accept-reject run to ``m`` acceptances; return the plain and recycled estimates of ``E_f h``.

    The plain estimate averages ``h`` over accepted draws. The recycled one
    averages ``rho_j h(Y_j)`` over all proposals.
    """
    ys, lw, acc = [], [], []
    got = 0
    while got < m:
        y = envelope.proposal.sample(stream, 1)
        u = stream.uniform(1)
        lr = float(np.minimum(envelope.log_ratio(y)[0], 0.0))
        a = bool(np.log(u[0]) < lr)
        ys.append(float(y[0]))
        lw.append(lr)
        acc.append(a)
        got += a
        if len(ys) > 100 * max_n:
            raise DivergenceError("acceptance too rare for recycling")
    ys, acc = np.array(ys), np.array(acc)
    hv = np.asarray(h(ys), dtype=float)
    plain = float(hv[acc].mean())
    rho = recycle_weights(np.exp(lw), m, max_n=max_n)
    return plain, float(np.sum(rho * hv) / m)
