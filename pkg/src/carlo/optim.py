"""Stochastic optimisation: gradient and annealing searches, EM and Monte Carlo EM."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.special import log_ndtr, xlogy

from .errors import BracketingError, DivergenceError, DomainError
from .rng import RngStream

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
MAIN_MODE = (0.0, 2.5)
MINOR_MODE = (2.5, 0.0)


@dataclass
class MixtureModel:
    """Two-component normal mixture ``w1 N(mu1, 1) + w2 N(mu2, 1)`` with known weights."""

    data: np.ndarray
    weights: tuple[float, float] = (0.25, 0.75)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if abs(sum(self.weights) - 1) > 1e-12 or min(self.weights) <= 0:
            raise DomainError("weights must be positive and sum to one")

    @classmethod
    def simulate(cls, stream: RngStream, n_obs: int = 400, shift: float = 2.5, weights=(0.25, 0.75)):
        """``N(0, 1)`` noise plus ``shift`` with probability ``weights[1]``."""
        z = stream.uniform(n_obs) < weights[1]
        return cls(stream.normal(n_obs) + shift * z, tuple(weights))


def mixture_loglik(model: MixtureModel, mu) -> np.ndarray:
    """Log-likelihood at ``mu = (mu1, mu2)``; rows of a 2-D ``mu`` are evaluated separately."""
    m = np.atleast_2d(np.asarray(mu, dtype=float))
    x = model.data[None, :]
    w1, w2 = model.weights
    a = math.log(w1) - 0.5 * (x - m[:, :1]) ** 2
    b = math.log(w2) - 0.5 * (x - m[:, 1:2]) ** 2
    out = np.logaddexp(a, b).sum(axis=1) - x.shape[1] * _LOG_SQRT_2PI
    return out[0] if np.ndim(mu) == 1 else out


def mixture_loglik_grad(model: MixtureModel, mu) -> np.ndarray:
    """Gradient of :func:`mixture_loglik` in ``(mu1, mu2)``."""
    mu1, mu2 = float(mu[0]), float(mu[1])
    x = model.data
    w1, w2 = model.weights
    a = math.log(w1) - 0.5 * (x - mu1) ** 2
    b = math.log(w2) - 0.5 * (x - mu2) ** 2
    r1 = np.exp(a - np.logaddexp(a, b))
    return np.array([np.sum(r1 * (x - mu1)), np.sum((1 - r1) * (x - mu2))])


def attribute_mode(theta) -> Literal["main", "secondary"]:
    """``main`` if ``theta`` is at least as close to ``(0, 2.5)`` as to ``(2.5, 0)``."""
    t = np.asarray(theta, dtype=float)
    d_main = np.sum((t - MAIN_MODE) ** 2)
    d_minor = np.sum((t - MINOR_MODE) ** 2)
    return "main" if d_main <= d_minor else "secondary"


def domain_constraint(x, y):
    """Membership in ``x^2 (1 + sin(y/3) cos 8x) + y^2 (2 + cos 5x cos 8y) < 1``."""
    return x**2 * (1 + np.sin(y / 3) * np.cos(8 * x)) + y**2 * (2 + np.cos(5 * x) * np.cos(8 * y)) < 1


@dataclass
class DomainSample:
    """Candidates from the enclosing ellipse and the subset inside the domain."""

    candidates: np.ndarray
    inside: np.ndarray

    @property
    def acceptance(self) -> float:
        return float(self.inside.mean())

    @property
    def accepted(self) -> np.ndarray:
        return self.candidates[self.inside]


def uniform_over_domain(
    n: int,
    stream: RngStream,
    constraint: Callable = domain_constraint,
    x_factor: float = 0.77,
) -> DomainSample:
    """Polar candidates on the ellipse ``0.77 x^2 + y^2 < 1`` then subsampling.

    Candidates are ``(rho cos t / x_factor, rho sin t)`` with ``t ~ U(0, 2 pi)``
    and ``rho ~ U(0, 1)``, the recipe as commonly printed. This is not
    uniform on the ellipse (a uniform radius needs ``sqrt(rho)`` and the
    rescale ``sqrt(0.77)``), so accepted points concentrate near the origin.
    """
    th = 2 * np.pi * stream.uniform(n)
    rho = stream.uniform(n)
    xy = np.column_stack([rho * np.cos(th) / x_factor, rho * np.sin(th)])
    return DomainSample(xy, np.asarray(constraint(xy[:, 0], xy[:, 1]), dtype=bool))


@dataclass(frozen=True)
class Schedule:
    """Deterministic decreasing sequence indexed by ``t = 1, 2, ...``.

    Kinds
    -----
    log_inverse
        ``scale / log(1 + t)``
    scaled_log_inverse
        ``scale / log(1 + t)**power``
    sqrt_log_inverse
        ``scale / sqrt(log(1 + t))``
    geometric
        ``scale * ratio**(1 + t)``
    """

    kind: Literal["log_inverse", "scaled_log_inverse", "sqrt_log_inverse", "geometric"]
    scale: float = 1.0
    power: float = 1.0
    ratio: float = 0.95

    def __post_init__(self):
        if self.scale <= 0 or self.power < 0 or not 0 < self.ratio < 1:
            raise DomainError("schedule needs scale > 0, power >= 0 and 0 < ratio < 1")
        if self.kind not in ("log_inverse", "scaled_log_inverse", "sqrt_log_inverse", "geometric"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "log_inverse":
            return self.scale / np.log1p(t)
        if self.kind == "scaled_log_inverse":
            return self.scale / np.log1p(t) ** self.power
        if self.kind == "sqrt_log_inverse":
            return self.scale / np.sqrt(np.log1p(t))
        return self.scale * self.ratio ** (1 + t)


# Temperature schedules compared for the mixture likelihood.
SA_SCHEDULES = {
    "1/log(1+t)": Schedule("log_inverse", 1.0),
    "1/(10 log(1+t))": Schedule("log_inverse", 0.1),
    "1/(10 sqrt(log(1+t)))": Schedule("sqrt_log_inverse", 0.1),
    "0.95^(1+t)": Schedule("geometric", 1.0, ratio=0.95),
}

# Step and perturbation schedules for the gradient search.
SG_SCHEDULES = {
    "a.01-b.5": (Schedule("log_inverse", 0.01), Schedule("scaled_log_inverse", 1.0, power=0.5)),
    "a.1-b.5": (Schedule("log_inverse", 0.1), Schedule("scaled_log_inverse", 1.0, power=0.5)),
    "a.01-b.1": (Schedule("log_inverse", 0.01), Schedule("scaled_log_inverse", 1.0, power=0.1)),
    "a.1-b.1": (Schedule("log_inverse", 0.1), Schedule("scaled_log_inverse", 1.0, power=0.1)),
}


@dataclass
class OptimPath:
    """Iterates of a stochastic search."""

    path: np.ndarray
    values: np.ndarray
    converged: bool
    iterations: int

    @property
    def final(self) -> np.ndarray:
        return self.path[-1]


def stochastic_gradient(
    objective: Callable,
    start,
    schedules: tuple[Schedule, Schedule],
    stream: RngStream,
    max_iter: int = 10**4,
    tol: float = 1e-5,
    max_norm: float = 1e6,
) -> OptimPath:
    """Maximise ``objective`` by finite-difference stochastic gradient steps.

    ``theta_{j+1} = theta_j + alpha_j / (2 beta_j) [h(theta_j + beta_j z) - h(theta_j - beta_j z)] z``
    with ``z`` uniform on the unit sphere. Stops when a step is shorter than
    ``tol``.

    Raises
    ------
    DivergenceError
        If an iterate leaves the ball of radius ``max_norm`` or an objective
        value stops being finite; ``partial`` holds the path so far. Far out,
        the finite difference rounds to zero and the search would otherwise
        stop there as if converged.
    """
    alpha, beta = schedules
    theta = np.asarray(start, dtype=float).copy()
    d = theta.size
    path, vals = [theta.copy()], [float(objective(theta))]
    converged = False
    j = 0
    for j in range(1, max_iter + 1):
        z = stream.normal(d)
        z /= np.linalg.norm(z)
        a, b = float(alpha(j)), float(beta(j))
        diff = float(objective(theta + b * z)) - float(objective(theta - b * z))
        step = a / (2 * b) * diff * z
        theta = theta + step
        val = float(objective(theta))
        if not (np.all(np.isfinite(theta)) and math.isfinite(val)) or np.linalg.norm(theta) > max_norm:
            raise DivergenceError(f"iterate escaped at step {j}", partial=np.array(path))
        path.append(theta.copy())
        vals.append(val)
        if np.linalg.norm(step) < tol:
            converged = True
            break
    return OptimPath(np.array(path), np.array(vals), converged, j)


def simulated_annealing(
    objective: Callable,
    start,
    schedule: Schedule,
    stream: RngStream,
    max_iter: int = 5000,
    proposal_scale: float = 1.0,
    bounds: tuple[float, float] | None = None,
) -> OptimPath:
    """Maximise ``objective`` by simulated annealing.

    Proposals are uniform on the box ``theta +/- proposal_scale sqrt(T_t)`` and
    are accepted with probability ``min(1, exp(dh / T_t))``. Proposals outside
    ``bounds`` are rejected. ``start`` may be a matrix whose rows are run as
    independent chains in lockstep; ``objective`` must then map rows to values.

    The path has ``max_iter + 1`` rows, the first being ``start``.
    """
    theta = np.array(start, dtype=float)
    batched = theta.ndim == 2
    cur = np.atleast_2d(theta)
    r, d = cur.shape
    val = np.atleast_1d(np.asarray(objective(cur if batched else cur[0]), dtype=float))
    path = np.empty((max_iter + 1, r, d))
    vals = np.empty((max_iter + 1, r))
    path[0], vals[0] = cur, val
    for t in range(1, max_iter + 1):
        temp = float(schedule(t))
        width = proposal_scale * math.sqrt(temp)
        prop = cur + width * (2 * stream.uniform(r * d).reshape(r, d) - 1)
        pv = np.atleast_1d(np.asarray(objective(prop if batched else prop[0]), dtype=float))
        with np.errstate(over="ignore", invalid="ignore"):
            ok = np.log(stream.uniform(r)) * temp < pv - val
        if bounds is not None:
            ok &= np.all((prop >= bounds[0]) & (prop <= bounds[1]), axis=1)
        ok &= np.isfinite(pv)
        cur = np.where(ok[:, None], prop, cur)
        val = np.where(ok, pv, val)
        path[t], vals[t] = cur, val
    if not batched:
        path, vals = path[:, 0, :], vals[:, 0]
    return OptimPath(path, vals, True, max_iter)


@dataclass
class EmPath:
    """EM iterates with the observed-data log-likelihood at each one."""

    path: np.ndarray
    loglik: np.ndarray
    converged: bool

    @property
    def final(self):
        return self.path[-1]


def linkage_loglik(theta, x) -> float:
    """Observed log-likelihood of cell probabilities ``(1/2 + t/4, (1-t)/4, (1-t)/4, t/4)``, up to a constant."""
    x1, x2, x3, x4 = x
    return float(x1 * math.log(2 + theta) + xlogy(x2 + x3, 1 - theta) + xlogy(x4, theta))


def _linkage_step(theta, x):
    x1, x2, x3, x4 = x
    z = theta * x1 / (2 + theta)
    return (z + x4) / (z + x2 + x3 + x4)


def em_linkage(x, theta0: float, tol: float = 1e-3, max_iter: int = 10**4) -> EmPath:
    """EM for the four-cell linkage model.

    ``theta' = (theta x1 / (2 + theta) + x4) / (theta x1 / (2 + theta) + x2 + x3 + x4)``
    until successive iterates differ by less than ``tol``.
    """
    if not 0 < theta0 < 1:
        raise DomainError("theta0 must lie in (0, 1)")
    if any(v < 0 for v in x):
        raise DomainError("counts must be nonnegative")
    path = [float(theta0)]
    for _ in range(max_iter):
        new = _linkage_step(path[-1], x)
        if not 0 <= new <= 1:
            raise DomainError(f"iterate {new} left [0, 1]")
        path.append(new)
        if abs(new - path[-2]) < tol:
            break
    ll = np.array([linkage_loglik(t, x) if 0 < t < 1 or t == 0 and x[3] == 0 else -np.inf for t in path])
    return EmPath(np.array(path), ll, abs(path[-1] - path[-2]) < tol)


@dataclass
class McemEnvelope:
    """Monte Carlo EM paths and their pointwise range."""

    paths: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def mcem_linkage(
    x, theta0: float, m: int, n_paths: int, stream: RngStream, n_iter: int = 10
) -> McemEnvelope:
    """Monte Carlo EM for the linkage model with a binomial E-step.

    The expected hidden count ``x1 theta / (2 + theta)`` is replaced by
    ``Bin(m x1, theta / (2 + theta)) / m``; ``n_paths`` independent paths of
    ``n_iter`` updates are run side by side.
    """
    if not 0 < theta0 < 1:
        raise DomainError("theta0 must lie in (0, 1)")
    x1, x2, x3, x4 = x
    g = stream.generator
    paths = np.empty((n_paths, n_iter + 1))
    paths[:, 0] = theta0
    for i in range(1, n_iter + 1):
        th = paths[:, i - 1]
        z = g.binomial(int(m * x1), 1.0 / (1.0 + 2.0 / th)) / m
        paths[:, i] = 1.0 / (1.0 + (x2 + x3) / (x4 + z))
    return McemEnvelope(paths, paths.min(axis=0), paths.max(axis=0))


def censored_loglik(theta, y, a, n_total) -> float:
    """Log-likelihood of ``N(theta, 1)`` data with ``n_total - len(y)`` values censored above ``a``."""
    y = np.asarray(y, dtype=float)
    return float(-0.5 * np.sum((y - theta) ** 2) - y.size * _LOG_SQRT_2PI + (n_total - y.size) * log_ndtr(theta - a))


def em_censored_normal(y, a: float, n_total: int, theta0: float, tol: float = 1e-8, max_iter: int = 10**4) -> EmPath:
    """EM for the mean of right-censored ``N(theta, 1)`` data.

    The censored values have conditional mean
    ``theta + phi(a - theta) / (1 - Phi(a - theta))``.
    """
    y = np.asarray(y, dtype=float)
    m = y.size
    if n_total < m:
        raise DomainError("n_total must be at least len(y)")
    path = [float(theta0)]
    for _ in range(max_iter):
        th = path[-1]
        d = a - th
        # phi(d) / (1 - Phi(d)) in logs for stability.
        hazard = math.exp(-0.5 * d * d - _LOG_SQRT_2PI - float(log_ndtr(-d)))
        new = (m * y.mean() + (n_total - m) * (th + hazard)) / n_total
        path.append(new)
        if abs(new - th) < tol:
            break
    ll = np.array([censored_loglik(t, y, a, n_total) for t in path])
    return EmPath(np.array(path), ll, abs(path[-1] - path[-2]) < tol)


def exp_mixture_loglik(params, x) -> float:
    """``sum log(p l e^{-l x} + (1-p) m e^{-m x})`` for rates ``l, m``."""
    p, lam, mu = params
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.log(p * lam * np.exp(-lam * x) + (1 - p) * mu * np.exp(-mu * x))))


def em_exp_mixture(
    x,
    start,
    variant: Literal["printed", "corrected"] = "printed",
    tol: float = 1e-5,
    max_iter: int = 10**5,
) -> EmPath:
    """EM for a two-component exponential mixture ``p Exp(l) + (1-p) Exp(m)``.

    With ``P = sum r_i``, ``S1 = sum x_i r_i`` and ``S2 = sum x_i (1 - r_i)``
    for the membership probabilities ``r_i``:

    ``printed``
        ``(P / n, S1 / P, S2 / P)``. These are mean-type quantities fed back
        as rates, and ``S2`` is divided by ``P``; the iteration is not an EM
        step and does not increase the likelihood in general.
    ``corrected``
        ``(P / n, P / S1, (n - P) / S2)``, the exact M-step for rates.

    Iteration stops when the summed absolute change is at most ``tol``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    cur = np.asarray(start, dtype=float)
    if not (0 < cur[0] < 1 and cur[1] > 0 and cur[2] > 0):
        raise DomainError("start must satisfy 0 < p < 1 and positive rates")
    path = [cur.copy()]
    converged = False
    for _ in range(max_iter):
        p, lam, mu = cur
        probs = 1.0 / (1.0 + (1 - p) * mu * np.exp(-mu * x) / (p * lam * np.exp(-lam * x)))
        P, S1, S2 = probs.sum(), np.sum(x * probs), np.sum(x * (1 - probs))
        if variant == "printed":
            new = np.array([P / n, S1 / P, S2 / P])
        elif variant == "corrected":
            new = np.array([P / n, P / S1, (n - P) / S2])
        else:
            raise ValueError(f"unknown variant {variant!r}")
        if not np.all(np.isfinite(new)):
            raise DivergenceError("non-finite EM iterate", partial=np.array(path))
        diff = float(np.sum(np.abs(new - cur)))
        cur = new
        path.append(cur.copy())
        if diff <= tol:
            converged = True
            break
    arr = np.array(path)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.array([exp_mixture_loglik(r, x) for r in arr])
    return EmPath(arr, ll, converged)


@dataclass
class RootResult:
    root: float
    value: float
    iterations: int


def find_root_bisection(h: Callable[[float], float], lo: float, up: float, tol: float = 1e-10, max_iter: int = 200) -> RootResult:
    """Bisection for a sign change of ``h`` on ``[lo, up]``.

    Raises
    ------
    BracketingError
        If ``h(lo)`` and ``h(up)`` share a sign.
    """
    flo, fup = h(lo), h(up)
    if flo == 0:
        return RootResult(lo, 0.0, 0)
    if fup == 0:
        return RootResult(up, 0.0, 0)
    if np.sign(flo) == np.sign(fup):
        raise BracketingError(f"h({lo}) and h({up}) have the same sign")
    a, b = float(lo), float(up)
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (a + b)
        fm = h(mid)
        if fm == 0 or b - a < tol:
            a = b = mid
            break
        if np.sign(fm) == np.sign(flo):
            a, flo = mid, fm
        else:
            b = mid
    root = 0.5 * (a + b)
    return RootResult(root, float(h(root)), it)
