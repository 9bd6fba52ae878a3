"""Convergence diagnostics for chains: ESS, Geweke, PSRF, Kolmogorov-Smirnov and running quantiles.

All functions are pure functions of their input arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateError, DomainError

# PSRF values below this floor are reported as suspicious.
PSRF_FLOOR = 0.97
# Terms of the Kolmogorov series below this size are dropped.
KS_SERIES_TOL = 1e-12
# Below this scaled statistic the Kolmogorov p-value equals 1 in double precision.
KS_LAMBDA_MIN = 0.18


def _vector(trace) -> np.ndarray:
    x = np.asarray(getattr(trace, "states", trace), dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise DomainError("expected a single-parameter trace")
    return x


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelations ``rho_0 .. rho_max_lag`` (biased normalisation, via FFT)."""
    x = _vector(x)
    n = x.size
    y = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] <= 0:
        raise DegenerateError("trace has zero variance")
    rho = acov / acov[0]
    return rho if max_lag is None else rho[: max_lag + 1]


def ess_autocorr(trace) -> float:
    """Effective sample size ``n / (1 + 2 sum rho_k)``.

    The sum stops before the first pair ``rho_{2j} + rho_{2j+1}`` that is
    negative (initial positive sequence). The result is clipped to ``[1, n]``.

    Raises
    ------
    DomainError
        If the trace has fewer than 10 values.
    DegenerateError
        If the trace is constant.
    """
    x = _vector(trace)
    n = x.size
    if n < 10:
        raise DomainError("need at least 10 values")
    rho = autocorrelation(x)
    if rho.size % 2:
        rho = rho[:-1]
    pairs = rho[0::2] + rho[1::2]
    neg = np.flatnonzero(pairs < 0)
    stop = neg[0] if neg.size else pairs.size
    tau = -1.0 + 2.0 * pairs[:stop].sum()
    return float(min(max(n / tau, 1.0), n)) if tau > 0 else float(n)


def _batch_var(x: np.ndarray, n_batches: int) -> float:
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.var(means, ddof=1) / n_batches)


def geweke_z(trace, frac_a: float = 0.1, frac_b: float = 0.5, n_batches: int = 20) -> float:
    """Geweke drift statistic comparing the first ``frac_a`` and last ``frac_b`` of a chain.

    ``z = (mean_A - mean_B) / sqrt(v_A + v_B)`` where each variance of the
    window mean comes from ``n_batches`` batch means.

    Raises
    ------
    ConfigurationError
        If the windows overlap or a window holds fewer than two values per batch.
    DegenerateError
        If both windows are constant.
    """
    x = _vector(trace)
    n = x.size
    if not (0 < frac_a and 0 < frac_b and frac_a + frac_b <= 1):
        raise ConfigurationError("windows must be non-empty and must not overlap")
    na, nb = int(frac_a * n), int(frac_b * n)
    if min(na, nb) < 2 * n_batches:
        raise ConfigurationError(f"windows of {na} and {nb} values are too short for {n_batches} batches")
    a, b = x[:na], x[n - nb :]
    v = _batch_var(a, n_batches) + _batch_var(b, n_batches)
    if v <= 0:
        raise DegenerateError("windows have zero variance")
    return float((a.mean() - b.mean()) / math.sqrt(v))


def _chains(traces, name: str | None = None) -> np.ndarray:
    rows = []
    for t in traces:
        if hasattr(t, "states"):
            rows.append(t.column(name) if name else _vector(t))
        else:
            rows.append(_vector(t))
    if len({r.size for r in rows}) != 1:
        raise ConfigurationError("chains must have equal lengths")
    return np.vstack(rows)


def gelman_rubin_psrf(traces: Sequence, name: str | None = None) -> float:
    """Potential scale reduction factor on the second halves of the chains.

    ``sqrt(((n - 1)/n W + B/n) / W)``, with ``W`` the mean within-chain
    variance and ``B`` ``n`` times the variance of the chain means.

    Raises
    ------
    ConfigurationError
        With fewer than two chains, unequal lengths or chains shorter than 20.
    DegenerateError
        If every chain is constant.
    """
    if len(traces) < 2:
        raise ConfigurationError("PSRF needs at least two chains")
    x = _chains(traces, name)
    if x.shape[1] < 20:
        raise ConfigurationError("chains must have at least 20 values")
    x = x[:, x.shape[1] // 2 :]
    n = x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    if W <= 0:
        raise DegenerateError("within-chain variance is zero")
    B = n * float(np.var(x.mean(axis=1), ddof=1))
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def kolmogorov_sf(lam: float) -> float:
    """``P(K > lam)`` for the Kolmogorov distribution, ``2 sum (-1)^{k-1} exp(-2 k^2 lam^2)``.

    Terms smaller than ``1e-12`` are dropped.
    """
    if lam < KS_LAMBDA_MIN:
        return 1.0
    kmax = int(math.ceil(math.sqrt(math.log(2 / KS_SERIES_TOL) / 2) / lam)) + 1
    k = np.arange(1, kmax + 1)
    terms = 2 * np.exp(-2 * k**2 * lam**2)
    terms = terms[terms >= KS_SERIES_TOL]
    p = float(np.sum(terms * np.where(k[: terms.size] % 2 == 1, 1.0, -1.0)))
    return min(max(p, 0.0), 1.0)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    ``D`` is exact: both empirical cdfs are compared at every pooled point.
    The p-value evaluates the Kolmogorov tail at ``D sqrt(n_a n_b / (n_a + n_b))``.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise DomainError("samples must be non-empty")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    lam = d * math.sqrt(a.size * b.size / (a.size + b.size))
    return d, kolmogorov_sf(lam)


def ks_half_trajectory(trace, thin: int = 10, checkpoints: int = 100) -> np.ndarray:
    """KS p-values comparing the two halves of growing prefixes of a chain.

    Checkpoints ``t`` run evenly from ``n/10`` to ``n``. At each one the
    prefix of length ``t`` is split in halves, each half is thinned by
    ``thin`` and the halves are compared by :func:`ks_two_sample`.

    Returns
    -------
    ndarray, shape (checkpoints, 2)
        Columns ``t`` and ``p``.
    """
    x = _vector(trace)
    n = x.size
    if n < 10 * thin:
        raise DomainError("trace must have at least 10 * thin values")
    ts = np.linspace(n / 10, n, checkpoints).astype(int)
    out = np.empty((checkpoints, 2))
    for i, t in enumerate(ts):
        h = t // 2
        _, p = ks_two_sample(x[:h:thin], x[h : 2 * h : thin])
        out[i] = t, p
    return out


def cumulative_quantile_data(trace, quantiles=(0.025, 0.5, 0.975)) -> np.ndarray:
    """Running empirical quantiles of a chain.

    Quantiles are computed exactly at every ``k``-th iteration, with
    ``k = max(1, n // 500)``, and at the first and last ones, then linearly
    interpolated in between.

    Returns
    -------
    ndarray, shape (n, len(quantiles))
    """
    x = _vector(trace)
    n = x.size
    q = np.asarray(quantiles, dtype=float)
    k = max(1, n // 500)
    idx = np.unique(np.concatenate([[0], np.arange(k - 1, n, k), [n - 1]]))
    exact = np.array([np.quantile(x[: i + 1], q) for i in idx])
    t = np.arange(n)
    return np.column_stack([np.interp(t, idx, exact[:, j]) for j in range(q.size)])


@dataclass
class DiagnosticsReport:
    """Summary of the diagnostics run on one parameter."""

    ess: float
    geweke_z: float
    psrf: float | None = None
    ks_trajectory: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        traj = None if self.ks_trajectory is None else self.ks_trajectory.tolist()
        return {"ess": self.ess, "geweke_z": self.geweke_z, "psrf": self.psrf, "ks_trajectory": traj, "notes": list(self.notes)}


def diagnose(chains, name: str | None = None, ks: bool = True, thin: int = 10) -> DiagnosticsReport:
    """Run ESS and Geweke on the first chain and PSRF when several chains are given.

    ``chains`` is one trace or a list of traces (or arrays). ESS is summed
    over chains.
    """
    if hasattr(chains, "states") or (not isinstance(chains, (list, tuple)) and np.ndim(chains) == 1):
        chains = [chains]
    elif isinstance(chains, (list, tuple)) and chains and np.isscalar(chains[0]):
        chains = [np.asarray(chains, dtype=float)]
    x = _chains(chains, name)
    notes = []
    ess = float(sum(ess_autocorr(row) for row in x))
    z = geweke_z(x[0])
    if abs(z) > 1.96:
        notes.append("geweke drift")
    psrf = None
    if len(chains) > 1:
        psrf = gelman_rubin_psrf(list(x))
        if psrf < PSRF_FLOOR:
            notes.append("psrf below floor")
    traj = ks_half_trajectory(x[0], thin=thin) if ks and x.shape[1] >= 10 * thin else None
    if traj is not None and traj[-1, 1] < 1e-4:
        notes.append("ks halves differ")
    return DiagnosticsReport(ess, z, psrf, traj, notes)


def nonstationary(trace) -> bool:
    """Flag a chain whose halves or windows disagree.

    True when the Geweke statistic of ``log |x|`` exceeds 1.96 in absolute
    value or the final half-versus-half KS p-value is below ``1e-4``.
    Working on ``log |x|`` keeps heavy excursions from masking drift.
    """
    x = _vector(trace)
    lx = np.log(np.abs(x))
    z = geweke_z(lx)
    p = ks_half_trajectory(lx, thin=1, checkpoints=1)[-1, 1]
    return bool(abs(z) > 1.96 or p < 1e-4)
