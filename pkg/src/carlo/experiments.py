"""Registry of reproducible experiments.

Each experiment is a function of an :class:`ExperimentSpec`. It returns an
:class:`ExperimentResult` holding the chains written to ``trace.csv``, the
summary numbers and plot data. Every random draw comes from
``RngStream(seed, k)`` for a task index ``k``, so outputs do not depend on the
number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate as quad
from scipy.special import expit

from . import accept_reject as ar
from . import diagnostics as dg
from . import distributions as dist
from . import integrate as mc
from . import mcmc, optim, variance
from . import datasets as ds
from .distributions import DistributionSpec
from .errors import CarloError, ConfigurationError, DivergenceError
from .rng import RngStream

THREADS_ENV = "CARLO_THREADS"


class UnknownExperimentError(CarloError, KeyError):
    """No experiment is registered under the requested id."""


@dataclass
class ExperimentSpec:
    """A fully specified run: registry id, seed, size, replications and parameter overrides."""

    id: str
    seed: int = 1
    n: int | None = None
    replications: int | None = None
    params: dict = field(default_factory=dict)
    out_dir: str = "."
    workers: int | None = None

    def resolve(self) -> "Context":
        if self.id not in REGISTRY:
            raise UnknownExperimentError(self.id)
        exp = REGISTRY[self.id]
        unknown = set(self.params) - set(exp.params)
        if unknown:
            raise ConfigurationError(f"unknown parameters for {self.id}: {sorted(unknown)}")
        params = dict(exp.params)
        for k, v in self.params.items():
            params[k] = _coerce(v, exp.params[k])
        workers = self.workers or int(os.environ.get(THREADS_ENV, "0") or 0) or (os.cpu_count() or 1)
        return Context(
            self.n if self.n is not None else exp.n,
            self.replications if self.replications is not None else exp.reps,
            int(self.seed), params, workers,
        )


def _coerce(value, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigurationError(f"cannot read {value!r} as a boolean")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigurationError(f"cannot read {value!r} as {type(default).__name__}") from None
    return value


@dataclass
class Context:
    """Resolved run settings handed to an experiment function."""

    n: int
    reps: int
    seed: int
    params: dict
    workers: int = 1

    def stream(self, k: int = 0) -> RngStream:
        return RngStream(self.seed, k)

    def map(self, fn: Callable[[int], object], count: int) -> list:
        """``[fn(0), ..., fn(count - 1)]``, fanned out over worker threads."""
        if self.workers <= 1 or count <= 1:
            return [fn(i) for i in range(count)]
        with ThreadPoolExecutor(max_workers=min(self.workers, count)) as pool:
            return list(pool.map(fn, range(count)))


@dataclass
class ExperimentResult:
    """Everything a run writes to disk."""

    param_names: tuple
    chains: list
    estimates: dict
    ses: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    diagnostics: dict | None = None
    plotdata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Experiment:
    id: str
    chapter: int
    description: str
    datasets: tuple
    n: int
    reps: int
    params: dict
    runner: Callable


REGISTRY: dict[str, Experiment] = {}


def experiment(id: str, chapter: int, description: str, n: int, reps: int = 1, datasets: tuple = (), **params):
    def deco(fn):
        if id in REGISTRY:
            raise ValueError(f"duplicate experiment id {id}")
        REGISTRY[id] = Experiment(id, chapter, description, tuple(datasets), n, reps, params, fn)
        return fn

    return deco


def list_experiments() -> list[tuple[str, int, str, tuple]]:
    """``(id, chapter, description, datasets)`` in registration order."""
    return [(e.id, e.chapter, e.description, e.datasets) for e in REGISTRY.values()]


def run(spec: ExperimentSpec) -> ExperimentResult:
    ctx = spec.resolve()
    exp = REGISTRY[spec.id]
    for tag in exp.datasets:
        if not ds.available(tag):
            ds.external(tag)
    return exp.runner(ctx)


# Plot data helpers.


def running_plot(est: mc.RunningEstimate, points: int = 500) -> tuple:
    idx = np.unique(np.linspace(0, est.n - 1, min(points, est.n)).astype(int))
    m, s = est.means[idx], est.ses[idx]
    return ("iter", "mean", "lower", "upper"), np.column_stack([idx + 1, m, m - 2 * s, m + 2 * s])


def histogram(x, bins: int = 50) -> tuple:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    counts, edges = np.histogram(x, bins=bins)
    return ("bin", "count"), np.column_stack([(edges[:-1] + edges[1:]) / 2, counts])


def _sample_result(name: str, x, target: float | None = None) -> ExperimentResult:
    x = np.asarray(x, dtype=float)
    est = mc.running_mean(x)
    extra = {} if target is None else {"exact": target}
    return ExperimentResult(
        (name,), [x[:, None]], {"mean": est.estimate}, {"mean": est.se},
        plotdata={"running_mean": running_plot(est), "histogram": histogram(x)}, extra=extra,
    )


def _running_result(est: mc.RunningEstimate, exact: float | None = None, **extra) -> ExperimentResult:
    chain = np.column_stack([est.means, est.ses])
    ex = dict(extra)
    if exact is not None:
        ex["exact"] = exact
    return ExperimentResult(
        ("estimate", "se"), [chain], {"estimate": est.estimate}, {"estimate": est.se},
        plotdata={"running_mean": running_plot(est)}, extra=ex,
    )


def _chain_result(traces, main: str, estimates=None, **extra) -> ExperimentResult:
    traces = traces if isinstance(traces, list) else [traces]
    t0 = traces[0]
    post = np.concatenate([t.post_burn() for t in traces])
    est = {name: float(post[:, j].mean()) for j, name in enumerate(t0.param_names)}
    est.update(estimates or {})
    sd = float(np.std(post[:, t0.param_names.index(main)], ddof=1))
    try:
        report = dg.diagnose([t.column(main) for t in traces])
        diag = report.to_dict()
        ses = {main: sd / math.sqrt(report.ess)}
    except CarloError as e:
        # Chains too short or constant for the diagnostics; fall back to the iid SE.
        report, diag = None, {"ess": None, "geweke_z": None, "psrf": None, "ks_trajectory": None, "notes": [str(e)]}
        ses = {main: sd / math.sqrt(post.shape[0])}
    acc = {}
    for i, t in enumerate(traces):
        rate = t.acceptance_rate
        key = t.kernel_name if len(traces) == 1 else f"{t.kernel_name}[{i}]"
        acc[key] = rate.tolist() if isinstance(rate, np.ndarray) else rate
    x = t0.column(main)
    run_est = mc.running_mean(x)
    plots = {
        "running_mean": running_plot(run_est),
        "histogram": histogram(t0.post_burn(main)),
        "cumulative_quantiles": (("iter", "q025", "q500", "q975"),
                                 np.column_stack([np.arange(1, x.size + 1), dg.cumulative_quantile_data(x)])[:: max(1, x.size // 500)]),
    }
    if report is not None and report.ks_trajectory is not None:
        plots["ks_trajectory"] = (("t", "p"), report.ks_trajectory)
    return ExperimentResult(t0.param_names, [t.states for t in traces], est, ses, acc, diag, plots, dict(extra))


# Chapter 2: random variable generation and accept-reject.


@experiment("ch2.uniform-stream", 2, "Uniform stream mean and variance", 10**4)
def _uniform(ctx):
    r = _sample_result("u", ctx.stream().uniform(ctx.n), 0.5)
    r.estimates["variance"] = float(np.var(r.chains[0], ddof=1))
    return r


@experiment("ch2.exp-inverse", 2, "Exponential draws by cdf inversion", 10**4, rate=1.0)
def _exp_inverse(ctx):
    rate = ctx.params["rate"]
    return _sample_result("x", ctx.stream().exponential(ctx.n, rate), 1 / rate)


@experiment("ch2.box-muller", 2, "Box-Muller normal pairs", 10**4)
def _box_muller(ctx):
    x1, x2 = dist.box_muller_pair(ctx.stream(), ctx.n)
    r = _sample_result("x", x1, 0.0)
    r.estimates["corr_pair"] = float(np.corrcoef(x1, x2)[0, 1])
    r.estimates["variance"] = float(np.var(x1, ddof=1))
    return r


@experiment("ch2.clt12-normal", 2, "Sum of twelve uniforms as a normal approximation", 10**4, threshold=3.0)
def _clt12(ctx):
    x = dist.clt12_normal(ctx.stream(), ctx.n)
    r = _sample_result("x", x, 0.0)
    r.estimates["tail"] = float(np.mean(x > ctx.params["threshold"]))
    r.extra["normal_tail"] = float(dist.normal_cdf_quantile(-ctx.params["threshold"]))
    return r


@experiment("ch2.pois-window", 2, "Poisson by inversion over a window around the mean", 10**4, lam=100.0)
def _pois_window(ctx):
    lam = ctx.params["lam"]
    r = _sample_result("x", dist.pois1_window_sample(lam, ctx.stream(), ctx.n), lam)
    exact = dist.discrete_inverse_sample(DistributionSpec("poisson", (lam,)), ctx.stream(1), ctx.n)
    r.estimates["inversion_mean"] = float(exact.mean())
    return r


@experiment("ch2.pois-waiting", 2, "Poisson by exponential waiting times", 10**4, lam=5.0)
def _pois_waiting(ctx):
    x = dist.poisson_waiting_sample(ctx.params["lam"], ctx.stream(), ctx.n) - dist.POIS2_OFFSET
    return _sample_result("x", x, ctx.params["lam"])


@experiment("ch2.truncnorm", 2, "Normal truncated far in the tail", 10**4, mu=0.0, sigma=1.0, lo=40.0)
def _truncnorm(ctx):
    p = ctx.params
    return _sample_result("x", dist.truncated_normal_sample(p["mu"], p["sigma"], p["lo"], math.inf, ctx.stream(), ctx.n))


@experiment("ch2.noncentral-chisq", 2, "Noncentral chi-square as a Poisson mixture", 10**4, df=5.0, nc=2.0, method="poisson_mixture")
def _ncchisq(ctx):
    p = ctx.params
    x = dist.noncentral_chisq_sample(p["df"], p["nc"], ctx.stream(), p["method"], ctx.n)
    return _sample_result("x", x, p["df"] + p["nc"])


@experiment("ch2.dirichlet", 2, "Dirichlet draws from normalised gammas", 10**4, a1=1.0, a2=2.0, a3=3.0)
def _dirichlet(ctx):
    a = np.array([ctx.params[k] for k in ("a1", "a2", "a3")])
    x = dist.dirichlet_sample(a, ctx.stream(), ctx.n)
    est = {f"p{i + 1}": float(v) for i, v in enumerate(x.mean(axis=0))}
    return ExperimentResult(("p1", "p2", "p3"), [x], est, extra={"exact": (a / a.sum()).tolist()},
                            plotdata={"histogram": histogram(x[:, 0])})


@experiment("ch2.ar-beta-uniform", 2, "Accept-reject for Be(2.7, 6.3) from uniform proposals", 10**4)
def _ar_beta_uniform(ctx):
    f = DistributionSpec("beta", (2.7, 6.3))
    env = ar.Envelope(f.log_density, DistributionSpec("uniform", (0.0, 1.0)), ar.beta_envelope(2.7, 6.3, 1.0, 1.0))
    res = ar.ar_sample(env, ctx.n, ctx.stream())
    r = _sample_result("x", res.accepted, 0.3)
    r.acceptance = {"accept_reject": res.acceptance_rate}
    r.extra["bound_rate"] = math.exp(-env.log_M)
    return r


@experiment("ch2.ar-beta-optimal", 2, "Accept-reject for Be(2.7, 6.3) from the best Be(2, 6) proposal", 10**4)
def _ar_beta_opt(ctx):
    f = DistributionSpec("beta", (2.7, 6.3))
    env = ar.Envelope(f.log_density, DistributionSpec("beta", (2.0, 6.0)), ar.beta_envelope(2.7, 6.3, 2.0, 6.0))
    res = ar.ar_sample(env, ctx.n, ctx.stream())
    r = _sample_result("x", res.accepted, 0.3)
    r.acceptance = {"accept_reject": res.acceptance_rate}
    r.extra["bound_rate"] = math.exp(-env.log_M)
    return r


@experiment("ch2.ar-gamma-capped", 2, "Ga(4.3, 6.2) from Ga(4, 7) proposals with unit bound", 5000)
def _ar_gamma_capped(ctx):
    f = DistributionSpec("gamma", (4.3, 6.2))
    env = ar.Envelope(f.log_density, DistributionSpec("gamma", (4.0, 7.0)), 0.0, capped=True)
    g = env.proposal.sample(ctx.stream(), ctx.n)
    u = ctx.stream(1).uniform(ctx.n)
    ok = np.log(u) < np.minimum(env.log_ratio(g), 0.0)
    r = _sample_result("x", g[ok])
    r.acceptance = {"accept_reject": float(ok.mean())}
    r.extra["overlap"] = float(quad.quad(lambda x: min(float(np.exp(f.log_density(x))), float(np.exp(env.proposal.log_density(x)))), 0, 10, limit=200)[0])
    return r


@experiment("ch2.ar-gamma-envelope", 2, "Gamma target from the optimal gamma proposal", 10**4, alpha=4.3, a=4.0)
def _ar_gamma_env(ctx):
    al, a = ctx.params["alpha"], ctx.params["a"]
    opt = ar.gamma_envelope(al, a)
    env = ar.Envelope(DistributionSpec("gamma", (al, 1.0)).log_density, DistributionSpec("gamma", (a, opt.b_opt)), opt.log_M)
    res = ar.ar_sample(env, ctx.n, ctx.stream())
    r = _sample_result("x", res.accepted, al)
    r.acceptance = {"accept_reject": res.acceptance_rate}
    r.extra.update(b_opt=opt.b_opt, bound_rate=math.exp(-opt.log_M))
    return r


@experiment("ch2.ar-normal-laplace", 2, "Normal target from a Laplace proposal", 10**4, alpha=1.0)
def _ar_normal_laplace(ctx):
    al = ctx.params["alpha"]
    lm = ar.laplace_normal_envelope(al)
    env = ar.Envelope(DistributionSpec("normal", (0.0, 1.0)).log_density, DistributionSpec("double_exponential", (al,)), lm)
    res = ar.ar_sample(env, ctx.n, ctx.stream())
    r = _sample_result("x", res.accepted, 0.0)
    r.acceptance = {"accept_reject": res.acceptance_rate}
    r.extra["bound_rate"] = math.exp(-lm)
    return r


@experiment("ch2.posterior-ar", 2, "Posterior draws by accept-reject from a Cauchy prior", 10**4, x=2.5)
def _posterior_ar(ctx):
    x = ctx.params["x"]
    res = ar.posterior_ar(lambda t: -0.5 * (x - np.asarray(t)) ** 2, DistributionSpec("cauchy", (0.0, 1.0)), ctx.n, ctx.stream(), (x - 10, x + 10))
    r = _sample_result("theta", res.result.accepted)
    r.acceptance = {"accept_reject": res.result.acceptance_rate}
    r.extra["theta_hat"] = res.theta_hat
    return r


@experiment("ch2.recycle", 2, "Recycling rejected proposals in accept-reject", 200, reps=200, m=5)
def _recycle(ctx):
    f = DistributionSpec("beta", (2.7, 6.3))
    env = ar.Envelope(f.log_density, DistributionSpec("uniform", (0.0, 1.0)), ar.beta_envelope(2.7, 6.3, 1.0, 1.0))
    m = ctx.params["m"]

    def one(k):
        return ar.recycled_estimates(env, lambda y: y, m, ctx.stream(k), max_n=60)

    vals = np.array(ctx.map(one, ctx.reps))
    return ExperimentResult(("plain", "recycled"), [vals], {"plain": float(vals[:, 0].mean()), "recycled": float(vals[:, 1].mean())},
                            extra={"var_plain": float(np.var(vals[:, 0], ddof=1)), "var_recycled": float(np.var(vals[:, 1], ddof=1)), "exact": 0.3})


# Chapter 3: Monte Carlo integration and importance sampling.


def _tail(kind: str, threshold: float):
    def runner(ctx):
        est, ws = mc.tail_probability_shifted(kind, threshold, ctx.n, ctx.stream())
        rep = mc.divergence_flag(ws)
        r = _running_result(est, mc.tail_probability_exact(kind, threshold))
        r.extra.update(ess=ws.ess, divergence_flag=rep.flag, max_normalized_weight=rep.max_normalized_weight)
        return r

    return runner


for _kind, _thr, _id, _desc in (
    ("normal", 4.5, "ch3.tail-normal-4.5", "P(Z > 4.5) by importance sampling from a shifted exponential"),
    ("normal", 20.0, "ch3.tail-normal-20", "P(Z > 20) by importance sampling from a shifted exponential"),
    ("normal_uniform", 20.0, "ch3.tail-normal-uniform-20", "P(Z > 20) by a uniform change of variable"),
    ("chisq3", 25.0, "ch3.tail-chisq-25", "P(chi2_3 > 25) by importance sampling"),
    ("t5", 50.0, "ch3.tail-t5-50", "P(t_5 > 50) from a shifted exponential (infinite variance)"),
):
    experiment(_id, 3, _desc, 10**4)(_tail(_kind, _thr))


@experiment("ch3.tail-normal-4.5-naive", 3, "P(Z > 4.5) by naive sampling and its required size", 10**4)
def _tail_naive(ctx):
    hit = (ctx.stream().normal(ctx.n) > 4.5).astype(float)
    est = mc.running_mean(hit)
    exact = mc.tail_probability_exact("normal", 4.5)
    r = _running_result(est, exact)
    r.extra["required_size_3_digits_relative"] = mc.required_sample_size(math.sqrt(exact * (1 - exact)), tolerance=1e-3 * exact)
    return r


@experiment("ch3.is-fitz", 3, "Importance weights of three proposals for exp(-sqrt x) sin^2 x", 10**4, form="intended")
def _fitz(ctx):
    names = ("double_exponential", "cauchy2", "normal")
    ws = [mc.fitz_weights(p, ctx.n, ctx.stream(i), ctx.params["form"]) for i, p in enumerate(names)]
    w = np.column_stack([s.weights() for s in ws])
    est = {f"ess_{p}": s.ess for p, s in zip(names, ws)}
    flags = {f"divergence_{p}": mc.divergence_flag(s).flag for p, s in zip(names, ws)}
    return ExperimentResult(tuple(f"w_{p}" for p in names), [w], est, extra=flags,
                            plotdata={"histogram": histogram(np.log(ws[0].weights()[ws[0].weights() > 0]))})


def _ratio(sampler: str):
    def runner(ctx):
        x = ctx.params["x"]
        res = mc.posterior_ratio(x, sampler, ctx.n, ctx.stream())
        num = quad.quad(lambda t: t * math.exp(-0.5 * (x - t) ** 2) / (1 + t * t), -np.inf, np.inf)[0]
        den = quad.quad(lambda t: math.exp(-0.5 * (x - t) ** 2) / (1 + t * t), -np.inf, np.inf)[0]
        r = _running_result(res.ratio, num / den)
        r.extra["required_size"] = res.required_size(3)
        return r

    return runner


experiment("ch3.posterior-ratio-cauchy", 3, "Posterior mean under a Cauchy prior, drawing from the prior", 10**4, x=4.0)(_ratio("cauchy_prior_normal_lik"))
experiment("ch3.posterior-ratio-normal", 3, "Posterior mean under a Cauchy prior, drawing from the likelihood", 10**4, x=4.0)(_ratio("normal_prior_cauchy_lik"))


@experiment("ch3.swiss-evidence", 3, "Marginal likelihood of the swiss regression", 1, datasets=("swiss",))
def _swiss(ctx):
    d = ds.external("swiss")
    y = np.log(d["Fertility"])
    X = np.column_stack([d[c] for c in ("Agriculture", "Examination", "Education", "Catholic", "Infant.Mortality")])
    lg = mc.log_evidence_gprior(y, X)
    lt = mc.log_t_projection_density(y, X, y.size - 1)
    return ExperimentResult(("log_evidence",), [np.array([[lg]])], {"log_evidence_gprior": lg, "log_t_density": lt})


def _normal_model(x: float):
    post_mean, post_var = x / 2, 0.5
    exact = -0.25 * x * x - 0.5 * math.log(4 * math.pi)
    ll = lambda t: -0.5 * (x - np.asarray(t)) ** 2 - 0.5 * math.log(2 * math.pi)
    lp = lambda t: -0.5 * np.asarray(t) ** 2 - 0.5 * math.log(2 * math.pi)
    return post_mean, post_var, exact, ll, lp


@experiment("ch3.evidence-normal", 3, "Evidence of a normal mean model by prior sampling and harmonic means", 10**4, x=1.5)
def _evidence(ctx):
    x = ctx.params["x"]
    pm, pv, exact, ll, lp = _normal_model(x)
    prior = ctx.stream(0).normal(ctx.n)
    post = pm + math.sqrt(pv) * ctx.stream(1).normal(ctx.n)
    tau = DistributionSpec("normal", (pm, math.sqrt(pv) / 2))
    e_prior = mc.prior_sampling_evidence(ll(prior))
    e_hm = mc.harmonic_mean_evidence(ll(post), lp(post), tau.log_density(post))
    est = mc.running_mean(np.exp(ll(prior)))
    r = _running_result(est, math.exp(exact))
    r.estimates.update(prior_sampling=e_prior, harmonic_mean=e_hm)
    return r


@experiment("ch3.bridge", 3, "Bridge sampling for a ratio of normalising constants", 10**4, scale=2.0)
def _bridge(ctx):
    s = ctx.params["scale"]
    l1 = lambda z: -0.5 * np.asarray(z) ** 2
    l2 = lambda z: -0.5 * (np.asarray(z) / s) ** 2
    d1 = ctx.stream(0).normal(ctx.n)
    d2 = s * ctx.stream(1).normal(ctx.n)
    geo = lambda z: -0.5 * (l1(z) + l2(z))
    b1 = mc.bridge_ratio(l1, l2, d1, d2)
    b2 = mc.bridge_ratio(l1, l2, d1, d2, geo)
    dr = mc.direct_ratio(l1, l2, d2)
    return ExperimentResult(("d1", "d2"), [np.column_stack([d1, d2])], {"bridge_unit": b1, "bridge_geometric": b2, "direct": dr}, extra={"exact": 1 / s})


@experiment("ch3.chib-weights", 3, "Evidence weights from a kernel estimate of the posterior", 2000, x=1.5)
def _chib(ctx):
    x = ctx.params["x"]
    pm, pv, exact, ll, lp = _normal_model(x)
    tr = mcmc.mh_chain(lambda t: float(ll(t) + lp(t)), mcmc.ProposalKernel("random_walk", DistributionSpec("normal", (0.0, 1.0))), pm, ctx.n, ctx.stream())
    ch = mc.chib_weight_trace(tr.column("x"), ll, lp)
    r = _running_result(ch.running, math.exp(exact))
    r.acceptance = {tr.kernel_name: tr.acceptance_rate}
    return r


# Chapter 4: controlling and accelerating convergence.


@experiment("ch4.antithetic", 4, "Antithetic pairs for E exp(U)", 10**4)
def _antithetic(ctx):
    pe = variance.antithetic_estimate(np.exp, ctx.n, ctx.stream())
    chain = np.column_stack([pe.plain.means[1::2], pe.reduced.means])
    return ExperimentResult(("plain", "antithetic"), [chain], {"plain": pe.plain.estimate, "antithetic": pe.reduced.estimate},
                            {"plain": pe.plain.se, "antithetic": pe.reduced.se}, extra={"variance_ratio": pe.variance_ratio, "exact": math.e - 1},
                            plotdata={"running_mean": running_plot(pe.reduced)})


@experiment("ch4.control-variate", 4, "Control variate U for E exp(U)", 10**4)
def _control(ctx):
    u = ctx.stream().uniform(ctx.n)
    res = variance.control_variate(np.exp(u), u, 0.5)
    return ExperimentResult(("u",), [u[:, None]], {"plain": res.plain, "controlled": res.estimate},
                            extra={"beta": res.beta, "variance_ratio": res.variance_ratio, "exact": math.e - 1})


def _rb(model: str, a: float, b: float):
    def runner(ctx):
        pe = variance.rb_mixture_compare(model, a, b, ctx.n, ctx.reps, ctx.stream())
        vp, vr = pe.replicate_variances()
        chain = np.column_stack([pe.replicates["plain"], pe.replicates["reduced"]])
        return ExperimentResult(("plain", "rao_blackwell"), [chain],
                                {"plain": float(chain[:, 0].mean()), "rao_blackwell": float(chain[:, 1].mean())},
                                extra={"var_plain": vp, "var_rao_blackwell": vr, "exact": variance.rb_target(model, a, b)},
                                plotdata={"running_mean": running_plot(pe.reduced)})

    return runner


experiment("ch4.rb-poisson-gamma", 4, "Rao-Blackwellised Poisson-gamma mean", 1000, reps=1000)(_rb("poisson_gamma", 3.0, 2.0))
experiment("ch4.rb-normal-gamma", 4, "Rao-Blackwellised second moment of a normal scale mixture", 1000, reps=1000)(_rb("normal_gamma_tsq", 3.0, 2.0))
experiment("ch4.rb-beta-binomial", 4, "Rao-Blackwellised beta-binomial mean", 1000, reps=1000)(_rb("beta_binomial", 2.0, 3.0))


@experiment("ch4.rb-exp-negsquare", 4, "Conditional expectation of exp(-X^2) in a normal scale mixture", 10**4, mu=1.0, sigma2=1.0, shape=3.0)
def _rb_expsq(ctx):
    p = ctx.params
    g = ctx.stream().generator
    y = g.standard_gamma(p["shape"], ctx.n) / p["shape"]
    xs = p["mu"] + np.sqrt(p["sigma2"] / y) * ctx.stream(1).normal(ctx.n)
    plain = mc.running_mean(np.exp(-xs**2))
    rb = mc.running_mean(variance.rb_exp_negsquare(p["mu"], p["sigma2"], y))
    chain = np.column_stack([plain.means, rb.means])
    return ExperimentResult(("plain", "rao_blackwell"), [chain], {"plain": plain.estimate, "rao_blackwell": rb.estimate},
                            {"plain": plain.se, "rao_blackwell": rb.se}, plotdata={"running_mean": running_plot(rb)})


@experiment("ch4.running-mean-cov", 4, "Covariance of running means at two horizons", 100, reps=10**4, k=10, sigma2=1.0)
def _rmcov(ctx):
    k = ctx.params["k"]
    res = variance.running_mean_cov(k, ctx.n, ctx.params["sigma2"], ctx.reps, ctx.stream())
    return ExperimentResult(("covariance",), [np.array([[res.empirical]])], {"covariance": res.empirical}, {"covariance": res.jackknife_se},
                            extra={"exact": res.analytic})


@experiment("ch4.bootstrap-ci", 4, "Percentile bootstrap interval for a mean", 1000, sample_size=100)
def _bootstrap(ctx):
    data = ctx.stream(0).exponential(ctx.params["sample_size"])
    lo, hi, vals = variance.bootstrap_ci(data, np.mean, ctx.n, ctx.stream(1))
    return ExperimentResult(("mean",), [vals[:, None]], {"lower": lo, "upper": hi, "sample_mean": float(data.mean())},
                            plotdata={"histogram": histogram(vals)})


@experiment("ch4.bootstrap-bands", 4, "Bootstrap bands along an AR(1) running mean", 5000, rho=0.5)
def _bands(ctx):
    tr = mcmc.ar1_chain(ctx.params["rho"], ctx.n, ctx.stream(0))
    cps = np.linspace(100, ctx.n, 50).astype(int)
    b = variance.bootstrap_variance_bands(tr, cps, ctx.stream(1))
    rows = np.column_stack([cps, b.center, b.lower, b.upper])
    return ExperimentResult(("x",), [tr.states], {"mean": float(b.center[-1])},
                            plotdata={"bands": (("iter", "mean", "lower", "upper"), rows)})


@experiment("ch4.thinning", 4, "Variance of full and thinned AR(1) averages", 1000, reps=500, rho=0.9, k=10)
def _thinning(ctx):
    rho, k = ctx.params["rho"], ctx.params["k"]
    chains = mcmc.ar1_chains(rho, ctx.n, ctx.reps, ctx.stream())
    res = variance.batch_thin_compare(chains, lambda x: x, k)
    means = np.array([[c.states.mean(), c.states[k - 1 :: k].mean()] for c in chains])
    return ExperimentResult(("full", "thinned"), [means], {"var_full": res.var_full, "var_thinned": res.var_thinned})


# Chapter 5: stochastic optimisation and EM.


def _mixture(ctx):
    return optim.MixtureModel.simulate(ctx.stream(10**6))


@experiment("ch5.sa-mixture", 5, "Simulated annealing on a two-mode mixture likelihood", 2000, reps=100)
def _sa(ctx):
    model = _mixture(ctx)
    rows, recovery, finals = [], {}, []
    names = list(optim.SA_SCHEDULES)

    def one(i):
        s = ctx.stream(i)
        start = -2 + 7 * s.uniform(2 * ctx.reps).reshape(ctx.reps, 2)
        return optim.simulated_annealing(lambda m: optim.mixture_loglik(model, m), start, optim.SA_SCHEDULES[names[i]], s,
                                         max_iter=ctx.n, bounds=(-2.0, 5.0))

    paths = ctx.map(one, len(names))
    for name, p in zip(names, paths):
        final = p.path[-1]
        modes = [optim.attribute_mode(f) for f in final]
        recovery[name] = 100.0 * modes.count("main") / len(modes)
        finals.append(final)
        rows.append(p.path[:, 0, :])
    est = {f"main_mode_pct[{k}]": v for k, v in recovery.items()}
    return ExperimentResult(("mu1", "mu2"), rows, est, extra={"main_mode_recovery_pct": recovery, "schedules": names})


@experiment("ch5.sg-mixture", 5, "Stochastic gradient search on the mixture likelihood", 10**4)
def _sg(ctx):
    model = _mixture(ctx)
    names = list(optim.SG_SCHEDULES)
    f = lambda m: optim.mixture_loglik(model, m)

    def one(i):
        try:
            return optim.stochastic_gradient(f, (1.0, 1.0), optim.SG_SCHEDULES[names[i]], ctx.stream(i), max_iter=ctx.n)
        except DivergenceError as e:
            return e

    runs = ctx.map(one, len(names))
    est, iters, diverged, chains = {}, {}, [], []
    for name, p in zip(names, runs):
        if isinstance(p, DivergenceError):
            diverged.append(name)
            chains.append(p.partial)
            continue
        est[f"mu1[{name}]"], est[f"mu2[{name}]"] = (float(v) for v in p.final)
        iters[name] = p.iterations
        chains.append(p.path)
    return ExperimentResult(("mu1", "mu2"), chains, est, extra={"iterations": iters, "diverged": diverged})


@experiment("ch5.domain-sampler", 5, "Uniform sampling over a constrained domain", 10**5)
def _domain(ctx):
    s = optim.uniform_over_domain(ctx.n, ctx.stream())
    return ExperimentResult(("x", "y", "inside"), [np.column_stack([s.candidates, s.inside])], {"acceptance": s.acceptance})


@experiment("ch5.em-linkage", 5, "EM for the four-cell linkage model", 1, theta0=0.1)
def _em_link(ctx):
    p = optim.em_linkage(ds.LINKAGE_COUNTS, ctx.params["theta0"])
    return ExperimentResult(("theta", "loglik"), [np.column_stack([p.path, p.loglik])], {"theta": float(p.path[-1])},
                            extra={"root": (3 + math.sqrt(9 + 4 * 92 * 26)) / (2 * 92)})


@experiment("ch5.mcem-linkage", 5, "Monte Carlo EM envelope for the linkage model", 100, reps=500, theta0=0.1, n_iter=10)
def _mcem(ctx):
    env = optim.mcem_linkage(ds.LINKAGE_COUNTS, ctx.params["theta0"], ctx.n, ctx.reps, ctx.stream(), ctx.params["n_iter"])
    paths = np.asarray(env.paths)
    lo, hi = paths.min(axis=0), paths.max(axis=0)
    return ExperimentResult(("theta",), [paths[i][:, None] for i in range(min(paths.shape[0], 20))], {"theta_final_mean": float(paths[:, -1].mean())},
                            plotdata={"envelope": (("iter", "lower", "upper"), np.column_stack([np.arange(lo.size), lo, hi]))})


@experiment("ch5.em-censored", 5, "EM for right-censored normal data", 1, theta0=0.0)
def _em_cens(ctx):
    p = optim.em_censored_normal(ds.CENSORED_SAMPLE, ds.CENSORING_POINT, ds.CENSORED_TOTAL, ctx.params["theta0"])
    return ExperimentResult(("theta", "loglik"), [np.column_stack([p.path, p.loglik])], {"theta": float(p.path[-1])})


@experiment("ch5.em-exp-mixture", 5, "EM for a two-component exponential mixture", 1, variant="corrected")
def _em_exp(ctx):
    x = ds.EXP_MIXTURE_SAMPLE
    m = float(x.mean())
    start = (0.5, 2.0 / m, 0.5 / m)
    p = optim.em_exp_mixture(x, start, ctx.params["variant"])
    path = np.asarray(p.path)
    return ExperimentResult(("p", "lambda", "mu"), [path], dict(zip(("p", "lambda", "mu"), (float(v) for v in path[-1]))),
                            extra={"loglik": np.asarray(p.loglik).tolist()[-1]})


@experiment("ch5.bisection", 5, "Bisection root finding", 1, lo=0.0, up=10.0)
def _bisect(ctx):
    h = lambda x: x * x + 3 * x - 18
    r = optim.find_root_bisection(h, ctx.params["lo"], ctx.params["up"])
    return ExperimentResult(("root",), [np.array([[r.root]])], {"root": r.root})


# Chapter 6: Metropolis-Hastings.


@experiment("ch6.challenger", 6, "Component-wise MH for the O-ring logistic model", 10**5, datasets=("challenger",))
def _challenger(ctx):
    d = ds.challenger()
    tr = mcmc.challenger_mh(d["temperature"], d["failures"], ctx.n, ctx.stream())
    preds = {f"failure_prob[{t}]": mcmc.failure_probability(tr, t) for t in (50, 60, 70)}
    r = _chain_result(tr, "beta", preds, mle=tr.extras["mle"].tolist())
    r.acceptance = {"alpha": float(tr.acceptance_rate[0]), "beta": float(tr.acceptance_rate[1])}
    r.extra["unique_rate"] = tr.unique_rate().tolist()
    return r


def _beta_mh(params):
    def runner(ctx):
        f = DistributionSpec("beta", (2.7, 6.3))
        tr = mcmc.mh_chain(f.log_density, mcmc.ProposalKernel("independent", DistributionSpec("beta", params)), ctx.stream(1).uniform(), ctx.n, ctx.stream())
        r = _chain_result(tr, "x")
        r.extra["unique_rate"] = float(tr.unique_rate()[0])
        return r

    return runner


experiment("ch6.beta-mh-uniform", 6, "Independent MH for Be(2.7, 6.3) from uniform proposals", 5000)(_beta_mh((1.0, 1.0)))
experiment("ch6.beta-mh-be2060", 6, "Independent MH for Be(2.7, 6.3) from Be(20, 60) proposals", 5000)(_beta_mh((20.0, 60.0)))


@experiment("ch6.ar1", 6, "Gaussian AR(1) chain", 10**4, rho=0.9)
def _ar1(ctx):
    tr = mcmc.ar1_chain(ctx.params["rho"], ctx.n, ctx.stream())
    r = _chain_result(tr, "x")
    r.extra["stationary_variance"] = 1 / (1 - ctx.params["rho"] ** 2)
    return r


def _scan(family: str, lo: float, hi: float):
    def runner(ctx):
        grid = np.linspace(lo, hi, 50)
        c = mcmc.acceptance_scan(DistributionSpec("normal", (0.0, 1.0)), family, grid, ctx.n, ctx.stream())
        rows = np.column_stack([grid, c.rates])
        return ExperimentResult(("grid", "rate"), [rows], {"best_grid_value": float(grid[np.argmax(c.rates)])},
                                acceptance={family: c.rates.tolist()}, plotdata={"acceptance_curve": (("grid", "rate"), rows)})

    return runner


experiment("ch6.scan-laplace-indep", 6, "Acceptance of independent Laplace proposals against their rate", 5000)(_scan("laplace_indep", 1.0, 10.0))
experiment("ch6.scan-normal-indep", 6, "Acceptance of independent normal proposals against their variance", 5000)(_scan("normal_indep", 0.01, 10.0))
experiment("ch6.scan-laplace-rw", 6, "Acceptance of Laplace random walks against their rate", 5000)(_scan("laplace_rw", 0.1, 10.0))


@experiment("ch6.braking", 6, "Random-walk MH for the quadratic stopping-distance regression", 1000, datasets=("cars",))
def _braking(ctx):
    d = ds.cars()
    tr = mcmc.braking_mh(d["x"], d["y"], ctx.n, ctx.stream())
    r = _chain_result(tr, "b1")
    for name in ("b1", "b2", "b3"):
        r.extra[f"ci95[{name}]"] = list(mcmc.credible_interval(tr, name))
    a = tr.column("b1")
    r.extra["lag10_autocorrelation"] = float(dg.autocorrelation(a, 10)[10])
    return r


# Chapter 7: Gibbs samplers.


@experiment("ch7.bivariate-normal", 7, "Two-stage Gibbs sampler for a bivariate normal", 10**4, rho=0.8, var_x=50.0, var_y=100.0)
def _bvn(ctx):
    p = ctx.params
    tr = mcmc.gibbs_bivariate_normal(p["rho"], ctx.n, ctx.stream(), math.sqrt(p["var_x"]), math.sqrt(p["var_y"]))
    X, Y = tr.states.T
    return _chain_result(tr, "X", {"cov_sum_diff": float(np.cov(X + Y, X - Y)[0, 1])})


@experiment("ch7.equicorrelated", 7, "Gibbs sampler for an equicorrelated normal", 10**4, p=5, r=0.25)
def _equi(ctx):
    tr = mcmc.gibbs_equicorrelated(ctx.params["p"], ctx.params["r"], ctx.n, ctx.stream())
    return _chain_result(tr, "x1")


@experiment("ch7.equicorrelated-constrained", 7, "Hybrid Gibbs sampler under a quadratic constraint", 10**4, p=5, r=0.25, m=2)
def _equi_c(ctx):
    tr = mcmc.gibbs_equicorrelated(ctx.params["p"], ctx.params["r"], ctx.n, ctx.stream(), constrained=True, m=ctx.params["m"])
    return _chain_result(tr, "x1")


@experiment("ch7.censored-gibbs", 7, "Gibbs sampler for right-censored normal data", 10**4)
def _cens_gibbs(ctx):
    tr = mcmc.gibbs_censored_normal(ds.CENSORED_SAMPLE, ds.CENSORED_TOTAL, ds.CENSORING_POINT, ctx.n, ctx.stream())
    rb = tr.extras["rb"][tr.burn_in :]
    return _chain_result(tr, "theta", {"theta_rao_blackwell": float(np.mean(rb))})


@experiment("ch7.blood-groups", 7, "Gibbs sampler for ABO allele frequencies", 5000)
def _blood(ctx):
    return _chain_result(mcmc.gibbs_blood_groups(ds.BLOOD_COUNTS, ctx.n, ctx.stream()), "pA")


@experiment("ch7.truncated-poisson", 7, "Gibbs sampler for Poisson counts censored at four", 10**4)
def _tpois(ctx):
    tr = mcmc.gibbs_truncated_poisson(**ds.TRUNCATED_POISSON, n=ctx.n, stream=ctx.stream())
    r = _chain_result(tr, "lambda")
    r.extra.update(var_lambda=float(np.var(tr.column("lambda"))), var_rb=float(np.var(tr.column("rb"))))
    return r


@experiment("ch7.truncexp-pair", 7, "Gibbs sampler for exp(-xy) on a bounded square", 10**4, B=10.0)
def _texp(ctx):
    return _chain_result(mcmc.gibbs_truncexp_pair(ctx.params["B"], ctx.n, ctx.stream()), "X")


@experiment("ch7.improper-pair", 7, "Gibbs sampler for exp(-xy) on the quadrant (no stationary law)", 10**4)
def _improper(ctx):
    tr = mcmc.gibbs_truncexp_pair(None, ctx.n, ctx.stream())
    r = _chain_result(tr, "X")
    r.extra["nonstationary"] = dg.nonstationary(tr.column("X"))
    return r


@experiment("ch7.slice-expsqrt", 7, "Slice sampler for exp(-sqrt x)/2", 5000)
def _slice(ctx):
    tr = mcmc.slice_expsqrt(ctx.n, ctx.stream(0))
    direct = mcmc.expsqrt_direct(ctx.n, ctx.stream(1))
    d, p = dg.ks_two_sample(tr.column("X")[::5], direct[: ctx.n // 5])
    return _chain_result(tr, "X", {"direct_mean": float(direct.mean())}, ks_direct_p=p, ks_direct_D=d)


# Chapter 8: convergence monitoring.


@experiment("ch8.baseball", 8, "Gibbs sampler for the baseball hierarchical model", 10**4)
def _baseball(ctx):
    tr = mcmc.gibbs_baseball(ds.BASEBALL, ctx.n, ctx.stream())
    y = ds.BASEBALL
    lo, hi = 1e-4, 5.0
    z = quad.quad(lambda a: math.exp(float(mcmc.baseball_alpha_logpdf(a, y)) - _BB_SHIFT), lo, hi, limit=400, points=[0.05, 0.2, 0.5])[0]
    m = quad.quad(lambda a: a * math.exp(float(mcmc.baseball_alpha_logpdf(a, y)) - _BB_SHIFT), lo, hi, limit=400, points=[0.05, 0.2, 0.5])[0]
    return _chain_result(tr, "alpha", extra_alpha_mean=m / z)


# Log-density offset keeping the baseball quadrature in floating range.
_BB_SHIFT = float(mcmc.baseball_alpha_logpdf(0.2, ds.BASEBALL))


def _beta_kernel(variant: str):
    def runner(ctx):
        tr = mcmc.beta_kernel_chain(ctx.params["alpha"], variant, ctx.n, ctx.stream())
        return _chain_result(tr, "x", exact_mean=ctx.params["alpha"] / (ctx.params["alpha"] + 1))

    return runner


experiment("ch8.beta-kernel", 8, "Be(alpha, 1) chain moving with probability x", 10**4, alpha=0.2)(_beta_kernel("bernoulli_move"))
experiment("ch8.beta-kernel-ratio", 8, "Be(alpha, 1) chain with the MH ratio move", 10**4, alpha=0.2)(_beta_kernel("ratio_move"))


@experiment("ch8.pima-probit", 8, "Five MH chains for a scaled probit model of the Pima data", 10**4, datasets=("pima",), chains=5)
def _pima(ctx):
    d = ds.external("pima")
    data = mcmc.PimaData(d["ped"], d["type"])
    traces = mcmc.pima_probit_mh(data, ctx.n, ctx.params["chains"], ctx.stream())
    return _chain_result(traces, "beta")


@experiment("ch8.ks-thin", 8, "Half-versus-half KS trajectory of an AR(1) chain", 10**4, rho=0.9, thin=10)
def _ks_thin(ctx):
    tr = mcmc.ar1_chain(ctx.params["rho"], ctx.n, ctx.stream())
    traj = dg.ks_half_trajectory(tr, ctx.params["thin"])
    r = _chain_result(tr, "x")
    r.plotdata["ks_trajectory"] = (("t", "p"), traj)
    r.estimates["final_ks_p"] = float(traj[-1, 1])
    return r


@experiment("ch8.ess-ar1", 8, "Effective sample size of AR(1) chains against the analytic value", 10**4, rho=0.9)
def _ess_ar1(ctx):
    rho = ctx.params["rho"]
    tr = mcmc.ar1_chain(rho, ctx.n, ctx.stream())
    r = _chain_result(tr, "x")
    r.extra["ess_ratio_exact"] = (1 - rho) / (1 + rho)
    return r


@experiment("ch8.psrf-iid", 8, "PSRF of independent normal chains", 10**4, chains=5)
def _psrf_iid(ctx):
    chains = ctx.map(lambda c: ctx.stream(c).normal(ctx.n), ctx.params["chains"])
    psrf = dg.gelman_rubin_psrf(chains)
    return ExperimentResult(("x",), [c[:, None] for c in chains], {"psrf": psrf})
