import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from carlo import datasets as ds
from carlo import mcmc
from carlo.diagnostics import ess_autocorr, ks_two_sample
from carlo.distributions import DistributionSpec
from carlo.errors import ConfigurationError, DomainError, SeparationError
from carlo.rng import RngStream

from conftest import data_file, require_data


def grid_cdf_sampler(logpdf, lo, hi, n_grid, stream, n):
    """Inverse-cdf draws from an unnormalised log density tabulated on a grid."""
    x = np.linspace(lo, hi, n_grid)
    lp = logpdf(x)
    p = np.exp(lp - lp.max())
    c = np.concatenate([[0.0], np.cumsum((p[1:] + p[:-1]) / 2 * np.diff(x))])
    return np.interp(stream.uniform(n) * c[-1], c, x)


def stationary_acceptance(f, g, m=3000):
    """``int int min(f(x) g(y), f(y) g(x))`` on a midpoint grid of (0, 1)^2."""
    x = (np.arange(m) + 0.5) / m
    fx, gx = f(x), g(x)
    return float(np.minimum(np.outer(fx, gx), np.outer(gx, fx)).sum() / m**2)


class TestTrace:
    def test_states_are_read_only(self, stream):
        tr = mcmc.ar1_chain(0.5, 100, stream)
        with pytest.raises(ValueError):
            tr.states[0, 0] = 1.0

    def test_default_burn_in(self, stream):
        assert mcmc.ar1_chain(0.5, 250, stream).burn_in == 25

    def test_shape_checks(self):
        with pytest.raises(DomainError):
            mcmc.Trace(np.zeros((5, 2)), np.ones(5), np.zeros(5), "k", ("a",), 1, 0)
        with pytest.raises(DomainError):
            mcmc.Trace(np.zeros(5), np.ones(4), np.zeros(5), "k", ("a",), 1, 0)

    def test_acceptance_excludes_initial_state(self):
        flags = np.array([True, False, False, True, True])
        tr = mcmc.Trace(np.arange(5.0), flags, np.zeros(5), "k", ("x",), 1, 0)
        assert tr.acceptance_rate == pytest.approx(0.5)

    def test_post_burn(self, stream):
        tr = mcmc.ar1_chain(0.5, 100, stream)
        np.testing.assert_array_equal(tr.post_burn("x"), tr.column("x")[10:])


class TestProposalKernel:
    def test_asymmetric_random_walk_rejected(self):
        with pytest.raises(DomainError):
            mcmc.ProposalKernel("random_walk", DistributionSpec("normal", (1.0, 1.0)))
        with pytest.raises(DomainError):
            mcmc.ProposalKernel("random_walk", DistributionSpec("exponential", (1.0,)))

    def test_bad_kind_and_scale(self):
        with pytest.raises(DomainError):
            mcmc.ProposalKernel("gibbs", DistributionSpec("normal", (0.0, 1.0)))
        with pytest.raises(DomainError):
            mcmc.ProposalKernel("independent", DistributionSpec("normal", (0.0, 1.0)), scale=0.0)

    def test_scaled_log_density(self):
        k = mcmc.ProposalKernel("independent", DistributionSpec("normal", (0.0, 1.0)), scale=2.0)
        assert float(k.log_density(1.0)) == pytest.approx(stats.norm(0, 2).logpdf(1.0))


class TestMHChain:
    def test_target_must_be_finite_at_init(self, stream):
        k = mcmc.ProposalKernel("independent", DistributionSpec("uniform", (0.0, 1.0)))
        with pytest.raises(DomainError):
            mcmc.mh_chain(DistributionSpec("beta", (2.0, 2.0)).log_density, k, 2.0, 10, stream)

    def test_non_finite_proposal_density(self, stream):
        class Broken:
            family = "broken"

            def sample(self, stream, n):
                return stream.uniform(n)

            def log_density(self, y):
                return np.full(np.shape(y), -np.inf)

        k = mcmc.ProposalKernel("independent", Broken())
        with pytest.raises(ConfigurationError):
            mcmc.mh_chain(lambda x: 0.0, k, 0.5, 10, stream)

    def test_deterministic(self):
        k = mcmc.ProposalKernel("random_walk", DistributionSpec("normal", (0.0, 1.0)))
        a = mcmc.mh_chain(lambda x: -0.5 * x * x, k, 0.0, 500, RngStream(3, 2))
        b = mcmc.mh_chain(lambda x: -0.5 * x * x, k, 0.0, 500, RngStream(3, 2))
        np.testing.assert_array_equal(a.states, b.states)

    def test_log_target_tracks_state(self, stream):
        f = DistributionSpec("beta", (2.7, 6.3))
        k = mcmc.ProposalKernel("independent", DistributionSpec("uniform", (0.0, 1.0)))
        tr = mcmc.mh_chain(f.log_density, k, 0.3, 300, stream)
        np.testing.assert_allclose(tr.log_target, f.log_density(tr.column("x")))

    def test_uniform_proposal_beta_target(self, stream):
        f = DistributionSpec("beta", (2.7, 6.3))
        k = mcmc.ProposalKernel("independent", DistributionSpec("uniform", (0.0, 1.0)))
        tr = mcmc.mh_chain(f.log_density, k, 0.3, 20000, stream)
        oracle = stationary_acceptance(stats.beta(2.7, 6.3).pdf, np.ones_like)
        assert tr.acceptance_rate == pytest.approx(oracle, abs=0.02)
        assert tr.acceptance_rate == pytest.approx(0.458, abs=0.03)
        assert stats.kstest(tr.post_burn("x")[::10], stats.beta(2.7, 6.3).cdf).pvalue > 1e-3

    def test_be2060_proposal_stationary_acceptance(self, stream):
        f = DistributionSpec("beta", (2.7, 6.3))
        k = mcmc.ProposalKernel("independent", DistributionSpec("beta", (20.0, 60.0)))
        tr = mcmc.mh_chain(f.log_density, k, 0.25, 20000, stream)
        oracle = stationary_acceptance(stats.beta(2.7, 6.3).pdf, stats.beta(20, 60).pdf)
        assert oracle == pytest.approx(0.397, abs=1e-3)
        assert tr.post_burn("x").mean() < 0.3
        assert abs(tr.acceptance_rate - oracle) < 0.06

    def test_vector_chain(self, stream):
        k = mcmc.ProposalKernel("random_walk", DistributionSpec("normal", (0.0, 1.0)))
        tr = mcmc.mh_chain(lambda x: -0.5 * float(x @ x), k, [0.0, 0.0], 5000, stream)
        assert tr.param_names == ("x1", "x2")
        assert np.abs(tr.post_burn().mean(axis=0)).max() < 0.2


class TestAR1:
    def test_stationary_variance(self, stream):
        chains = mcmc.ar1_chains(0.9, 400, 200, stream)
        last = np.array([c.column("x")[-1] for c in chains])
        assert np.var(last) == pytest.approx(1 / (1 - 0.81), rel=0.25)

    def test_ess_matches_theory(self, stream):
        tr = mcmc.ar1_chain(0.9, 50000, stream)
        assert ess_autocorr(tr) / tr.n == pytest.approx(0.1 / 1.9, rel=0.25)

    def test_rho_domain(self, stream):
        with pytest.raises(DomainError):
            mcmc.ar1_chain(1.0, 10, stream)


class TestAcceptanceScan:
    def test_matching_normal_proposal_always_accepts(self, stream):
        curve = mcmc.acceptance_scan(DistributionSpec("normal", (0.0, 1.0)), "normal_indep", [1.0], 2000, stream)
        assert curve.rates[0] == pytest.approx(1.0)

    def test_normal_indep_peak_near_target_variance(self, stream):
        grid = [0.25, 1.0, 4.0]
        r = mcmc.acceptance_scan(DistributionSpec("normal", (0.0, 1.0)), "normal_indep", grid, 3000, stream).rates
        assert r[1] > r[0] and r[1] > r[2]

    def test_random_walk_smaller_steps_accept_more(self, stream):
        grid = [0.2, 1.0, 5.0]
        r = mcmc.acceptance_scan(DistributionSpec("normal", (0.0, 1.0)), "laplace_rw", grid, 3000, stream).rates
        assert r[0] < r[1] < r[2]

    def test_rejects_bad_input(self, stream):
        with pytest.raises(DomainError):
            mcmc.acceptance_scan(DistributionSpec("cauchy", (0.0, 1.0)), "laplace_rw", [1.0], 10, stream)
        with pytest.raises(DomainError):
            mcmc.acceptance_scan(DistributionSpec("normal", (0.0, 1.0)), "laplace_rw", [0.0], 10, stream)


class TestLogistic:
    def test_challenger_mle(self):
        d = ds.challenger()
        X = np.column_stack([np.ones(d.n_rows), d["temperature"]])
        fit = mcmc.logistic_mle(X, d["failures"])
        assert fit.coef[0] == pytest.approx(15.0429, abs=1e-3)
        assert fit.coef[1] == pytest.approx(-0.2322, abs=1e-4)

    def test_matches_direct_maximisation(self, stream):
        x = stream.normal(200)
        y = (stream.uniform(200) < 1 / (1 + np.exp(-(0.5 + x)))).astype(float)
        X = np.column_stack([np.ones(200), x])
        fit = mcmc.logistic_mle(X, y)
        from scipy.optimize import minimize

        nll = lambda b: -np.sum(y * (X @ b) - np.logaddexp(0, X @ b))
        np.testing.assert_allclose(fit.coef, minimize(nll, np.zeros(2), method="BFGS").x, atol=1e-4)

    def test_separation(self):
        x = np.arange(8.0)
        with pytest.raises(SeparationError):
            mcmc.logistic_mle(np.column_stack([np.ones(8), x]), (x > 3.5).astype(float))

    def test_rank_deficient(self):
        x = np.arange(6.0)
        with pytest.raises(DomainError):
            mcmc.logistic_mle(np.column_stack([x, 2 * x]), np.array([0, 1, 0, 1, 1, 0.0]))

    def test_challenger_mh(self, stream):
        d = ds.challenger()
        tr = mcmc.challenger_mh(d["temperature"], d["failures"], 20000, stream)
        assert tr.accept_flags.shape == (20000, 2)
        assert np.all((tr.acceptance_rate > 0.05) & (tr.acceptance_rate < 0.6))
        probs = [mcmc.failure_probability(tr, t) for t in (50, 60, 70)]
        assert probs[0] > probs[1] > probs[2]
        assert probs[2] == pytest.approx(0.266, abs=0.08)

    def test_challenger_mh_binary_failures(self, stream):
        with pytest.raises(DomainError):
            mcmc.challenger_mh([50.0, 60.0], [0.0, 2.0], 10, stream)


class TestBraking:
    def test_posterior_centred_on_least_squares(self, stream):
        d = ds.cars()
        tr = mcmc.braking_mh(d["x"], d["y"], 20000, stream)
        coef = tr.extras["ls_coef"]
        X = np.column_stack([np.ones(d.n_rows), d["x"], d["x"] ** 2])
        se = np.sqrt(np.diag(tr.extras["ls_sigma2"] * np.linalg.inv(X.T @ X)))
        post = tr.post_burn()[:, :3].mean(axis=0)
        assert np.all(np.abs(post - coef) < se)
        lo, hi = mcmc.credible_interval(tr, "b2")
        assert lo < coef[1] < hi
        assert np.all(tr.column("sigma2") > 0)


class TestGibbs:
    def test_bivariate_moments(self, stream):
        tr = mcmc.gibbs_bivariate_normal(0.8, 20000, stream, math.sqrt(50), math.sqrt(100))
        X, Y = tr.post_burn().T
        assert np.cov(X, Y)[0, 1] == pytest.approx(0.8 * math.sqrt(5000), rel=0.1)
        assert np.cov(X + Y, X - Y)[0, 1] == pytest.approx(-50, abs=12)

    def test_bivariate_domain(self, stream):
        with pytest.raises(DomainError):
            mcmc.gibbs_bivariate_normal(1.0, 10, stream)

    def test_equicorrelated_marginal(self, stream):
        tr = mcmc.gibbs_equicorrelated(5, 0.25, 20000, stream)
        direct = mcmc.equicorrelated_direct(5, 0.25, 2000, RngStream(9, 0))
        _, p = ks_two_sample(tr.post_burn("x1")[::10], direct[:, 0])
        assert p > 1e-3
        c = np.corrcoef(tr.post_burn().T)
        assert c[0, 1] == pytest.approx(0.25, abs=0.05)

    def test_equicorrelated_conditional_constants(self):
        p, r = 5, 0.25
        cov = (1 - r) * np.eye(p) + r * np.ones((p, p))
        s12 = cov[0, 1:]
        s22 = cov[1:, 1:]
        coef = np.linalg.solve(s22, s12)
        c, sd = mcmc._equi_params(p, r)
        np.testing.assert_allclose(coef, np.full(p - 1, c / (p - 1)))
        assert sd**2 == pytest.approx(1 - s12 @ coef)

    def test_constraint_holds(self, stream):
        tr = mcmc.gibbs_equicorrelated(5, 0.25, 3000, stream, constrained=True, m=2)
        sq = tr.states**2
        assert np.all(sq[:, :2].sum(axis=1) < sq[:, 2:].sum(axis=1))

    def test_equicorrelated_domain(self, stream):
        with pytest.raises(DomainError):
            mcmc.gibbs_equicorrelated(3, -0.6, 10, stream)
        with pytest.raises(DomainError):
            mcmc.gibbs_equicorrelated(3, 0.2, 10, stream, constrained=True, m=3)

    def test_censored_rao_blackwell(self, stream):
        tr = mcmc.gibbs_censored_normal(ds.CENSORED_SAMPLE, ds.CENSORED_TOTAL, ds.CENSORING_POINT, 5000, stream)
        rb = tr.extras["rb"][tr.burn_in :]
        theta = tr.post_burn("theta")
        assert np.nanmin(tr.extras["z_min"]) >= ds.CENSORING_POINT
        assert np.var(rb) < np.var(theta)
        assert rb.mean() == pytest.approx(theta.mean(), abs=0.03)

    def test_censored_needs_censored_units(self, stream):
        with pytest.raises(DomainError):
            mcmc.gibbs_censored_normal([1.0, 2.0], 2, 3.0, 10, stream)

    def test_blood_groups_near_mle(self, stream):
        tr = mcmc.gibbs_blood_groups(ds.BLOOD_COUNTS, 5000, stream)
        a, b = np.meshgrid(np.linspace(0.15, 0.35, 401), np.linspace(0.02, 0.12, 401))
        ll = mcmc.blood_groups_loglik(a, b, ds.BLOOD_COUNTS)
        i = np.nanargmax(ll)
        mean = tr.post_burn().mean(axis=0)
        assert mean[0] == pytest.approx(a.flat[i], abs=0.01)
        assert mean[1] == pytest.approx(b.flat[i], abs=0.01)
        np.testing.assert_allclose(tr.states.sum(axis=1), 1.0)

    def test_truncated_poisson_table(self):
        k, cp = mcmc.truncated_poisson_table(1.0, 4)
        assert k[0] == 4 and cp[-1] == 1.0 and np.all(np.diff(cp) > 0)
        ref = stats.poisson(1.0).pmf(k) / stats.poisson(1.0).sf(3)
        np.testing.assert_allclose(np.diff(cp, prepend=0.0), ref / ref.sum(), rtol=0, atol=1e-12)

    def test_truncated_poisson_gibbs(self, stream):
        tr = mcmc.gibbs_truncated_poisson(**ds.TRUNCATED_POISSON, n=3000, stream=stream)
        assert np.nanmin(tr.extras["z_min"]) >= 4
        lam = tr.post_burn("lambda")
        assert np.var(tr.post_burn("rb")) < np.var(lam)
        lo = ds.TRUNCATED_POISSON["sum_uncensored"] / ds.TRUNCATED_POISSON["n_obs"]
        assert lam.mean() > lo

    def test_truncexp_marginal(self, stream):
        B = 5.0
        tr = mcmc.gibbs_truncexp_pair(B, 20000, stream)
        assert tr.states.max() < B and tr.states.min() > 0
        ref = grid_cdf_sampler(lambda x: np.log(mcmc.truncexp_marginal(x, B)), 1e-9, B, 20001, RngStream(5, 0), 3000)
        _, p = ks_two_sample(tr.post_burn("X")[::10], ref)
        assert p > 1e-3

    def test_slice_constraint_and_law(self, stream):
        tr = mcmc.slice_expsqrt(20000, stream)
        x, u = tr.states.T
        assert np.all(u[1:] < 0.5 * np.exp(-np.sqrt(x[1:])))
        _, p = ks_two_sample(tr.post_burn("X")[::5], mcmc.expsqrt_direct(3000, RngStream(5, 1)))
        assert p > 1e-3

    def test_expsqrt_direct_density(self):
        x = mcmc.expsqrt_direct(20000, RngStream(2, 0))
        cdf = lambda t: 1 - (1 + np.sqrt(t)) * np.exp(-np.sqrt(t))
        assert stats.kstest(x, cdf).pvalue > 1e-3


class TestBaseball:
    def test_alpha_marginal(self, stream):
        y = ds.BASEBALL
        tr = mcmc.gibbs_baseball(y, 20000, stream)
        ref = grid_cdf_sampler(lambda a: mcmc.baseball_alpha_logpdf(a, y), 1e-5, 3.0, 60001, RngStream(4, 0), 4000)
        _, p = ks_two_sample(tr.post_burn("alpha")[::5], ref)
        assert p > 1e-3
        assert tr.post_burn("mu").mean() == pytest.approx(y.mean(), abs=0.05)

    def test_alpha_logpdf_by_integration(self):
        # Integrate theta and mu out numerically for a three-point sample.
        y, s2, a = np.array([0.1, 0.3, -0.2]), 0.05, 0.4
        cov = (a + s2) * np.eye(3) + np.ones((3, 3))
        direct = stats.multivariate_normal(np.zeros(3), cov).logpdf(y) + stats.invgamma(2, scale=2).logpdf(a)
        closed = float(mcmc.baseball_alpha_logpdf(a, y, s2))
        a2 = 0.9
        cov2 = (a2 + s2) * np.eye(3) + np.ones((3, 3))
        direct2 = stats.multivariate_normal(np.zeros(3), cov2).logpdf(y) + stats.invgamma(2, scale=2).logpdf(a2)
        assert closed - float(mcmc.baseball_alpha_logpdf(a2, y, s2)) == pytest.approx(direct - direct2, abs=1e-10)


class TestBetaKernel:
    @pytest.mark.parametrize("variant", ["bernoulli_move", "ratio_move"])
    def test_detailed_balance(self, variant):
        alpha = 0.2
        g = (np.arange(50) + 0.5) / 50
        x, y = np.meshgrid(g, g, indexing="ij")
        f = lambda t: alpha * t ** (alpha - 1)
        flow = f(x) * mcmc.beta_kernel_density(alpha, variant, x, y)
        assert np.max(np.abs(flow - flow.T)) < 1e-12 * max(1.0, np.max(flow))

    @given(st.floats(0.05, 0.95), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    @settings(max_examples=100, deadline=None)
    def test_detailed_balance_property(self, alpha, x, y):
        f = lambda t: alpha * t ** (alpha - 1)
        for v in ("bernoulli_move", "ratio_move"):
            a = f(x) * mcmc.beta_kernel_density(alpha, v, x, y)
            b = f(y) * mcmc.beta_kernel_density(alpha, v, y, x)
            assert a == pytest.approx(b, rel=1e-12)

    def test_stationary_law(self, stream):
        # The chain sticks near zero, so a KS test on thinned draws is too optimistic.
        tr = mcmc.beta_kernel_chain(0.5, "ratio_move", 200000, stream)
        x = tr.post_burn("x")
        se = stats.beta(0.5, 1).std() / math.sqrt(ess_autocorr(x))
        assert abs(x.mean() - 1 / 3) < 4 * se

    def test_bernoulli_move_mixes_slowly(self, stream):
        tr = mcmc.beta_kernel_chain(0.2, "bernoulli_move", 10000, stream)
        assert ess_autocorr(tr) < tr.n / 10

    def test_domain(self, stream):
        with pytest.raises(DomainError):
            mcmc.beta_kernel_chain(1.0, "ratio_move", 10, stream)
        with pytest.raises(DomainError):
            mcmc.beta_kernel_chain(0.5, "swap", 10, stream)


class TestLogScaleWalk:
    def test_inverse_gamma_invariance(self, stream):
        a, b = 3.0, 2.0
        prec = stats.gamma(a, scale=1 / b)
        tr = mcmc.log_scale_rw(lambda x: prec.logpdf(1 / x), 1.0, 40000, stream)
        assert stats.kstest(tr.post_burn("x")[::20], stats.invgamma(a, scale=b).cdf).pvalue > 1e-3


@require_data("Pima.tr.csv")
class TestPima:
    def test_chains_agree(self, stream):
        d = ds.ingest_csv(data_file("Pima.tr.csv"), "pima")
        data = mcmc.PimaData(d["ped"], d["type"])
        traces = mcmc.pima_probit_mh(data, 4000, 3, stream)
        assert len({t.stream_id for t in traces}) == 3
        means = [t.post_burn("beta").mean() for t in traces]
        assert np.ptp(means) < 0.5
        assert all(np.all(t.column("sigma2") > 0) for t in traces)
