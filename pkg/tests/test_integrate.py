import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad
from scipy.special import gammaln

from carlo import integrate as mc
from carlo.distributions import DistributionSpec
from carlo.errors import DegenerateError, DomainError, OverlapError, PoisonedEstimateError
from carlo.rng import RngStream
from conftest import data_file, require_data

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestRunningMean:
    @given(st.lists(finite, min_size=1, max_size=60))
    def test_means_are_prefix_averages(self, xs):
        est = mc.running_mean(xs)
        ref = np.array([np.mean(xs[: t + 1]) for t in range(len(xs))])
        np.testing.assert_allclose(est.means, ref, rtol=1e-9, atol=1e-9)

    @given(st.lists(finite, min_size=2, max_size=60))
    def test_ses_follow_stepwise_deviations(self, xs):
        x = np.array(xs)
        est = mc.running_mean(x)
        t = len(x)
        m = np.cumsum(x) / np.arange(1, t + 1)
        assert est.se == pytest.approx(math.sqrt(np.sum((x - m) ** 2)) / t, rel=1e-9, abs=1e-12)

    def test_band(self):
        est = mc.running_mean([1.0, 3.0])
        lo, hi = est.band(2)
        np.testing.assert_allclose(hi - lo, 4 * est.ses)

    def test_empty(self):
        with pytest.raises(DomainError):
            mc.running_mean([])


class TestWeights:
    @given(st.lists(st.floats(0.01, 100), min_size=1, max_size=50), st.floats(1e-3, 1e3))
    def test_ess_scale_invariant_and_bounded(self, w, c):
        e = mc.ess_weights(w)
        assert 1 - 1e-9 <= e <= len(w) + 1e-9
        assert mc.ess_weights(np.array(w) * c) == pytest.approx(e, rel=1e-9)

    def test_equal_weights(self):
        assert mc.ess_weights(np.ones(17)) == pytest.approx(17)

    def test_bad_weights(self):
        with pytest.raises(DomainError):
            mc.ess_weights([1.0, -1.0])
        with pytest.raises(DegenerateError):
            mc.ess_weights([0.0, 0.0])

    def test_self_normalised_with_equal_weights_is_plain_mean(self):
        x = RngStream(1).normal(100)
        a = mc.self_normalized_running(x, np.zeros(100))
        np.testing.assert_allclose(a.means, mc.running_mean(x).means, atol=1e-12)

    def test_is_estimate_second_moment(self):
        target = DistributionSpec("normal", (0.0, 1.0))
        est, ws = mc.is_estimate(target.log_density, DistributionSpec("normal", (0.0, 2.0)), lambda x: x**2, 20000, RngStream(2))
        assert abs(est.estimate - 1.0) < 3 * est.se
        sn, _ = mc.is_estimate(lambda x: target.log_density(x) + 5.0, DistributionSpec("normal", (0.0, 2.0)), lambda x: x**2, 20000,
                               RngStream(2), self_normalized=True)
        assert abs(sn.estimate - 1.0) < 3 * sn.se

    def test_poisoned_weight(self):
        with pytest.raises(PoisonedEstimateError):
            mc.is_estimate(lambda x: np.full(np.shape(x), np.nan), DistributionSpec("normal", (0, 1)), lambda x: x, 10, RngStream(1))

    def test_indicator_variance_track(self):
        v = mc.indicator_variance_track([1.0, 0.0], [2.0, 3.0])
        # m = (1, 0.5): terms 0 * 2 / 1 and 0.25 * 3 / 4.
        np.testing.assert_allclose(v, [0.0, 0.1875])


class TestTails:
    @pytest.mark.parametrize("kind,a,oracle", [
        ("normal", 20.0, lambda: 0.5 * mp.erfc(20 / mp.sqrt(2))),
        ("normal", 4.5, lambda: 0.5 * mp.erfc(4.5 / mp.sqrt(2))),
        ("chisq3", 25.0, lambda: mp.gammainc(1.5, 12.5, mp.inf, regularized=True)),
        ("t5", 50.0, lambda: 0.5 * mp.betainc(2.5, 0.5, 0, 5 / (5 + 2500), regularized=True)),
    ])
    def test_exact_values(self, kind, a, oracle):
        with mp.workdps(30):
            ref = float(oracle())
        assert mc.tail_probability_exact(kind, a) == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("kind,a", [("normal", 20.0), ("normal_uniform", 20.0), ("normal", 4.5), ("chisq3", 25.0)])
    def test_shifted_estimates_cover_truth(self, kind, a):
        est, _ = mc.tail_probability_shifted(kind, a, 10**4, RngStream(1))
        assert abs(est.estimate - mc.tail_probability_exact(kind, a)) < 3 * est.se

    @given(st.floats(1.0, 30.0))
    @settings(max_examples=20, deadline=None)
    def test_normal_weights_are_tilted_density(self, a):
        # w(x) = phi(x) / e^{-(x - a)} checked against scipy's density.
        _, ws = mc.tail_probability_shifted("normal", a, 50, RngStream(3))
        x = ws.points
        np.testing.assert_allclose(ws.log_weights, stats.norm.logpdf(x) + (x - a), rtol=1e-10)

    def test_threshold_positive(self):
        with pytest.raises(DomainError):
            mc.tail_probability_shifted("normal", 0.0, 10, RngStream(1))

    def test_t5_flagged_and_normal_not(self):
        _, t5 = mc.tail_probability_shifted("t5", 50.0, 10**4, RngStream(1))
        _, nz = mc.tail_probability_shifted("normal", 4.5, 10**4, RngStream(1))
        assert mc.divergence_flag(t5).flag
        assert not mc.divergence_flag(nz).flag


def posterior_mean_quad(x):
    num = quad(lambda t: t * math.exp(-0.5 * (x - t) ** 2) / (1 + t * t), -np.inf, np.inf)[0]
    den = quad(lambda t: math.exp(-0.5 * (x - t) ** 2) / (1 + t * t), -np.inf, np.inf)[0]
    return num / den


class TestPosteriorRatio:
    @pytest.mark.parametrize("sampler", ["cauchy_prior_normal_lik", "normal_prior_cauchy_lik"])
    def test_covers_quadrature(self, sampler):
        res = mc.posterior_ratio(4.0, sampler, 20000, RngStream(4))
        assert abs(res.ratio.estimate - posterior_mean_quad(4.0)) < 3 * res.ratio.se

    def test_known_value(self):
        assert posterior_mean_quad(4.0) == pytest.approx(3.43506, abs=1e-5)

    def test_required_size_uses_larger_spread(self):
        res = mc.posterior_ratio(4.0, "normal_prior_cauchy_lik", 1000, RngStream(4))
        sd = max(np.std(res.num_terms, ddof=1), np.std(res.den_terms, ddof=1))
        assert res.required_size(3) == mc.required_sample_size(sd, digits=3)


class TestRequiredSize:
    @given(st.floats(1e-3, 1e3), st.floats(1e-4, 1.0))
    def test_smallest_n(self, sigma, tol):
        n = mc.required_sample_size(sigma, tolerance=tol)
        assert 2 * sigma / math.sqrt(n) <= tol * (1 + 1e-8)
        if n > 1:
            assert 2 * sigma / math.sqrt(n - 1) > tol * (1 - 1e-8)

    def test_digits(self):
        assert mc.required_sample_size(1.0, digits=2) == 40000

    def test_needs_one_target(self):
        with pytest.raises(DomainError):
            mc.required_sample_size(1.0)
        with pytest.raises(DomainError):
            mc.required_sample_size(1.0, digits=2, tolerance=0.1)


def _normal_model(x):
    ll = lambda t: stats.norm.logpdf(x, loc=t)
    lp = lambda t: stats.norm.logpdf(t)
    post = DistributionSpec("normal", (x / 2, math.sqrt(0.5)))
    return ll, lp, post, stats.norm.logpdf(x, scale=math.sqrt(2))


class TestEvidence:
    def test_harmonic_mean_exact_with_posterior_tau(self):
        ll, lp, post, exact = _normal_model(1.5)
        th = post.sample(RngStream(1), 100)
        val = mc.harmonic_mean_evidence(ll(th), lp(th), post.log_density(th))
        assert math.log(val) == pytest.approx(exact, abs=1e-10)

    def test_prior_sampling(self):
        ll, _, _, exact = _normal_model(1.5)
        th = RngStream(2).normal(40000)
        assert mc.prior_sampling_evidence(ll(th)) == pytest.approx(math.exp(exact), rel=0.02)

    def test_candidate_constant_exact_with_matching_phi(self):
        f = DistributionSpec("gamma", (3.0, 2.0))
        x = f.sample(RngStream(3), 50)
        c = mc.candidate_constant(x, lambda z: f.log_density(z) + math.log(7.0), f.log_density)
        assert c == pytest.approx(7.0, rel=1e-12)

    def test_direct_ratio_exact_for_proportional_densities(self):
        l2 = lambda z: -0.5 * np.asarray(z) ** 2
        l1 = lambda z: l2(z) + math.log(3.0)
        assert mc.direct_ratio(l1, l2, RngStream(1).normal(20)) == pytest.approx(3.0, rel=1e-12)

    @pytest.mark.parametrize("geometric", [False, True])
    def test_bridge_normals(self, geometric):
        s = 2.0
        l1 = lambda z: -0.5 * np.asarray(z) ** 2
        l2 = lambda z: -0.5 * (np.asarray(z) / s) ** 2
        la = (lambda z: -0.5 * (l1(z) + l2(z))) if geometric else None
        r = mc.bridge_ratio(l1, l2, RngStream(1).normal(20000), s * RngStream(2).normal(20000), la)
        assert r == pytest.approx(1 / s, rel=0.03)

    def test_bridge_disjoint_supports(self):
        l1 = lambda z: np.where(np.asarray(z) < 0, 0.0, -np.inf)
        l2 = lambda z: np.where(np.asarray(z) > 0, 0.0, -np.inf)
        with pytest.raises(OverlapError):
            mc.bridge_ratio(l1, l2, -np.ones(5), np.ones(5))

    def test_chib_weights(self):
        ll, lp, post, exact = _normal_model(1.5)
        tr = post.sample(RngStream(5), 3000)
        ch = mc.chib_weight_trace(tr, ll, lp)
        assert ch.running.estimate == pytest.approx(math.exp(exact), rel=0.05)
        with pytest.raises(DegenerateError):
            mc.chib_weight_trace(np.ones(100), ll, lp)
        with pytest.raises(DomainError):
            mc.chib_weight_trace(tr, ll, lp, bandwidth=-1.0)

    def test_marginal_from_joint(self):
        rho = 0.6
        s = RngStream(6)
        x = s.normal(20000)
        y = rho * x + math.sqrt(1 - rho**2) * s.normal(20000)
        cov = np.array([[1, rho], [rho, 1]])
        joint = lambda a, b: stats.multivariate_normal(cov=cov).logpdf(np.column_stack([a, b]))
        w = lambda a: stats.norm.logpdf(a, scale=1.2)
        est = mc.marginal_from_joint(np.array([0.0, 1.0]), x, y, w, joint)
        np.testing.assert_allclose(est, stats.norm.pdf([0.0, 1.0]), rtol=0.05)


class TestRegressionEvidence:
    def _data(self):
        s = RngStream(8)
        X = np.column_stack([np.ones(6), s.normal(6)])
        y = X @ np.array([0.5, -1.0]) + 0.3 * s.normal(6)
        return y, X

    def test_gprior_matches_integration_over_sigma(self):
        y, X = self._data()
        n, p = X.shape
        S0 = np.eye(n) + n * X @ np.linalg.solve(X.T @ X, X.T)

        def integrand(ls):
            # sigma^2 = e^ls; the 1/sigma^2 prior cancels the Jacobian.
            return math.exp(stats.multivariate_normal(np.zeros(n), math.exp(ls) * S0).logpdf(y))

        ref = quad(integrand, -20, 20, limit=400)[0]
        assert mc.log_evidence_gprior(y, X) == pytest.approx(math.log(ref), abs=1e-6)

    def test_gprior_rank_deficient(self):
        y, X = self._data()
        with pytest.raises(DegenerateError):
            mc.log_evidence_gprior(y, np.column_stack([X, X[:, 1]]))

    def test_t_density_matches_closed_form(self):
        y, X = self._data()
        n, df = y.size, 4.0
        S = np.eye(n) + X @ np.linalg.solve(X.T @ X, X.T)
        q = y @ np.linalg.solve(S, y)
        ref = (gammaln((df + n) / 2) - gammaln(df / 2) - n / 2 * math.log(df * math.pi)
               - 0.5 * np.linalg.slogdet(S)[1] - (df + n) / 2 * math.log1p(q / df))
        assert mc.log_t_projection_density(y, X, df) == pytest.approx(ref, abs=1e-10)

    @require_data("swiss.csv")
    def test_swiss_tabulated_value(self):
        from carlo.datasets import ingest_csv

        d = ingest_csv(data_file("swiss.csv"), "swiss")
        y = np.log(d["Fertility"])
        X = np.column_stack([d[c] for c in ("Agriculture", "Examination", "Education", "Catholic", "Infant.Mortality")])
        assert math.exp(mc.log_t_projection_density(y, X, y.size - 1)) == pytest.approx(2.0960783e-63, rel=1e-6)


class TestFitz:
    def test_log_target(self):
        x = np.array([-1.0, 0.0, 1.0, math.pi])
        out = mc.fitz_log_target(x)
        assert np.isneginf(out[0]) and np.isneginf(out[1])
        assert out[3] < -60
        assert out[2] == pytest.approx(-1.0 + 2 * math.log(math.sin(1.0)))

    def test_target_mass(self):
        # Integral of exp(-sqrt x) sin^2 x over the positive half-line, by mpmath.
        with mp.workdps(20):
            ref = float(mp.quadosc(lambda t: mp.exp(-mp.sqrt(t)) * mp.sin(t) ** 2, [0, mp.inf], period=mp.pi))
        ws = mc.fitz_weights("cauchy2", 200000, RngStream(9))
        est = float(np.mean(np.exp(ws.log_weights)))
        assert est == pytest.approx(ref, rel=0.03)

    def test_negative_points_weigh_nothing(self):
        ws = mc.fitz_weights("normal", 1000, RngStream(1))
        assert np.all(np.isneginf(ws.log_weights[ws.points <= 0]))

    def test_printed_cauchy_differs_by_constant(self):
        a = mc.fitz_weights("cauchy2", 1000, RngStream(2), "intended")
        b = mc.fitz_weights("cauchy2", 1000, RngStream(2), "printed")
        assert a.ess == pytest.approx(b.ess, rel=1e-10)

    def test_unknown_proposal(self):
        with pytest.raises(DomainError):
            mc.fitz_weights("gamma", 10, RngStream(1))
