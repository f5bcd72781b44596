import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from vmlv.distributions import (
    Family,
    FittedModel,
    GhParams,
    GigParams,
    alphabar_to_chipsi,
    fit_all_families,
    fit_gh_family,
    gh_cdf,
    gh_density,
    gh_mean,
    gh_var,
    gig_cdf,
    gig_density,
    gig_laplace,
    gig_mean,
    gig_moment,
    gig_var,
    n_free_params,
    rank_by_aic,
    sample_gh,
    sample_gig,
)

NIG_FIT = GhParams(-0.5, 0.431, 0.0, 0.395, 0.0)


def _mixture_density(x, p: GhParams):
    """Normal variance-mean mixture integrated numerically over the GIG law."""
    g = alphabar_to_chipsi(p)

    def integrand(w):
        return stats.norm.pdf(x, p.mu + p.gamma * w, p.sigma * math.sqrt(w)) * gig_density(w, g)

    return integrate.quad(integrand, 0, np.inf, limit=400, points=None)[0]


class TestGig:
    @pytest.mark.parametrize("p", [GigParams(-0.5, 1.3, 0.7), GigParams(0.0, 2.0, 0.5),
                                   GigParams(1.7, 0.4, 2.0), GigParams(0.8, 0.0, 1.6),
                                   GigParams(-2.5, 3.0, 0.0)])
    def test_density_normalised_and_moments(self, p):
        total = integrate.quad(lambda x: gig_density(x, p), 0, np.inf, limit=400)[0]
        assert total == pytest.approx(1.0, abs=1e-8)
        m1 = integrate.quad(lambda x: x * gig_density(x, p), 0, np.inf, limit=400)[0]
        assert gig_mean(p) == pytest.approx(m1, rel=1e-7)
        m2 = integrate.quad(lambda x: x * x * gig_density(x, p), 0, np.inf, limit=400)[0]
        if math.isfinite(m2) and not (p.psi == 0 and -p.lam <= 2):
            assert gig_var(p) == pytest.approx(m2 - m1 ** 2, rel=1e-6)

    def test_fractional_moment_by_quadrature(self):
        p = GigParams(0.3, 1.1, 2.2)
        ref = integrate.quad(lambda x: x ** 0.37 * gig_density(x, p), 0, np.inf)[0]
        assert gig_moment(p, 0.37) == pytest.approx(ref, rel=1e-8)

    def test_laplace_transform_by_quadrature(self):
        p = GigParams(-0.5, 1.3, 0.7)
        for s in (0.1, 1.0, 4.0):
            ref = integrate.quad(lambda x: math.exp(-s * x) * gig_density(x, p), 0, np.inf)[0]
            assert gig_laplace(p, s) == pytest.approx(ref, rel=1e-8)

    def test_cdf_matches_sampler(self):
        p = GigParams(-0.5, 1.3, 0.7)
        x = np.sort(sample_gig(p, 20000, np.random.default_rng(1)))
        grid = np.quantile(x, np.linspace(0.02, 0.98, 25))
        ecdf = np.searchsorted(x, grid, side="right") / x.size
        # DKW band at 20000 draws is about 0.014 at 99.9%
        assert np.max(np.abs(ecdf - gig_cdf(grid, p))) < 0.014

    @pytest.mark.parametrize("args", [(-1.0, 0.0, 1.0), (0.0, 0.0, 1.0), (1.0, 1.0, 0.0),
                                      (1.0, -1.0, 1.0)])
    def test_inadmissible_raise(self, args):
        with pytest.raises(ValueError):
            GigParams(*args)


class TestGhParametrisation:
    @given(st.floats(min_value=-3, max_value=3), st.floats(min_value=0.05, max_value=20))
    @settings(max_examples=40, deadline=None)
    def test_mixing_law_has_unit_mean(self, lam, abar):
        g = alphabar_to_chipsi(GhParams(lam, abar, 0.0, 1.0))
        assert gig_mean(g) == pytest.approx(1.0, rel=1e-9)
        assert math.sqrt(g.chi * g.psi) == pytest.approx(abar, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.8, -1.7])
    def test_boundary_laws_have_unit_mean(self, lam):
        g = alphabar_to_chipsi(GhParams(lam, 0.0, 0.0, 1.0))
        assert gig_mean(g) == pytest.approx(1.0, rel=1e-12)

    def test_variance_is_sigma_squared_when_symmetric(self):
        assert gh_var(NIG_FIT) == pytest.approx(0.395 ** 2, rel=1e-12)

    @pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(alpha_bar=-1.0),
                                    dict(alpha_bar=0.0, lam=-0.5)])
    def test_invalid_params_raise(self, kw):
        base = dict(lam=-0.5, alpha_bar=0.4, mu=0.0, sigma=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            GhParams(**base)


class TestGhDensity:
    @pytest.mark.parametrize("p", [NIG_FIT, GhParams(-0.183, 0.438, -0.001, 0.392, 0.05),
                                   GhParams(1.0, 0.15, 0.0, 0.375, -0.1),
                                   GhParams(0.975, 0.0, 0.003, 0.379, 0.0),
                                   GhParams(-1.366, 0.0, -0.001, 0.458, 0.0)])
    def test_against_mixture_quadrature(self, p):
        for x in (-1.3, -0.2, 0.05, 0.9):
            assert gh_density(x, p) == pytest.approx(_mixture_density(x, p), rel=1e-7)

    def test_nig_against_scipy(self):
        p = GhParams(-0.5, 0.8, 0.1, 0.6, 0.2)
        g = alphabar_to_chipsi(p)
        delta = p.sigma * math.sqrt(g.chi)
        beta = p.gamma / p.sigma ** 2
        alpha = math.sqrt(g.psi / p.sigma ** 2 + beta ** 2)
        ref = stats.norminvgauss(alpha * delta, beta * delta, loc=p.mu, scale=delta)
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(gh_density(x, p), ref.pdf(x), rtol=1e-10)

    def test_student_t_against_scipy(self):
        lam = -2.3
        p = GhParams(lam, 0.0, 0.2, 0.7, 0.0)
        ref = stats.t(df=-2 * lam, loc=0.2, scale=0.7 * math.sqrt((lam + 1) / lam))
        x = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(gh_density(x, p), ref.pdf(x), rtol=1e-10)

    def test_gaussian_limit(self):
        p = GhParams(-0.5, math.inf, 0.1, 0.4)
        assert gh_density(0.3, p) == pytest.approx(stats.norm.pdf(0.3, 0.1, 0.4), rel=1e-14)
        # large alpha_bar approaches the Gaussian
        near = GhParams(-0.5, 1e4, 0.1, 0.4)
        assert gh_density(0.3, near) == pytest.approx(stats.norm.pdf(0.3, 0.1, 0.4), rel=1e-3)

    def test_mean_and_variance_by_quadrature(self):
        p = GhParams(-0.183, 0.438, -0.001, 0.392, 0.05)
        m1 = integrate.quad(lambda x: x * gh_density(x, p), -np.inf, np.inf, limit=400)[0]
        m2 = integrate.quad(lambda x: x * x * gh_density(x, p), -np.inf, np.inf, limit=400)[0]
        assert gh_mean(p) == pytest.approx(m1, abs=1e-9)
        assert gh_var(p) == pytest.approx(m2 - m1 ** 2, rel=1e-7)

    def test_cdf_monotone_and_matches_samples(self):
        x = np.linspace(-3, 3, 25)
        c = gh_cdf(x, NIG_FIT)
        assert np.all(np.diff(c) > 0)
        assert gh_cdf(0.0, NIG_FIT) == pytest.approx(0.5, abs=1e-10)
        s = np.sort(sample_gh(NIG_FIT, 20000, np.random.default_rng(3)))
        ecdf = np.searchsorted(s, x, side="right") / s.size
        assert np.max(np.abs(ecdf - c)) < 0.014

    @given(st.floats(min_value=-3, max_value=3), st.floats(min_value=0.01, max_value=10),
           st.floats(min_value=-1, max_value=1), st.floats(min_value=-8, max_value=8))
    @settings(max_examples=60, deadline=None)
    def test_density_positive_and_finite(self, lam, abar, gamma, x):
        d = gh_density(x, GhParams(lam, abar, 0.0, 1.0, gamma))
        assert math.isfinite(d) and d >= 0


class TestFitting:
    def test_free_parameter_counts_match_table(self):
        # AIC + 2 loglik = 2k for the reported marginal fits
        reported = {(Family.NIG, True): (1313.14, -653.57), (Family.GHYP, True): (1314.13, -653.06),
                    (Family.NIG, False): (1315.10, -653.55), (Family.GHYP, False): (1316.10, -653.05),
                    (Family.StudentT, True): (1327.28, -660.64), (Family.HYP, False): (1333.33, -662.66),
                    (Family.VG, True): (1333.85, -663.92), (Family.Gaussian, True): (1742.94, -869.47)}
        for (fam, sym), (aic, ll) in reported.items():
            assert n_free_params(fam, sym) == round((aic + 2 * ll) / 2)

    def test_aic_definition(self):
        m = FittedModel(NIG_FIT, -653.57, 3, Family.NIG, True)
        assert m.aic == pytest.approx(1313.14)

    def test_nig_recovery(self):
        x = sample_gh(NIG_FIT, 5000, np.random.default_rng(7))
        m = fit_gh_family(x, Family.NIG, symmetric=True)
        assert m.params.alpha_bar == pytest.approx(0.431, rel=0.25)
        assert m.params.sigma == pytest.approx(0.395, rel=0.05)
        assert m.params.lam == -0.5 and m.params.gamma == 0.0

    def test_nested_likelihood_ordering(self):
        x = sample_gh(NIG_FIT, 1500, np.random.default_rng(11))
        ghyp = fit_gh_family(x, Family.GHYP, symmetric=False)
        nig = fit_gh_family(x, Family.NIG, symmetric=False)
        nig_sym = fit_gh_family(x, Family.NIG, symmetric=True)
        assert ghyp.log_likelihood >= nig.log_likelihood - 1e-4
        assert nig.log_likelihood >= nig_sym.log_likelihood - 1e-4

    def test_gaussian_fit_is_closed_form(self):
        x = np.random.default_rng(5).normal(0.3, 1.7, 400)
        m = fit_gh_family(x, Family.Gaussian)
        assert m.params.mu + m.params.gamma == pytest.approx(x.mean(), abs=1e-5)
        assert m.params.sigma == pytest.approx(x.std(), rel=1e-5)

    def test_rank_by_aic_sorted_and_ties(self):
        a = FittedModel(NIG_FIT, -10.0, 3, Family.NIG, True)
        b = FittedModel(NIG_FIT, -11.0, 2, Family.Gaussian, True)   # same AIC, fewer params
        c = FittedModel(NIG_FIT, -5.0, 4, Family.GHYP, True)
        assert rank_by_aic([a, b, c]) == [c, b, a]
        with pytest.raises(ValueError):
            rank_by_aic([])

    def test_fit_all_families_configurations(self):
        x = sample_gh(NIG_FIT, 300, np.random.default_rng(2))
        fits = fit_all_families(x)
        assert len(fits) == 11
        assert {(m.family_tag, m.symmetric) for m in fits}.__len__() == 11

    def test_too_few_observations(self):
        with pytest.raises(ValueError):
            fit_gh_family(np.arange(10.0), Family.NIG)
        with pytest.raises(ValueError):
            fit_gh_family(np.ones(100), Family.NIG)
