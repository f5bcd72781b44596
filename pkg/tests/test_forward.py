import math

import numpy as np
import pytest
from scipy import integrate

from vmlv.distributions import GigParams
from vmlv.forward import (
    ForwardState,
    ForwardSurface,
    MeasureMode,
    PricingMeasure,
    affinity_check,
    check_measure,
    forward_arithmetic,
    forward_geometric_esscher,
    forward_geometric_gaussian,
    forward_spot_correlation,
    forward_vol_term_structure,
    g2_integral,
    kernel_integral,
    risk_neutral_forward_step,
    simulate_history,
)
from vmlv.kernels import BjerksundKernel, CarmaKernel, GammaKernel, OUKernel, SeparableKernel
from vmlv.levy import NIG, Brownian, CompoundPoissonExp, EsscherParams, GammaSubordinator
from vmlv.lss import LssProcess
from vmlv.spot import Seasonality, SpotKind, SpotModel, log_seasonality
from vmlv.volatility import BnsOu, ConstantVol, GigOu

SEAS = Seasonality(beta0=3.0, beta1=0.1, beta3=0.001)
BNS = BnsOu(0.5, CompoundPoissonExp(2.0, 4.0))


def geometric(g, driver=None, vol=None, mu=0.0):
    return SpotModel(SpotKind.Geometric, SEAS, LssProcess(g, driver or Brownian(), vol or ConstantVol(0.5), mu))


def girsanov(theta=0.0, eta=0.0):
    return PricingMeasure(EsscherParams(theta, eta), MeasureMode.BrownianGirsanov)


def esscher(theta=0.0, eta=0.0):
    return PricingMeasure(EsscherParams(theta, eta), MeasureMode.GeneralEsscher)


def surface(model, measure, k=50, n=5, seed=1, horizon=2.0, dt=0.01):
    h = simulate_history(model, measure, horizon, dt, n, seed=seed)
    return ForwardSurface(model, measure, h.state(k))


class TestMeasureChecks:
    def test_rejects_gig_volatility(self):
        vol = GigOu(0.8, 1.0, GigParams(-0.5, 1.0, 1.0))
        with pytest.raises(ValueError, match="BNS"):
            check_measure(geometric(OUKernel(1.0), vol=vol), esscher())

    def test_girsanov_needs_standard_brownian(self):
        with pytest.raises(ValueError, match="Brownian"):
            check_measure(geometric(OUKernel(1.0), NIG(2.0, 0.0, 0.0, 1.0)), girsanov(0.1))
        with pytest.raises(ValueError, match="Brownian"):
            check_measure(geometric(OUKernel(1.0), Brownian(0.0, 2.0)), girsanov(0.1))

    def test_novikov_fails_for_zero_volatility(self):
        with pytest.raises(ValueError, match="Novikov"):
            check_measure(geometric(OUKernel(1.0), vol=ConstantVol(0.0)), girsanov(0.1))

    def test_strip_checks(self):
        with pytest.raises(ValueError, match="strip"):
            check_measure(geometric(OUKernel(1.0), NIG(1.0, 0.0, 0.0, 1.0)), esscher(1.5))
        with pytest.raises(ValueError, match="strip"):
            check_measure(geometric(OUKernel(1.0), vol=BNS), girsanov(0.0, 5.0))
        with pytest.raises(ValueError, match="stochastic"):
            check_measure(geometric(OUKernel(1.0)), girsanov(0.0, -0.5))


class TestQuadrature:
    @pytest.mark.parametrize("g", [OUKernel(1.3), GammaKernel(0.672, 0.055), GammaKernel(0.8, 1.0),
                                   BjerksundKernel(1.0, 1.0)], ids=repr)
    def test_kernel_integrals_against_adaptive_quadrature(self, g):
        T, lo, hi = 2.0, 0.5, 2.0
        a = g._singular_exponent()
        if a is None:
            ref1 = integrate.quad(lambda s: g.eval(T - s), lo, hi)[0]
            ref2 = integrate.quad(lambda s: g.eval(T - s) ** 2 * math.exp(-0.3 * (s - lo)), lo, hi)[0]
        else:
            # substitute x = T - s so the singularity sits at x = 0
            ref1 = integrate.quad(g._eval_regular, T - hi, T - lo, weight="alg", wvar=(a, 0))[0]
            ref2 = integrate.quad(lambda x: g._eval_regular(x) ** 2 * math.exp(-0.3 * (T - x - lo)),
                                  T - hi, T - lo, weight="alg", wvar=(2 * a, 0))[0]
        assert kernel_integral(g, T, lo, hi) == pytest.approx(ref1, rel=1e-8)
        got = g2_integral(g, T, lo, hi, lambda s: np.exp(-0.3 * (s - lo)))
        assert got == pytest.approx(ref2, rel=1e-8)


class TestGaussianForward:
    def test_ou_closed_form_with_theta(self):
        alpha, c, theta = 1.0, 0.5, 0.2
        m = geometric(OUKernel(alpha), vol=ConstantVol(c))
        fs = surface(m, girsanov(theta))
        t, T = fs.t, 1.5
        y = fs.core_value()
        tau = T - t
        closed = (log_seasonality(SEAS, T) + math.exp(-alpha * tau) * y
                  + theta * (1 - math.exp(-alpha * tau)) / alpha
                  + 0.5 * c * c * (1 - math.exp(-2 * alpha * tau)) / (2 * alpha))
        np.testing.assert_allclose(np.log(forward_geometric_gaussian(fs, T)), closed, rtol=1e-13)

    def test_ou_zero_theta_from_time_zero(self):
        m = geometric(OUKernel(2.0), vol=ConstantVol(1.0))
        fs = surface(m, girsanov(), k=0)
        T = 0.8
        closed = log_seasonality(SEAS, T) + math.exp(-2.0 * T) * fs.core_value() \
            + 0.5 * (1 - math.exp(-4.0 * T)) / 4.0
        np.testing.assert_allclose(np.log(fs.forward_geometric_gaussian(T)), closed, rtol=1e-13)

    @pytest.mark.parametrize("model,measure", [
        (geometric(OUKernel(1.0)), girsanov(0.2)),
        (geometric(GammaKernel(0.8, 1.0), vol=BNS), girsanov(0.1, -0.5)),
        (geometric(OUKernel(1.0), NIG(3.0, 0.5, 0.0, 1.0)), esscher(0.5)),
        (geometric(GammaKernel(0.8, 1.0), vol=BNS), esscher(0.3, -0.5)),
    ], ids=["ou-girsanov", "bns-girsanov", "nig-esscher", "bns-esscher"])
    def test_forward_at_current_time_is_spot(self, model, measure):
        fs = surface(model, measure, k=30)
        F = fs.forward(fs.t, n_mc=8, rng=np.random.default_rng(0))
        np.testing.assert_allclose(F, fs.spot(), rtol=1e-10)

    def test_affine_factorisation_matches_direct(self):
        for vol in (ConstantVol(0.5), BNS):
            fs = surface(geometric(OUKernel(1.0), vol=vol), girsanov(0.3, -0.5 if vol is BNS else 0.0))
            for T in (0.6, 1.0, 3.0):
                np.testing.assert_allclose(fs.forward_affine(T), fs.forward_geometric_gaussian(T), rtol=1e-10)

    def test_affine_factorisation_refused_for_gamma_kernel(self):
        fs = surface(geometric(GammaKernel(0.8, 1.0)), girsanov(0.1))
        with pytest.raises(ValueError):
            fs.forward_affine(1.0)

    def test_state_from_core_value_for_affine_kernel(self):
        m = geometric(OUKernel(1.0))
        fs = surface(m, girsanov(0.2))
        lean = ForwardSurface(m, girsanov(0.2), ForwardState(fs.t, fs.state.z, core=fs.core_value()))
        np.testing.assert_allclose(lean.forward_geometric_gaussian(1.3), fs.forward_geometric_gaussian(1.3),
                                   rtol=1e-12)
        g = geometric(GammaKernel(0.8, 1.0))
        lean = ForwardSurface(g, girsanov(), ForwardState(0.5, [0.25], core=[0.1]))
        with pytest.raises(ValueError, match="affine"):
            lean.forward_geometric_gaussian(1.0)

    def test_maturity_before_now_rejected(self):
        fs = surface(geometric(OUKernel(1.0)), girsanov())
        with pytest.raises(ValueError):
            fs.forward_geometric_gaussian(fs.t - 0.1)

    def test_long_end_for_separable_kernel(self):
        g1 = lambda t: 0.5 + np.exp(-np.asarray(t, dtype=float))
        g2 = lambda s: 1.0 / (1.0 + np.asarray(s, dtype=float) ** 2)
        m = geometric(SeparableKernel(g1, g2), vol=ConstantVol(0.5))
        h = simulate_history(m, girsanov(), 1.0, 0.01, 4, seed=3, window=200.0)
        fs = ForwardSurface(m, girsanov(), h.state(50))
        y = fs.core_value()
        T_far = fs.t + 10.0 * 1.0
        np.testing.assert_allclose(fs.realized(T_far), y * g1(T_far) / g1(fs.t), rtol=1e-10)
        np.testing.assert_allclose(fs.realized(T_far), y * 0.5 / g1(fs.t), rtol=1e-4)
        assert np.all(np.isfinite(fs.forward_geometric_gaussian(T_far)))


class TestEsscherForward:
    def test_brownian_esscher_matches_girsanov(self):
        c, theta_e = 0.5, 0.4
        m = geometric(GammaKernel(0.8, 1.0), vol=ConstantVol(c))
        h = simulate_history(m, esscher(theta_e), 1.0, 0.01, 4, seed=5)
        st = h.state(40)
        fe = forward_geometric_esscher(ForwardSurface(m, esscher(theta_e), st), 1.7)
        fg = forward_geometric_gaussian(ForwardSurface(m, girsanov(theta_e * c), st), 1.7)
        np.testing.assert_allclose(fe, fg, rtol=1e-10)

    def test_constant_vol_quadrature_against_monte_carlo(self):
        drv = NIG(3.0, 0.5, 0.0, 1.0)
        theta, c, tau = 0.5, 0.5, 1.0
        m = geometric(OUKernel(1.0), drv, ConstantVol(c))
        fs = surface(m, esscher(theta), k=0, n=1)
        quad = fs.esscher_exponent(tau)[0]
        n_steps, n = 50, 400_000
        dt = tau / n_steps
        w = OUKernel(1.0).cell_integrals(dt * np.arange(n_steps + 1)) / dt
        rng = np.random.default_rng(0)
        q = drv.esscher(theta)
        x = np.zeros(n)
        for j in range(n_steps):
            x += c * w[j] * q.sample_increments(dt, n, rng)
        e = np.exp(x)
        assert abs(e.mean() / math.exp(quad) - 1) < 1e-3
        assert abs(e.mean() - math.exp(quad)) < 4 * e.std() / math.sqrt(n)

    def test_bns_zero_theta_matches_affine_closed_form(self):
        m = geometric(OUKernel(1.0), vol=BNS)
        h = simulate_history(m, esscher(0.0, -0.5), 1.0, 0.01, 3, seed=2)
        st = h.state(20)
        fe = ForwardSurface(m, esscher(0.0, -0.5), st).forward_geometric_esscher(
            1.2, n_mc=40_000, rng=np.random.default_rng(1), dt_inner=0.005)
        fg = ForwardSurface(m, girsanov(0.0, -0.5), st).forward_geometric_gaussian(1.2)
        np.testing.assert_allclose(fe, fg, rtol=2e-3)

    def test_stochastic_vol_needs_rng(self):
        fs = surface(geometric(OUKernel(1.0), vol=BNS), esscher(0.1))
        with pytest.raises(ValueError, match="rng"):
            fs.forward_geometric_esscher(1.0)

    def test_strip_exit_is_reported(self):
        m = geometric(OUKernel(0.1), NIG(1.0, 0.0, 0.0, 1.0), ConstantVol(3.0))
        fs = surface(m, esscher(0.0))
        with pytest.raises(ValueError, match="strip"):
            fs.forward_geometric_esscher(2.0)

    def test_mode_mismatch(self):
        fs = surface(geometric(OUKernel(1.0)), girsanov())
        with pytest.raises(ValueError):
            fs.forward_geometric_esscher(1.0)


@pytest.mark.parametrize("model,measure", [
    (geometric(OUKernel(1.0), vol=ConstantVol(0.5)), girsanov(0.3)),
    (geometric(OUKernel(1.0), NIG(3.0, 0.5, 0.0, 1.0)), esscher(0.5)),
    (SpotModel(SpotKind.Arithmetic, SEAS, LssProcess(OUKernel(1.0), GammaSubordinator(2.0, 4.0), BNS)),
     esscher(1.0, -0.5)),
], ids=["girsanov", "esscher", "arithmetic"])
def test_expected_spot_equals_initial_forward(model, measure):
    # E_Q[S_T] from simulated paths against the mean time-0 forward
    n, T, dt = 20_000, 0.5, 0.01
    h = simulate_history(model, measure, T, dt, n, seed=11)
    rng = np.random.default_rng(3)
    f0 = ForwardSurface(model, measure, h.state(0)).forward(T, n_mc=16, rng=rng)
    sT = ForwardSurface(model, measure, h.state(int(round(T / dt)))).spot()
    d = sT - f0
    assert abs(d.mean()) < 4 * d.std() / math.sqrt(n)


class TestArithmeticForward:
    def arithmetic(self, driver, vol=None, g=None):
        return SpotModel(SpotKind.Arithmetic, SEAS, LssProcess(g or OUKernel(1.0), driver, vol or ConstantVol(0.7)))

    def test_centred_driver_has_no_mean_term(self):
        m = self.arithmetic(NIG(2.0, 0.0, 0.0, 1.0))
        fs = surface(m, esscher(0.0))
        T = 1.4
        np.testing.assert_allclose(forward_arithmetic(fs, T), math.exp(log_seasonality(SEAS, T)) + fs.realized(T),
                                   rtol=1e-14)

    def test_constant_vol_subordinator_closed_form(self):
        alpha, c, theta = 1.0, 0.7, 1.0
        drv = GammaSubordinator(2.0, 4.0)
        m = self.arithmetic(drv)
        fs = surface(m, esscher(theta))
        T = 1.6
        tau = T - fs.t
        mean_term = drv.esscher(theta).kappa1 * c * (1 - math.exp(-alpha * tau)) / alpha
        ref = math.exp(log_seasonality(SEAS, T)) + fs.realized(T) + mean_term
        np.testing.assert_allclose(fs.forward_arithmetic(T), ref, rtol=1e-12)

    def test_at_current_time_is_spot(self):
        m = self.arithmetic(GammaSubordinator(2.0, 4.0), BNS)
        fs = surface(m, esscher(1.0, -0.5))
        np.testing.assert_allclose(fs.forward_arithmetic(fs.t, rng=np.random.default_rng(0)), fs.spot(),
                                   rtol=1e-14)

    def test_girsanov_specialisation(self):
        m = self.arithmetic(Brownian())
        fs = surface(m, girsanov(0.4))
        T = 1.2
        ref = math.exp(log_seasonality(SEAS, T)) + fs.realized(T) + 0.4 * (1 - math.exp(-(T - fs.t)))
        np.testing.assert_allclose(fs.forward_arithmetic(T), ref, rtol=1e-12)

    def test_expected_vol_integral_bns_mean_reversion(self):
        # E[omega_s] is bounded by sqrt(E[omega2_s]) which has a closed form
        m = self.arithmetic(GammaSubordinator(2.0, 4.0), BNS)
        fs = surface(m, esscher(0.5, 0.0))
        T = 1.5
        ev = fs.expected_vol_integral(T, n_mc=20_000, rng=np.random.default_rng(0))
        z, lam, k1 = fs.state.z, BNS.lam, BNS.sub.kappa1
        s = np.linspace(fs.t, T, 2001)
        m2 = z[:, None] * np.exp(-lam * (s - fs.t)) + k1 * (1 - np.exp(-lam * (s - fs.t)))
        upper = np.trapezoid(np.exp(-(T - s)) * np.sqrt(m2), s, axis=1)
        assert np.all(ev <= upper * (1 + 1e-3))
        assert np.all(ev > 0.5 * upper)


class TestAffinity:
    def test_examples(self):
        r = affinity_check(OUKernel(0.7))
        assert r.affine
        assert r.g1(2.0) * r.g2(0.5) == pytest.approx(math.exp(-0.7 * 1.5), rel=1e-14)
        assert not affinity_check(BjerksundKernel(1.0, 1.0)).affine
        assert not affinity_check(GammaKernel(0.8, 1.0)).affine
        assert not affinity_check(GammaKernel(1.5, 1.0)).affine
        assert affinity_check(GammaKernel(1.0, 2.0)).affine
        assert affinity_check(CarmaKernel([0.9], [1.0])).affine
        assert not affinity_check(CarmaKernel([1.5, 0.5], [0.7, 1.0])).affine

    def test_separable_is_affine(self):
        k = SeparableKernel(lambda t: 1 / (1 + np.asarray(t)), lambda s: np.exp(np.asarray(s)))
        assert affinity_check(k).affine

    def test_gamma_ratio_depends_on_s(self):
        g = GammaKernel(0.8, 1.0)
        r = [g.G(3.0, s) / g.G(2.0, s) for s in (0.5, 1.0, 1.5)]
        assert max(r) - min(r) > 1e-3

    def test_gig_volatility_kernel_is_not_affine(self):
        vol = GigOu(0.8, 1.0, GigParams(-0.5, 1.0, 1.0))
        assert not affinity_check(OUKernel(1.0), vol).affine


class TestTermStructureAndCorrelation:
    def test_ou_samuelson_shape(self):
        fs = surface(geometric(OUKernel(2.0), vol=BNS), girsanov(0.0))
        T = fs.t + 0.7
        np.testing.assert_allclose(forward_vol_term_structure(fs, T), math.exp(-1.4) * np.sqrt(fs.state.z))
        np.testing.assert_allclose(forward_vol_term_structure(fs, fs.t), np.sqrt(fs.state.z))

    def test_constant_vol_limit(self):
        fs = surface(geometric(OUKernel(2.0), vol=ConstantVol(0.35)), girsanov(0.0))
        np.testing.assert_allclose(forward_vol_term_structure(fs, fs.t), 0.35)

    def test_bjerksund_shape(self):
        sig, b = 0.8, 0.3
        m = geometric(BjerksundKernel(sig, b), vol=ConstantVol(0.5))
        with pytest.raises(ValueError, match="window"):
            simulate_history(m, girsanov(), 1.0, 0.01, 2)
        h = simulate_history(m, girsanov(), 1.0, 0.01, 2, window=50.0)
        fs = ForwardSurface(m, girsanov(), h.state(50))
        for tau in (0.0, 0.5, 2.0):
            np.testing.assert_allclose(forward_vol_term_structure(fs, fs.t + tau), sig / (tau + b) * 0.5)

    def test_correlation(self):
        assert forward_spot_correlation(OUKernel(1.3), 0.0, 2.0) == pytest.approx(1.0, abs=1e-8)
        assert forward_spot_correlation(BjerksundKernel(1.0, 1.0), 2.0, 2.0) == 1.0
        k = BjerksundKernel(1.0, 1.0)
        tau = 1.0
        cross = integrate.quad(lambda x: k.eval(x + tau) * k.eval(x), 0, np.inf)[0]
        aa = integrate.quad(lambda x: k.eval(x) ** 2, tau, np.inf)[0]
        bb = integrate.quad(lambda x: k.eval(x) ** 2, 0, np.inf)[0]
        rho = forward_spot_correlation(k, 0.0, tau)
        assert rho == pytest.approx(cross / math.sqrt(aa * bb), rel=1e-8)
        assert 0 < rho < 1

    def test_separable_correlation_needs_window(self):
        k = SeparableKernel(lambda t: np.exp(-np.asarray(t)), lambda s: np.exp(np.asarray(s)))
        assert forward_spot_correlation(k, 0.0, 1.0, window=20.0) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ValueError):
            forward_spot_correlation(k, 0.0, 1.0)


class TestRiskNeutralStep:
    def test_jump_coefficient_vanishes_at_maturity(self):
        fs = surface(geometric(GammaKernel(0.8, 1.0), vol=BNS), girsanov(0.1, -0.5))
        st = risk_neutral_forward_step(fs, fs.t, 0.01)
        assert st.jump_scale == 0.0

    def test_constant_vol_is_pure_diffusion(self):
        fs = surface(geometric(OUKernel(1.0), vol=ConstantVol(0.5)), girsanov(0.1))
        st = risk_neutral_forward_step(fs, fs.t + 1.0, 0.01)
        assert st.jump_scale == 0.0 and st.compensator == 0.0
        np.testing.assert_allclose(st.diffusion, 0.5 * math.exp(-1.0))

    def test_martingale_one_step(self):
        fs = surface(geometric(GammaKernel(0.8, 1.0), vol=BNS), girsanov(0.1, -0.5), n=3)
        st = risk_neutral_forward_step(fs, fs.t + 1.0, 0.05)
        assert st.jump_scale > 0
        r = st.sample(np.random.default_rng(0), size=100_000)
        se = r.std(axis=0) / math.sqrt(r.shape[0])
        assert np.all(np.abs(r.mean(axis=0) - 1.0) < 4 * se)

    def test_requires_girsanov(self):
        fs = surface(geometric(OUKernel(1.0)), esscher(0.1))
        with pytest.raises(ValueError):
            risk_neutral_forward_step(fs, 1.0, 0.01)
