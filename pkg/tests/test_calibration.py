import json
import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from vmlv.calibration import (
    PipelineError,
    PriceSeries,
    business_days,
    carma21_acf,
    deseasonalize,
    empirical_acf,
    fit_kernel_acf,
    gamma_acf_theoretical,
    run_pipeline,
    synthetic_series,
)
from vmlv.distributions import GhParams
from vmlv.kernels import CarmaKernel, GammaKernel
from vmlv.spot import Seasonality, log_seasonality

TRUE_SEAS = Seasonality(beta0=3.5, beta1=0.1, beta2=0.05, beta3=1e-4, tau1=1.0, tau2=0.5)


def series_from_log(logp, start="2010-01-04"):
    return PriceSeries(business_days(start, logp.size), np.exp(logp))


def seasonal_log(n, seas=TRUE_SEAS):
    return log_seasonality(seas, np.arange(n, dtype=float))


def _acf_quad(g, h):
    # ACF by quadrature of the kernel product; alg weight handles the singular end
    a = g._singular_exponent() if hasattr(g, "_singular_exponent") else None
    if a is None:
        num = integrate.quad(lambda x: g.eval(x) * g.eval(x + h), 0, np.inf, limit=400)[0]
        den = integrate.quad(lambda x: g.eval(x) ** 2, 0, np.inf, limit=400)[0]
        return num / den
    reg = g._eval_regular
    num = integrate.quad(lambda x: reg(x) * g.eval(x + h), 0, 1, weight="alg", wvar=(a, 0))[0] \
        + integrate.quad(lambda x: g.eval(x) * g.eval(x + h), 1, np.inf, limit=400)[0]
    den = integrate.quad(lambda x: reg(x) ** 2, 0, 1, weight="alg", wvar=(2 * a, 0))[0] \
        + integrate.quad(lambda x: g.eval(x) ** 2, 1, np.inf, limit=400)[0]
    return num / den


class TestPriceSeries:
    def test_csv_round_trip(self, tmp_path):
        s = series_from_log(np.random.default_rng(0).normal(3.0, 0.2, 30))
        p = tmp_path / "prices.csv"
        s.to_csv(p)
        back = PriceSeries.from_csv(p)
        assert np.array_equal(back.timestamps, s.timestamps)
        assert np.array_equal(back.prices, s.prices)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("when,value\n2020-01-01,3\n")
        with pytest.raises(ValueError, match="header"):
            PriceSeries.from_csv(p)

    def test_validation(self):
        with pytest.raises(ValueError, match="increasing"):
            PriceSeries(np.array(["2020-01-02", "2020-01-01"]), [1.0, 2.0])
        with pytest.raises(ValueError):
            PriceSeries(np.array(["2020-01-01"]), [1.0, 2.0])

    def test_business_days_skip_weekends(self):
        d = business_days("2021-01-02", 6)  # a Saturday
        assert str(d[0]) == "2021-01-04"
        assert str(d[5]) == "2021-01-11"
        assert np.all(np.is_busday(d))
        assert np.array_equal(series_from_log(np.zeros(4)).times, np.arange(4.0))


class TestDeseasonalize:
    def test_noise_free_recovery(self):
        res = deseasonalize(series_from_log(seasonal_log(800)))
        np.testing.assert_allclose(res.betas, (3.5, 0.1, 0.05, 1e-4), rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(res.taus, (1.0, 0.5), atol=1e-6)
        assert np.max(np.abs(res.residuals)) < 1e-9

    def test_noisy_recovery(self):
        n, sd = 2000, 0.05
        x = np.random.default_rng(1).normal(0, sd, n)
        res = deseasonalize(series_from_log(seasonal_log(n) + x))
        # least-squares standard errors for the cosine amplitudes and the trend
        se_amp = sd * math.sqrt(2.0 / n)
        se_trend = sd * math.sqrt(12.0 / n ** 3)
        b0, b1, b2, b3 = res.betas
        assert abs(b1 - 0.1) < 5 * se_amp and abs(b2 - 0.05) < 5 * se_amp
        assert abs(b3 - 1e-4) < 5 * se_trend
        fitted = log_seasonality(res.seasonality, np.arange(n, dtype=float))
        assert np.max(np.abs(fitted - seasonal_log(n))) < 0.02

    def test_spikes_do_not_move_the_robust_fit(self):
        n = 1500
        rng = np.random.default_rng(2)
        clean = seasonal_log(n) + rng.normal(0, 0.05, n)
        spiky = clean.copy()
        spiky[rng.choice(n, 30, replace=False)] += 2.0
        ref = deseasonalize(series_from_log(clean))
        robust = deseasonalize(series_from_log(spiky))
        ols = deseasonalize(series_from_log(spiky), robust_iters=1)
        d_robust = abs(robust.betas[0] - ref.betas[0])
        d_ols = abs(ols.betas[0] - ref.betas[0])
        assert d_robust < 0.2 * d_ols
        assert robust.weights.min() < 0.1 and ols.iterations == 1

    def test_weekly_phase_round_trip(self):
        seas = Seasonality(beta0=1.0, beta2=0.2, tau2=2.0)
        res = deseasonalize(series_from_log(seasonal_log(300, seas)))
        assert res.seasonality.tau2 == pytest.approx(2.0, abs=1e-8)

    def test_invalid(self):
        with pytest.raises(ValueError, match="100"):
            deseasonalize(series_from_log(np.zeros(50)))
        s = series_from_log(np.zeros(200))
        with pytest.raises(ValueError, match="positive"):
            deseasonalize(PriceSeries(s.timestamps, -s.prices))
        with pytest.raises(ValueError, match="collinear"):
            deseasonalize(s, period_week=2.0)


class TestEmpiricalAcf:
    def test_white_noise_band(self):
        n = 5000
        r = empirical_acf(np.random.default_rng(3).standard_normal(n), 10)
        assert r[0] == 1.0
        assert np.all(np.abs(r[1:]) < 4 / math.sqrt(n))

    def test_ar1(self):
        rng = np.random.default_rng(4)
        n, phi = 20000, 0.9
        x = np.empty(n)
        x[0] = rng.standard_normal() / math.sqrt(1 - phi * phi)
        e = rng.standard_normal(n)
        for k in range(1, n):
            x[k] = phi * x[k - 1] + e[k]
        r = empirical_acf(x, 3)
        assert r[1] == pytest.approx(0.9, abs=0.02)
        assert r[2] == pytest.approx(0.81, abs=0.03)

    def test_invalid(self):
        with pytest.raises(ValueError, match="variance"):
            empirical_acf(np.ones(50), 5)
        with pytest.raises(ValueError):
            empirical_acf(np.arange(10.0), 5)


class TestTheoreticalAcf:
    def test_exponential_case(self):
        assert gamma_acf_theoretical(1.0, 2.0, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-13)
        assert gamma_acf_theoretical(0.8, 1.0, 0.0) == 1.0

    @pytest.mark.parametrize("nu,lam", [(0.672, 0.055), (0.8, 1.0), (2.3, 1.5)])
    def test_gamma_against_quadrature(self, nu, lam):
        g = GammaKernel(nu, lam)
        for h in (0.5, 3.0, 20.0):
            assert gamma_acf_theoretical(nu, lam, h) == pytest.approx(_acf_quad(g, h), rel=1e-7)

    @pytest.mark.parametrize("a1,a2,b0", [(1.5, 0.5, 0.7), (2.0, 1.0, 0.3), (0.4, 2.0, 1.2)])
    def test_carma_against_quadrature(self, a1, a2, b0):
        g = CarmaKernel([a1, a2], [b0, 1.0])
        hs = np.array([0.0, 0.4, 2.0, 5.0])
        ref = [1.0] + [_acf_quad(g, h) for h in hs[1:]]
        np.testing.assert_allclose(carma21_acf(a1, a2, b0, hs), ref, rtol=1e-7, atol=1e-10)

    def test_invalid(self):
        with pytest.raises(ValueError):
            gamma_acf_theoretical(0.5, 1.0, 1.0)
        with pytest.raises(ValueError):
            gamma_acf_theoretical(0.8, 0.0, 1.0)
        with pytest.raises(ValueError):
            gamma_acf_theoretical(0.8, 1.0, -1.0)


class TestFitKernelAcf:
    def test_exact_gamma_recovery(self):
        emp = gamma_acf_theoretical(0.672, 0.055, np.arange(41.0))
        fit = fit_kernel_acf(emp, "gamma")
        assert fit.params["nu"] == pytest.approx(0.672, rel=1e-4)
        assert fit.params["lambda"] == pytest.approx(0.055, rel=1e-4)
        assert fit.sse < 1e-12 and not fit.at_bound
        assert fit.fitted_acf[0] == 1.0 and fit.lags_used == 40

    def test_exact_carma_recovery(self):
        emp = carma21_acf(1.5, 0.5, 0.7, np.arange(31.0))
        fit = fit_kernel_acf(emp, "carma21")
        assert fit.sse < 1e-12
        np.testing.assert_allclose(fit.fitted_acf, emp, atol=1e-6)

    def test_ou_acf_collapses_gamma_to_exponential(self):
        alpha = 0.3
        emp = np.exp(-alpha * np.arange(31.0))
        fit = fit_kernel_acf(emp, "gamma")
        assert fit.params["nu"] == pytest.approx(1.0, rel=1e-4)
        assert fit.params["lambda"] == pytest.approx(2 * alpha, rel=1e-4)

    def test_warnings_and_errors(self):
        emp = gamma_acf_theoretical(0.8, 1.0, np.arange(11.0))
        with pytest.warns(UserWarning, match="lags"):
            fit_kernel_acf(emp, "gamma", lags=1)
        with pytest.raises(ValueError):
            fit_kernel_acf(emp, "gamma", lags=11)
        with pytest.raises(ValueError, match="family"):
            fit_kernel_acf(emp, "matern")
        with pytest.warns(UserWarning, match="bound"):
            fit = fit_kernel_acf(np.r_[1.0, np.zeros(10)], "gamma")
        assert fit.at_bound


class TestPipeline:
    GH = GhParams(-0.5, 0.431, 0.0, 0.395, 0.0)

    def test_report_and_files(self, tmp_path):
        s = synthetic_series(400, self.GH, 0.8, 0.5, TRUE_SEAS, seed=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = run_pipeline(s, {"out_dir": str(tmp_path)})
        assert rep["n"] == 400 and rep["top_family"] == rep["marginals"][0]["family"]
        aics = [m["aic"] for m in rep["marginals"]]
        assert aics == sorted(aics) and len(aics) == 11
        assert abs(rep["residual_mean"]) < 1e-6 + 4 * rep["residual_sd"] / math.sqrt(400) * 10
        assert json.loads((tmp_path / "report.json").read_text())["n"] == 400
        acf_rows = (tmp_path / "tables" / "acf.csv").read_text().splitlines()
        assert len(acf_rows) == 1 + 21
        assert (tmp_path / "tables" / "marginals.csv").exists()

    def test_synthetic_series_is_seeded(self):
        a = synthetic_series(200, self.GH, 0.8, 0.5, TRUE_SEAS, seed=9)
        b = synthetic_series(200, self.GH, 0.8, 0.5, TRUE_SEAS, seed=9)
        assert np.array_equal(a.prices, b.prices)
        assert np.all(np.is_busday(a.timestamps))

    def test_stage_errors(self, tmp_path):
        with pytest.raises(PipelineError) as e:
            run_pipeline(PriceSeries(np.array([], dtype="datetime64[D]"), []))
        assert e.value.stage == 0
        with pytest.raises(PipelineError) as e:
            run_pipeline(series_from_log(np.zeros(50)))
        assert e.value.stage == 1
        s = series_from_log(seasonal_log(300) + np.random.default_rng(5).normal(0, 0.1, 300))
        with pytest.raises(PipelineError) as e:
            run_pipeline(s, {"max_lag": 200})
        assert e.value.stage == 3
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(PipelineError) as e:
            run_pipeline(s, {"out_dir": str(blocker)})
        assert e.value.stage == 4 and isinstance(e.value, ValueError)
