r"""Calibration of the spot model to a daily price series.

The pipeline removes a robustly estimated seasonal level from log prices,
fits generalised hyperbolic subfamilies to the stationary residual with AIC
ranking, and fits kernel autocorrelation functions by least squares.

The gamma-kernel autocorrelation has the closed form

.. math::

    \rho(h) = \frac{\bar K_{\nu - 1/2}(\lambda h / 2)}{2^{\nu - 3/2}\Gamma(\nu - 1/2)},
    \qquad \bar K_\nu(x) = x^\nu K_\nu(x).
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .distributions import (Family, GhParams, alphabar_to_chipsi, fit_all_families,
                            rank_by_aic)
from .kernels import CarmaKernel, GammaDensityKernel, GammaKernel, Kernel
from .levy import Brownian
from .lss import LssProcess, SimConfig, simulate
from .specfun import bessel_k_bar, gamma_fn
from .spot import Seasonality, log_seasonality
from .volatility import GigOu

HUBER_C = 1.345


class PipelineError(ValueError):
    """Failure inside :func:`run_pipeline`, labelled with the stage."""

    def __init__(self, stage: int, name: str, msg: str):
        super().__init__(f"stage {stage} ({name}): {msg}")
        self.stage = stage
        self.name = name


@dataclass
class PriceSeries:
    """Business-day price series.

    ``timestamps`` are ``numpy.datetime64[D]``; the model time of observation
    ``k`` is ``k`` (business days since the first date).
    """

    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[D]")
        self.prices = np.asarray(self.prices, dtype=float)
        if self.timestamps.shape != self.prices.shape or self.prices.ndim != 1:
            raise ValueError("timestamps and prices must be 1-d arrays of equal length")
        if self.prices.size > 1 and not np.all(np.diff(self.timestamps) > np.timedelta64(0, "D")):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return self.prices.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.prices.size, dtype=float)

    @classmethod
    def from_csv(cls, path) -> "PriceSeries":
        """Read a ``date,price`` CSV with ISO-8601 dates."""
        dates, prices = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:2]] != ["date", "price"]:
                raise ValueError("price CSV needs the header 'date,price'")
            for row in reader:
                if not row:
                    continue
                dates.append(np.datetime64(row[0].strip(), "D"))
                prices.append(float(row[1]))
        return cls(np.array(dates, dtype="datetime64[D]"), np.array(prices))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "price"])
            for d, p in zip(self.timestamps, self.prices):
                w.writerow([str(d), repr(float(p))])


def business_days(start: str, n: int) -> np.ndarray:
    """``n`` consecutive weekdays starting at or after ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


# ---------------------------------------------------------------------------
# Deseasonalisation


@dataclass
class DeseasonResult:
    seasonality: Seasonality
    residuals: np.ndarray
    weights: np.ndarray
    iterations: int

    @property
    def betas(self) -> tuple:
        s = self.seasonality
        return (s.beta0, s.beta1, s.beta2, s.beta3)

    @property
    def taus(self) -> tuple:
        s = self.seasonality
        return (s.tau1, s.tau2)


def _design(t: np.ndarray, py: float, pw: float) -> np.ndarray:
    wy, ww = 2 * math.pi * t / py, 2 * math.pi * t / pw
    return np.column_stack([np.ones_like(t), np.cos(wy), np.sin(wy), np.cos(ww), np.sin(ww), t])


def _to_amplitude_phase(a: float, b: float, period: float) -> tuple[float, float]:
    # beta cos((tau + 2 pi t) / P) = a cos(2 pi t / P) + b sin(2 pi t / P)
    beta = math.hypot(a, b)
    phase = math.atan2(-b, a) if beta > 0 else 0.0
    return beta, (phase % (2 * math.pi)) * period


def deseasonalize(s: PriceSeries, robust_iters: int = 20, period_year: float = 261.0,
                  period_week: float = 5.0, tol: float = 1e-10) -> DeseasonResult:
    """Robust fit of the log-seasonality to log prices.

    Each cosine with phase is linear in a cosine/sine pair, so the fit is an
    iteratively reweighted linear least squares with Huber weights
    ``min(1, c s / |r|)``, ``c = 1.345`` and ``s = MAD / 0.6745``.
    """
    n = len(s)
    if n < 100:
        raise ValueError("deseasonalisation needs at least 100 observations")
    if np.any(s.prices <= 0):
        raise ValueError("prices must be positive for log deseasonalisation")
    y = np.log(s.prices)
    t = s.times
    X = _design(t, period_year, period_week)
    norms = np.linalg.norm(X, axis=0)
    # a regressor that vanishes on the grid would be rescaled into pure round-off
    if np.any(norms < 1e-8 * np.max(norms[:-1])):
        raise ValueError("seasonal regressors are collinear for these sampling times")
    sv = np.linalg.svd(X / norms, compute_uv=False)
    if sv[-1] < 1e-8 * sv[0]:
        raise ValueError("seasonal regressors are collinear for these sampling times")
    w = np.ones(n)
    coef = np.zeros(X.shape[1])
    it = 0
    for it in range(1, robust_iters + 1):
        sw = np.sqrt(w)
        new = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        r = y - X @ new
        scale = np.median(np.abs(r - np.median(r))) / 0.6745
        done = np.max(np.abs(new - coef)) <= tol * max(1.0, np.max(np.abs(new)))
        coef = new
        if scale <= 1e-12 * max(1.0, np.max(np.abs(y))):
            break
        w = np.minimum(1.0, HUBER_C * scale / np.maximum(np.abs(r), 1e-300))
        if done:
            break
    b1, tau1 = _to_amplitude_phase(coef[1], coef[2], period_year)
    b2, tau2 = _to_amplitude_phase(coef[3], coef[4], period_week)
    seas = Seasonality(float(coef[0]), b1, b2, float(coef[5]), tau1, tau2, period_year, period_week)
    resid = y - log_seasonality(seas, t)
    return DeseasonResult(seas, resid, w, it)


# ---------------------------------------------------------------------------
# Autocorrelation


def empirical_acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` (divide by ``n``)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if not 0 <= max_lag < n / 2:
        raise ValueError("max_lag must be below n / 2")
    d = x - x.mean()
    c0 = float(d @ d) / n
    if c0 <= 0:
        raise ValueError("zero variance series has no autocorrelation")
    return np.array([float(d[: n - h] @ d[h:]) / n / c0 for h in range(max_lag + 1)])


def gamma_acf_theoretical(nu: float, lam: float, h):
    """Autocorrelation of a gamma-kernel LSS process at lag ``h >= 0``."""
    if not nu > 0.5:
        raise ValueError("gamma ACF needs nu > 1/2")
    if not lam > 0:
        raise ValueError("gamma ACF needs lambda > 0")
    hs = np.asarray(h, dtype=float)
    if np.any(hs < 0):
        raise ValueError("lag must be nonnegative")
    out = np.ones(hs.shape)
    pos = hs > 0
    if np.any(pos):
        out[pos] = bessel_k_bar(nu - 0.5, 0.5 * lam * hs[pos]) / (2.0 ** (nu - 1.5) * gamma_fn(nu - 0.5))
    return float(out) if out.ndim == 0 else out


def carma21_acf(a1: float, a2: float, b0: float, h) -> np.ndarray:
    """ACF of a CARMA(2,1) kernel from the Lyapunov Gramian.

    ``exp(A h)`` is applied through the eigendecomposition of the companion
    matrix, so all lags are evaluated at once.
    """
    A = np.array([[0.0, 1.0], [-a2, -a1]])
    P = linalg.solve_continuous_lyapunov(A, -np.diag([0.0, 1.0]))
    b = np.array([b0, 1.0])
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    Pb = P @ b
    ev, V = np.linalg.eig(A)
    if abs(ev[0] - ev[1]) < 1e-8 * max(1.0, abs(ev[0])):
        num = np.array([b @ linalg.expm(A * hi) @ Pb for hi in hs])
    else:
        left = b @ V
        right = np.linalg.solve(V, Pb)
        num = np.real(np.exp(np.outer(hs, ev)) @ (left * right))
    return num / (b @ Pb)


@dataclass
class AcfFitResult:
    kernel: Kernel
    sse: float
    lags_used: int
    empirical_acf: np.ndarray
    fitted_acf: np.ndarray
    at_bound: bool = False
    params: dict = field(default_factory=dict)


_GAMMA_BOUNDS = [(0.5 + 1e-6, 20.0), (1e-6, 50.0)]
_CARMA_BOUNDS = [(1e-6, 50.0), (1e-6, 50.0), (-50.0, 50.0)]


def _near_bound(x, bounds) -> bool:
    return any(abs(v - lo) < 1e-4 * max(1.0, abs(lo)) or abs(v - hi) < 1e-4 * max(1.0, abs(hi))
               for v, (lo, hi) in zip(x, bounds))


def fit_kernel_acf(emp, family: str = "gamma", lags: int | None = None) -> AcfFitResult:
    """Least-squares fit of a kernel ACF to ``emp[1..lags]``.

    ``family`` is ``"gamma"`` or ``"carma21"``.  Bounded Nelder-Mead from a
    fixed set of starting points, so the result is deterministic.
    """
    emp = np.asarray(emp, dtype=float)
    lags = emp.size - 1 if lags is None else int(lags)
    if lags < 1 or lags > emp.size - 1:
        raise ValueError("lags must be between 1 and len(emp) - 1")
    if lags < 5:
        warnings.warn("fewer than 5 lags: the ACF fit is underdetermined", stacklevel=2)
    h = np.arange(1, lags + 1, dtype=float)
    target = emp[1: lags + 1]
    fam = family.lower()
    if fam == "gamma":
        bounds = _GAMMA_BOUNDS

        def model(x):
            return gamma_acf_theoretical(x[0], x[1], h)
        # starting lambda from the lag where the ACF crosses 1/e
        cross = np.argmax(target < math.exp(-1)) + 1 if np.any(target < math.exp(-1)) else lags
        l0 = min(max(2.0 / cross, 1e-3), 40.0)
        starts = [(nu0, l0 * f) for nu0 in (0.6, 0.8, 1.0, 1.5, 3.0) for f in (0.5, 1.0, 2.0)]
    elif fam == "carma21":
        bounds = _CARMA_BOUNDS

        def model(x):
            return carma21_acf(x[0], x[1], x[2], h)
        starts = [(a1, a2, b0) for a1 in (0.2, 1.0, 3.0) for a2 in (0.05, 0.5) for b0 in (0.1, 1.0)]
    else:
        raise ValueError(f"unknown ACF family {family!r}")

    def sse(x):
        if fam == "carma21":
            # non-stationary proposals rejected
            if not (x[0] > 0 and x[1] > 0):
                return 1e10
        try:
            r = target - model(x)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            return 1e10
        v = float(r @ r)
        return v if math.isfinite(v) else 1e10

    best = None
    for x0 in starts:
        res = optimize.minimize(sse, np.array(x0, dtype=float), method="Nelder-Mead", bounds=bounds,
                                options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    if fam == "gamma":
        kern = GammaKernel(x[0], x[1])
        params = {"nu": float(x[0]), "lambda": float(x[1])}
    else:
        kern = CarmaKernel([x[0], x[1]], [x[2], 1.0])
        params = {"a1": float(x[0]), "a2": float(x[1]), "b0": float(x[2])}
    at_bound = _near_bound(x, bounds)
    if at_bound:
        warnings.warn(f"{family} ACF fit stopped at a parameter bound: {params}", stacklevel=2)
    return AcfFitResult(kern, float(best.fun), lags, emp[: lags + 1].copy(),
                        np.concatenate([[1.0], model(x)]), at_bound, params)


# ---------------------------------------------------------------------------
# Synthetic data


def gh_gamma_process(gh: GhParams, nu: float, lam: float) -> LssProcess:
    """LSS process with gamma kernel ``(nu, lam)`` whose marginal law is ``gh``.

    Uses the GIG-OU volatility with companion kernel ``i*`` and the drift
    kernel ``ga(2 nu - 1, lam)`` so that ``sigma**2`` mixes the Gaussian part.
    """
    return LssProcess(GammaKernel(nu, lam), Brownian(0.0, gh.sigma ** 2),
                      GigOu(nu, lam, alphabar_to_chipsi(gh)), mu=gh.mu,
                      q=GammaDensityKernel(2 * nu - 1, lam), drift_weight=gh.gamma)


def synthetic_series(n: int, gh: GhParams, nu: float, lam: float, seasonality: Seasonality,
                     seed: int = 0, start: str = "2002-01-01") -> PriceSeries:
    """Daily prices ``Lambda(t) exp(Y_t)`` with ``Y`` from :func:`gh_gamma_process`."""
    p = gh_gamma_process(gh, nu, lam)
    sim = simulate(p, SimConfig(1.0, float(n - 1), 1, seed), check=False)
    y = sim.paths[0]
    prices = np.exp(log_seasonality(seasonality, np.arange(n, dtype=float)) + y)
    return PriceSeries(business_days(start, n), prices)


# ---------------------------------------------------------------------------
# Pipeline


_TAGS = {Family.GHYP: "GHYP", Family.NIG: "NIG", Family.StudentT: "t", Family.HYP: "HYP",
         Family.VG: "VG", Family.Gaussian: "Gaussian"}


def _model_row(m) -> dict:
    p = m.params
    return {"family": _TAGS[m.family_tag], "symmetric": m.symmetric,
            "lambda": p.lam, "alpha_bar": p.alpha_bar, "mu": p.mu, "sigma": p.sigma,
            "gamma": p.gamma, "n_params": m.n_params, "log_likelihood": m.log_likelihood,
            "aic": m.aic, "converged": m.converged}


def run_pipeline(s: PriceSeries, config: dict | None = None) -> dict:
    """Deseasonalise, fit and rank marginals, fit kernel ACFs; optionally write files.

    ``config`` keys: ``out_dir`` (write ``report.json`` and ``tables/*.csv``),
    ``max_lag`` (default ``floor(sqrt(n))``), ``robust_iters`` (default 20).
    """
    cfg = dict(config or {})
    if len(s) == 0:
        raise PipelineError(0, "input", "empty series")
    try:
        des = deseasonalize(s, cfg.get("robust_iters", 20))
    except ValueError as e:
        raise PipelineError(1, "deseasonalize", str(e)) from e
    x = des.residuals
    try:
        ranked = rank_by_aic(fit_all_families(x))
    except ValueError as e:
        raise PipelineError(2, "marginal fit", str(e)) from e
    max_lag = int(cfg.get("max_lag", math.isqrt(len(s))))
    try:
        emp = empirical_acf(x, max_lag)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fits = {fam: fit_kernel_acf(emp, fam, max_lag) for fam in ("gamma", "carma21")}
    except ValueError as e:
        raise PipelineError(3, "acf fit", str(e)) from e
    report = {
        "n": len(s),
        "seasonality": des.seasonality.to_dict(),
        "residual_mean": float(x.mean()),
        "residual_sd": float(x.std(ddof=1)),
        "marginals": [_model_row(m) for m in ranked],
        "top_family": _TAGS[ranked[0].family_tag],
        "acf": {fam: {"params": f.params, "sse": f.sse, "lags_used": f.lags_used,
                      "at_bound": f.at_bound} for fam, f in fits.items()},
    }
    out_dir = cfg.get("out_dir")
    if out_dir is not None:
        try:
            _write_report(out_dir, report, emp, fits)
        except OSError as e:
            raise PipelineError(4, "output", str(e)) from e
    return report


def _write_report(out_dir, report, emp, fits):
    tables = os.path.join(out_dir, "tables")
    os.makedirs(tables, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    cols = ["family", "symmetric", "lambda", "alpha_bar", "mu", "sigma", "gamma",
            "n_params", "log_likelihood", "aic"]
    with open(os.path.join(tables, "marginals.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(report["marginals"])
    with open(os.path.join(tables, "acf.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "empirical", "gamma", "carma21"])
        for h in range(emp.size):
            w.writerow([h, emp[h], fits["gamma"].fitted_acf[h], fits["carma21"].fitted_acf[h]])
