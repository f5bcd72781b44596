r"""European options on forwards by Fourier inversion.

With :math:`X = \log F_\tau(T)` and :math:`z = \alpha + iy` the price is

.. math::

    C_t = e^{-r(\tau - t)} \frac{1}{\pi}\int_0^\infty
          \operatorname{Re}\bigl[\hat p_\alpha(y)\, E_Q[e^{zX}\mid\mathcal F_t]\bigr]\,dy,

where :math:`\hat p_\alpha(y) = \int p(x) e^{-(\alpha + iy)x}\,dx`.  For a call
or put with strike :math:`K` this is
:math:`K^{1-z}/(z(z-1))`, valid for :math:`\alpha > 1` (call) or
:math:`\alpha < 0` (put).  The conditional moment generating function is
affine in :math:`Z_t` for constant and BNS volatility.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .forward import ForwardSurface, MeasureMode, _gl, g2_integral
from .spot import SpotKind
from .volatility import ConstantVol
from .levy import CompoundPoissonExp


class PayoffKind(enum.Enum):
    Call = "call"
    Put = "put"
    Custom = "custom"


@dataclass(frozen=True)
class OptionSpec:
    """European option on ``F(T)`` exercised at ``tau``.

    ``payoff_fn`` maps the forward price to the payoff for ``Custom``; its
    damped transform is computed numerically on ``support`` (log-price range).
    """

    kind: PayoffKind
    strike: float
    tau: float
    maturity: float
    rate: float = 0.0
    damping_alpha: float = 1.5
    payoff_fn: Callable | None = None
    support: tuple = (-10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if not self.tau <= self.maturity:
            raise ValueError("exercise must not be after the forward maturity")
        if self.kind is PayoffKind.Custom:
            if self.payoff_fn is None:
                raise ValueError("custom payoff needs payoff_fn")
        elif not self.strike > 0:
            raise ValueError("strike must be positive")
        a = self.damping_alpha
        if self.kind is PayoffKind.Call and not a > 1:
            raise ValueError("call damping needs alpha > 1 in this transform convention")
        if self.kind is PayoffKind.Put and not a < 0:
            raise ValueError("put damping needs alpha < 0 in this transform convention")

    def payoff(self, f):
        f = np.asarray(f, dtype=float)
        if self.kind is PayoffKind.Call:
            return np.maximum(f - self.strike, 0.0)
        if self.kind is PayoffKind.Put:
            return np.maximum(self.strike - f, 0.0)
        return np.asarray(self.payoff_fn(f), dtype=float)


@dataclass(frozen=True)
class FourierGrid:
    """Trapezoid grid ``y_j = j * y_max / (n_points / 2)`` on ``[0, y_max]``.

    The integrand is Hermitian, so the symmetric grid on ``[-y_max, y_max]``
    collapses to its nonnegative half.
    """

    n_points: int = 4096
    y_max: float = 200.0
    rtol: float = 1e-5

    def __post_init__(self):
        n = self.n_points
        if n < 8 or n & (n - 1):
            raise ValueError("n_points must be a power of two >= 8")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")

    @property
    def spacing(self) -> float:
        return self.y_max / (self.n_points // 2)

    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_points // 2 + 1)

    def widened(self) -> "FourierGrid":
        return FourierGrid(2 * self.n_points, 2 * self.y_max, self.rtol)


def payoff_transform(o: OptionSpec, damping: float | None = None) -> Callable:
    """``y -> int p(e^x) exp(-(alpha + i y) x) dx`` for the payoff of ``o``."""
    a = o.damping_alpha if damping is None else damping
    if o.kind is PayoffKind.Custom:
        lo, hi = o.support
        x = np.linspace(lo, hi, 20001)
        px = o.payoff(np.exp(x)) * np.exp(-a * x)
        if abs(px[0]) > 1e-8 * np.max(np.abs(px)) or abs(px[-1]) > 1e-8 * np.max(np.abs(px)):
            raise ValueError("damped custom payoff is not negligible at the support edges")

        def transform(y):
            y = np.atleast_1d(np.asarray(y, dtype=float))
            out = integrate.trapezoid(px[None, :] * np.exp(-1j * y[:, None] * x[None, :]), x, axis=1)
            return out
        return transform
    if o.kind is PayoffKind.Call and not a > 1:
        raise ValueError("damped call transform needs alpha > 1")
    if o.kind is PayoffKind.Put and not a < 0:
        raise ValueError("damped put transform needs alpha < 0")
    logk = math.log(o.strike)

    def transform(y):
        z = a + 1j * np.asarray(y, dtype=float)
        return np.exp((1.0 - z) * logk) / (z * (z - 1.0))
    return transform


def black76(forward, strike, variance, discount=1.0, kind="call"):
    """Black-76 price with total log-variance ``variance``."""
    f = np.asarray(forward, dtype=float)
    sd = math.sqrt(variance)
    if sd == 0:
        intrinsic = np.maximum(f - strike, 0.0) if kind == "call" else np.maximum(strike - f, 0.0)
        return discount * intrinsic
    d1 = (np.log(f / strike) + 0.5 * variance) / sd
    d2 = d1 - sd
    call = f * special.ndtr(d1) - strike * special.ndtr(d2)
    if kind == "call":
        return discount * call
    return discount * (call - f + strike)


@dataclass
class _MgfTerms:
    """``log E[e^{zX}] = z D + z^2/2 a + z/2 b + sum_v w phi(z^2/2 A(v) + z/2 B(v))``."""

    D: np.ndarray
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    A: np.ndarray
    B: np.ndarray


def _check_surface(fs: ForwardSurface, o: OptionSpec):
    if fs.model.kind is not SpotKind.Geometric:
        raise ValueError("option pricing needs a geometric spot model")
    if fs.measure.mode is not MeasureMode.BrownianGirsanov:
        raise ValueError("option pricing needs Girsanov mode with a Brownian driver")
    if not fs.t <= o.tau:
        raise ValueError("exercise time before the current time")


def _mgf_terms(fs: ForwardSurface, tau: float, T: float, n_v: int = 128) -> _MgfTerms:
    t = fs.t
    vol = fs.model.core.vol
    phi_half_h = fs.future_vol_term(tau, T, lambda v: 0.5 * fs.h_integral(T, v, T))
    D = (fs.model.core.mu + fs.realized(T) + fs.theta_term(T)
         + math.log(fs.model.level(T)) + float(phi_half_h))
    if isinstance(vol, ConstantVol):
        c2 = vol.level ** 2
        a = np.full(fs.state.n_paths, c2 * g2_integral(fs.kernel, T, t, tau) if tau > t else 0.0)
        b = np.full(fs.state.n_paths, c2 * g2_integral(fs.kernel, T, tau, T) if T > tau else 0.0)
        empty = np.zeros(0)
        return _MgfTerms(D, a, b, empty, empty, empty)
    lam = vol.lam
    h_tau = fs.h_integral(T, tau, T) if T > tau else 0.0
    a = fs.state.z * (fs.h_integral(T, t, tau) if tau > t else 0.0)
    b = fs.state.z * math.exp(-lam * (tau - t)) * h_tau
    if tau == t:
        empty = np.zeros(0)
        return _MgfTerms(D, a, b, empty, empty, empty)
    u, w = _gl(n_v)
    v = t + 0.5 * (tau - t) * (1.0 + u)
    A = np.asarray(fs.h_integral(T, v, tau), dtype=float)
    B = np.exp(-lam * (tau - v)) * h_tau
    return _MgfTerms(D, a, b, 0.5 * (tau - t) * w, A, B)


def log_mgf(fs: ForwardSurface, terms: _MgfTerms, z) -> np.ndarray:
    """``log E[exp(z X)]`` for complex ``z``; shape ``(n_paths, len(z))``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = (terms.D[:, None] * z + 0.5 * z * z * terms.a[:, None] + 0.5 * z * terms.b[:, None])
    if terms.w.size:
        arg = 0.5 * z[:, None] ** 2 * terms.A[None, :] + 0.5 * z[:, None] * terms.B[None, :]
        out = out + (fs.driver_cumulant(arg) @ terms.w)[None, :]
    return out


def _check_strip(fs: ForwardSurface, terms: _MgfTerms, alpha: float):
    if not terms.w.size:
        return
    lo, hi = fs.model.core.vol.sub.strip()
    if fs.measure.eta:
        hi = hi - fs.measure.eta
    worst = float(np.max(0.5 * alpha ** 2 * terms.A + 0.5 * alpha * terms.B))
    if not worst < hi:
        raise ValueError(f"damping alpha={alpha} puts the volatility cumulant outside its strip "
                         f"(needs < {hi}, got {worst})")


def _integrate(fs, terms, o, grid: FourierGrid):
    y = grid.nodes()
    z = o.damping_alpha + 1j * y
    vals = np.real(payoff_transform(o)(y)[None, :] * np.exp(log_mgf(fs, terms, z)))
    h = grid.spacing
    full = h * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1])) / math.pi
    half = 2 * h * (vals[:, ::2].sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1])) / math.pi
    tail = np.abs(vals[:, -1]) * grid.y_max / math.pi
    scale = np.maximum(np.abs(full), 1e-300)
    err = np.abs(full - half) + tail + 64 * np.finfo(float).eps * scale
    return full, err


def price_option(o: OptionSpec, fs: ForwardSurface, grid: FourierGrid | None = None) -> dict:
    """Fourier price and an error estimate per state path.

    The error estimate adds the change from halving the grid resolution and a
    tail bound ``|f(y_max)| y_max / pi``.  The halving term bounds the
    aliasing error of the coarser grid, so the estimate is conservative.  If it
    exceeds ``grid.rtol * max(price, 1e-3 * strike)``, the grid is widened once
    before failing.
    """
    grid = FourierGrid() if grid is None else grid
    _check_surface(fs, o)
    terms = _mgf_terms(fs, o.tau, o.maturity)
    _check_strip(fs, terms, o.damping_alpha)
    disc = math.exp(-o.rate * (o.tau - fs.t))
    for attempt in range(2):
        val, err = _integrate(fs, terms, o, grid)
        scale = np.maximum(np.abs(val), 1e-3 * (o.strike if o.kind is not PayoffKind.Custom else 1.0))
        if np.all(err <= grid.rtol * scale):
            break
        if attempt == 0:
            grid = grid.widened()
    else:
        raise ValueError(f"Fourier truncation error {float(np.max(err)):.3g} above tolerance")
    price, error = disc * val, disc * err
    if price.size == 1:
        return {"price": float(price[0]), "error_estimate": float(error[0])}
    return {"price": price, "error_estimate": error}


def black76_variance(fs: ForwardSurface, tau: float, T: float) -> float:
    """``c**2 int_t^tau G(T,s)**2 ds`` for constant volatility ``c``."""
    vol = fs.model.core.vol
    if not isinstance(vol, ConstantVol):
        raise ValueError("Black-76 variance needs constant volatility")
    return vol.level ** 2 * g2_integral(fs.kernel, T, fs.t, tau) if tau > fs.t else 0.0


def price_option_mc(o: OptionSpec, fs: ForwardSurface, n_paths: int, seed: int = 0,
                    n_interp: int = 2049) -> dict:
    """Monte Carlo price from the exact solution of the risk-neutral forward dynamics.

    Given the volatility path, ``log F_tau(T)`` is Gaussian with variance
    ``V = int_t^tau G**2 omega**2`` plus the jump contributions
    ``sum H_T(v_k, v_k) J_k / 2`` minus their compensator.  Supports constant
    volatility and BNS volatility with compound Poisson exponential jumps,
    whose jump times are sampled exactly.  Uses path 0 of the state.
    """
    _check_surface(fs, o)
    t, tau, T = fs.t, o.tau, o.maturity
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    logf = float(np.log(fs.forward_geometric_gaussian(T))[0])
    vol = fs.model.core.vol
    if isinstance(vol, ConstantVol):
        V = np.full(n_paths, black76_variance(fs, tau, T))
        x = logf - 0.5 * V + np.sqrt(V) * rng.standard_normal(n_paths)
    else:
        sub = vol.sub.esscher(fs.measure.eta) if fs.measure.eta else vol.sub
        if not isinstance(sub, CompoundPoissonExp):
            raise ValueError("exact Monte Carlo needs compound Poisson exponential jumps")
        lam = vol.lam
        z0 = float(fs.state.z[0])
        vg = np.linspace(t, tau, n_interp)
        A = np.asarray(fs.h_integral(T, vg, tau), dtype=float) if tau > t else np.zeros(n_interp)
        H = np.asarray(fs.h_integral(T, vg, T), dtype=float)
        base = z0 * (fs.h_integral(T, t, tau) if tau > t else 0.0)
        comp = float(fs.future_vol_term(t, tau, lambda v: 0.5 * fs.h_integral(T, v, T)))
        counts = rng.poisson(lam * sub.rate * (tau - t), n_paths)
        tot = int(counts.sum())
        idx = np.repeat(np.arange(n_paths), counts)
        times = rng.uniform(t, tau, tot)
        sizes = rng.exponential(1.0 / sub.jump_rate, tot)
        V = base + np.bincount(idx, weights=sizes * np.interp(times, vg, A), minlength=n_paths)
        jumps = np.bincount(idx, weights=0.5 * sizes * np.interp(times, vg, H), minlength=n_paths)
        x = logf - 0.5 * V + np.sqrt(V) * rng.standard_normal(n_paths) + jumps - comp
    pay = o.payoff(np.exp(x)) * math.exp(-o.rate * (tau - t))
    return {"price": float(pay.mean()), "std_error": float(pay.std(ddof=1) / math.sqrt(n_paths))}
