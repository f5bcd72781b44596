r"""Levy semistationary processes

.. math::

    Y_t = \mu + \int_{-\infty}^t g(t-s)\,\omega_{s-}\,dL_s
              + \gamma \int_{-\infty}^t q(t-s)\,\omega^2_s\,ds .

Simulation uses left-point sums over a truncated window with cell-averaged
kernel weights; for a Brownian driver the first cell is sampled exactly
(jointly Gaussian with the Brownian increment), which removes the leading
error of singular kernels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, signal

from .kernels import Kernel, SeparableKernel
from .levy import Brownian, LevyModel
from .volatility import ConstantVol, VolatilityModel

_CHUNK = 512


@dataclass
class LssProcess:
    """Kernel, volatility, driver and drift defining ``Y``.

    Parameters
    ----------
    g : Kernel or SeparableKernel
        Memory kernel.
    driver : LevyModel
        Driving Levy process ``L``.
    vol : VolatilityModel
        Model for ``omega**2``.
    mu : float
        Level.
    q : Kernel, optional
        Drift kernel acting on ``a_s = omega_s**2``.
    drift_weight : float
        Weight ``gamma`` of the drift term.
    """

    g: Kernel | SeparableKernel
    driver: LevyModel
    vol: VolatilityModel = field(default_factory=ConstantVol)
    mu: float = 0.0
    q: Kernel | None = None
    drift_weight: float = 0.0

    @property
    def stationary(self) -> bool:
        return isinstance(self.g, Kernel)


@dataclass(frozen=True)
class SimConfig:
    """Discretisation settings.

    ``truncation_eps`` bounds the fraction of ``int g**2`` lost by cutting the
    kernel at the window length.
    """

    dt: float
    horizon: float
    n_paths: int = 1
    seed: int = 0
    truncation_eps: float = 1e-6
    window: float | None = None

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ValueError("dt and horizon must be positive")
        if not self.dt <= self.horizon:
            raise ValueError("dt must not exceed the horizon")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")


@dataclass
class IntegrabilityReport:
    """Per-condition outcome with the computed quantity."""

    conditions: dict

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.conditions.values())

    def __str__(self):
        lines = [f"{k}: {'pass' if ok else 'FAIL'} ({v})" for k, (ok, v) in self.conditions.items()]
        return "\n".join(lines)


def _finite_quad(f, a=0.0, b=np.inf) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, limit=400)
        except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError):
            return math.inf
    return val if math.isfinite(val) and err < 1e-3 * max(1.0, abs(val)) else math.inf


def _gaussian_variance(driver: LevyModel) -> float:
    return driver.variance if isinstance(driver, Brownian) else 0.0


def check_integrability(p: LssProcess) -> IntegrabilityReport:
    """Evaluate the integrability conditions for ``p``.

    * ``gaussian``: ``b * int g**2 * E[omega**2]`` (Gaussian-part condition);
    * ``square``: ``int g**2 E[omega**2]`` for square integrability;
    * ``mean``: ``kappa1 * int g`` finite when the driver is not centred;
    * ``drift``: existence of ``a in (0, 1)`` with ``int q**(2a) < inf`` and
      ``int q**(2(1-a)) E[a_s**2] < inf``.
    """
    conds = {}
    if not p.stationary:
        conds["stationary_kernel"] = (False, "separable kernels are checked by the caller")
        return IntegrabilityReport(conds)
    g = p.g
    try:
        l2 = g.l2_norm_sq()
    except Exception:  # noqa: BLE001 - divergence surfaces in several ways
        l2 = math.inf
    m2 = p.vol.stationary_mean
    b = _gaussian_variance(p.driver)
    val = b * l2 * m2
    conds["gaussian"] = (math.isfinite(val), val)
    val = l2 * m2
    conds["square"] = (math.isfinite(val), val)
    if p.driver.kappa1 != 0:
        ig = g.integral()
        val = p.driver.kappa1 * ig * math.sqrt(m2)
        conds["mean"] = (math.isfinite(val), val)
    if p.q is not None and p.drift_weight != 0:
        e_a2 = p.vol.stationary_var + m2 ** 2
        found = None
        for a in np.linspace(0.05, 0.95, 19):
            i1 = _finite_quad(lambda x: p.q.eval(x) ** (2 * a) if x > 0 else 0.0)
            i2 = _finite_quad(lambda x: p.q.eval(x) ** (2 * (1 - a)) if x > 0 else 0.0)
            if math.isfinite(i1) and math.isfinite(i2 * e_a2):
                found = (float(a), i1, i2 * e_a2)
                break
        conds["drift"] = (found is not None, found)
    return IntegrabilityReport(conds)


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class SimResult:
    """Simulated paths on ``times = k * dt``, ``k = 0..n_steps``.

    ``dL[:, k]`` and ``omega2[:, k]`` belong to the cell ``[t_k, t_{k+1})``;
    ``omega2`` is evaluated at the cell's left endpoint.
    """

    times: np.ndarray
    paths: np.ndarray
    dL: np.ndarray
    omega2: np.ndarray
    dt: float


_MAX_WINDOW_CELLS = 20_000_000


def _window_cells(p: LssProcess, c: SimConfig) -> int:
    if c.window is not None:
        m = max(1, int(math.ceil(c.window / c.dt)))
    else:
        m = max(1, int(math.ceil(p.g.tail_point(c.truncation_eps) / c.dt)))
    if m > _MAX_WINDOW_CELLS:
        raise ValueError(f"truncation window needs {m} cells; set SimConfig.window or a larger "
                         "truncation_eps")
    return m


def _chunk_streams(seed: int, n_chunks: int):
    root = np.random.SeedSequence(seed)
    out = []
    for child in root.spawn(n_chunks):
        pre, post = child.spawn(2)
        out.append((np.random.default_rng(pre), np.random.default_rng(post)))
    return out


def simulate(p: LssProcess, c: SimConfig, check: bool = True) -> SimResult:
    """Simulate ``c.n_paths`` paths of ``Y`` on ``[0, c.horizon]``.

    The stochastic integral over ``(t - window, t)`` is a left-point sum
    ``sum g_m omega(s_j) dL_j`` with ``g_m`` the average of ``g`` on cell ``m``.
    Increments before time 0 come from an independent stream.  Streams are
    derived from ``(seed, chunk)`` with a fixed chunk size, so results are
    reproducible.

    Raises
    ------
    ValueError
        If the integrability check fails.
    """
    if check and p.stationary:
        rep = check_integrability(p)
        if not rep.passed:
            raise ValueError(f"integrability check failed:\n{rep}")
    dt = c.dt
    n = int(round(c.horizon / dt))
    if not p.stationary:
        return _simulate_separable(p, c, n)
    m = _window_cells(p, c)
    g = p.g
    gbar = g.cell_averages(m, dt)
    edges0 = np.array([0.0, dt])
    first_sq = float(g.sq_cell_integrals(edges0)[0])
    corr_sd = math.sqrt(max(first_sq - gbar[0] ** 2 * dt, 0.0) * _gaussian_variance(p.driver))
    qmass = None
    if p.q is not None and p.drift_weight != 0:
        qmass = p.q.cell_integrals(dt * np.arange(m + 1))

    n_chunks = (c.n_paths + _CHUNK - 1) // _CHUNK
    paths = np.empty((c.n_paths, n + 1))
    dL_out = np.empty((c.n_paths, n))
    om_out = np.empty((c.n_paths, n + 1))
    for ci, (rng_pre, rng_post) in enumerate(_chunk_streams(c.seed, n_chunks)):
        lo = ci * _CHUNK
        size = min(_CHUNK, c.n_paths - lo)
        om2 = p.vol.sample_vol_path(m + n + 1, dt, rng_pre, size=size)
        dL = np.empty((size, m + n))
        dL[:, :m] = p.driver.sample_increments(dt, (size, m), rng_pre)
        dL[:, m:] = p.driver.sample_increments(dt, (size, n), rng_post)
        x = np.sqrt(om2[:, :-1]) * dL
        conv = signal.fftconvolve(x, gbar[None, :], axes=1)
        # Y at grid index k uses cells k-1, k-2, ..., k-m (array index shifted by m).
        y = p.mu + conv[:, m - 1: m + n]
        if corr_sd > 0:
            z = np.empty((size, m + n))
            z[:, :m] = rng_pre.standard_normal((size, m))
            z[:, m:] = rng_post.standard_normal((size, n))
            y += corr_sd * np.sqrt(om2[:, m - 1: m + n]) * z[:, m - 1: m + n]
        if qmass is not None:
            d = signal.fftconvolve(om2[:, :-1], qmass[None, :], axes=1)
            y += p.drift_weight * d[:, m - 1: m + n]
        paths[lo: lo + size] = y
        dL_out[lo: lo + size] = dL[:, m:]
        om_out[lo: lo + size] = om2[:, m:]
    return SimResult(dt * np.arange(n + 1), paths, dL_out, om_out, dt)


def _simulate_separable(p: LssProcess, c: SimConfig, n: int) -> SimResult:
    """``Y_t = g1(t) * int_{t - W}^t g2(s) omega dL`` for separable kernels."""
    if c.window is None:
        raise ValueError("separable kernels need an explicit SimConfig.window")
    dt = c.dt
    m = max(1, int(math.ceil(c.window / dt)))
    s_left = dt * np.arange(-m, n)
    mid = s_left + 0.5 * dt
    g2 = np.asarray(p.g.g2(mid), dtype=float)
    g1 = np.asarray(p.g.g1(dt * np.arange(n + 1)), dtype=float)
    n_chunks = (c.n_paths + _CHUNK - 1) // _CHUNK
    paths = np.empty((c.n_paths, n + 1))
    dL_out = np.empty((c.n_paths, n))
    om_out = np.empty((c.n_paths, n + 1))
    for ci, (rng_pre, rng_post) in enumerate(_chunk_streams(c.seed, n_chunks)):
        lo = ci * _CHUNK
        size = min(_CHUNK, c.n_paths - lo)
        om2 = p.vol.sample_vol_path(m + n + 1, dt, rng_pre, size=size)
        dL = np.empty((size, m + n))
        dL[:, :m] = p.driver.sample_increments(dt, (size, m), rng_pre)
        dL[:, m:] = p.driver.sample_increments(dt, (size, n), rng_post)
        cs = np.cumsum(g2[None, :] * np.sqrt(om2[:, :-1]) * dL, axis=1)
        acc = np.concatenate([np.zeros((size, 1)), cs], axis=1)
        # window [t_k - W, t_k): cells k .. k + m - 1 in array indexing
        idx = np.arange(n + 1)
        integ = acc[:, idx + m] - acc[:, idx]
        paths[lo: lo + size] = p.mu + g1[None, :] * integ
        dL_out[lo: lo + size] = dL[:, m:]
        om_out[lo: lo + size] = om2[:, m:]
    return SimResult(dt * np.arange(n + 1), paths, dL_out, om_out, dt)


# ---------------------------------------------------------------------------
# Moments


@dataclass
class ConditionalMoments:
    mean: float
    var: float
    cov: Callable[[float], float]


def _cell_product_integrals(g: Kernel, h: float, edges: np.ndarray) -> np.ndarray:
    """``int_cell g(x + h) g(x) dx`` per cell."""
    lo, hi = edges[:-1], edges[1:]
    nodes, weights = np.polynomial.legendre.leggauss(16)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    out = half * ((g._eval(x + h) * g._eval(x)) @ weights)
    a = g._singular_exponent()
    if a is not None and lo[0] == 0:
        out[0] = integrate.quad(lambda u: g._eval(np.asarray(u + h)) * g._eval_regular(u),
                                0.0, hi[0], weight="alg", wvar=(a, 0.0))[0] if h > 0 else \
            float(g.sq_cell_integrals(edges[:2])[0])
    return out


def moments_conditional(p: LssProcess, omega2, dt: float) -> ConditionalMoments:
    """Moments of ``Y_t`` given the volatility path.

    Parameters
    ----------
    omega2 : array_like
        ``omega2[m]`` is ``omega**2`` on the cell ``[t - (m+1) dt, t - m dt)``,
        most recent first; the path must cover the kernel's support.

    Returns
    -------
    ConditionalMoments
        ``E(Y|omega) = mu + kappa1 int g omega + gamma int q omega**2``,
        ``Var(Y|omega) = kappa2 int g**2 omega**2`` and
        ``cov(h) = kappa2 int g(x+h) g(x) omega**2_{t-x} dx``.
    """
    om2 = np.asarray(omega2, dtype=float)
    if om2.ndim != 1 or om2.size < 2:
        raise ValueError("volatility path too short")
    g = p.g
    edges = dt * np.arange(om2.size + 1)
    if g.tail_point(1e-6) > edges[-1]:
        raise ValueError("volatility path shorter than the kernel window")
    k1, k2 = p.driver.kappa1, p.driver.kappa2
    mean = p.mu + k1 * float(g.cell_integrals(edges) @ np.sqrt(om2))
    if p.q is not None and p.drift_weight != 0:
        mean += p.drift_weight * float(p.q.cell_integrals(edges) @ om2)
    var = k2 * float(g.sq_cell_integrals(edges) @ om2)

    def cov(h: float) -> float:
        if h == 0:
            return var
        return k2 * float(_cell_product_integrals(g, h, edges) @ om2)

    return ConditionalMoments(mean, var, cov)


@dataclass
class StationaryMoments:
    mean: float
    var: float
    acf: Callable
    flags: tuple = ()


def _mean_omega(vol: VolatilityModel, rng=None) -> tuple[float, bool]:
    if isinstance(vol, ConstantVol):
        return vol.level, False
    rng = np.random.default_rng(12345) if rng is None else rng
    w = np.sqrt(vol.sample_vol_path(2000, 0.5 / getattr(vol, "lam", 1.0), rng, size=64))
    return float(w.mean()), True


def moments_stationary(p: LssProcess, n_grid: int = 1000) -> StationaryMoments:
    """Stationary mean, variance and autocorrelation of ``Y``.

    With ``kappa1 = 0`` or constant volatility the autocorrelation is
    ``overlap(h) / l2_norm_sq``.  Otherwise the double integral against the
    autocovariance of ``omega`` is evaluated on a grid, using a Monte Carlo
    estimate of that autocovariance (flagged ``"mc_acvf"``).
    """
    g = p.g
    k1, k2 = p.driver.kappa1, p.driver.kappa2
    m2 = p.vol.stationary_mean
    l2 = g.l2_norm_sq()
    flags = []
    mean = p.mu
    if k1 != 0:
        e_om, is_mc = _mean_omega(p.vol)
        if is_mc:
            flags.append("mc_mean_omega")
        mean += k1 * e_om * g.integral()
    if p.q is not None and p.drift_weight != 0:
        mean += p.drift_weight * m2 * p.q.integral()
        flags.append("drift_variance_ignored")
    base_var = k2 * m2 * l2
    if k1 == 0 or isinstance(p.vol, ConstantVol):
        return StationaryMoments(mean, base_var, lambda h: g.acf(h), tuple(flags))

    # kappa1^2 int int g(x + h) g(y) gamma_omega(x - y) dx dy on a grid
    flags.append("mc_acvf")
    T = g.tail_point(1e-6)
    dx = T / n_grid
    gb = g.cell_averages(n_grid, dx)
    rng = np.random.default_rng(2024)
    w = np.sqrt(p.vol.sample_vol_path(4 * n_grid, dx, rng, size=32))
    w = w - w.mean()
    acv = np.array([np.mean(w[:, : w.shape[1] - L] * w[:, L:]) for L in range(n_grid)])
    acv_full = np.concatenate([acv[:0:-1], acv])
    # s[i] = sum_j gb[j] * gamma_omega((i - j) dx)
    s_conv = signal.fftconvolve(acv_full, gb)[n_grid - 1: 2 * n_grid - 1]

    def extra(h_cells: int) -> float:
        if h_cells >= n_grid:
            return 0.0
        return k1 ** 2 * dx * dx * float(gb[h_cells:] @ s_conv[: n_grid - h_cells])

    v0 = base_var + extra(0)

    def acf(h):
        hs = np.atleast_1d(np.asarray(h, dtype=float))
        out = np.array([(k2 * m2 * g.overlap(hi) + extra(int(round(hi / dx)))) / v0 for hi in hs])
        return float(out[0]) if np.ndim(h) == 0 else out

    return StationaryMoments(mean, v0, acf, tuple(flags))


# ---------------------------------------------------------------------------
# Semimartingale structure


@dataclass
class SemimartingaleReport:
    is_semimartingale: bool
    g0: float
    q0: float | None
    conditions: dict
    kappa1: float

    def martingale_part(self, sim: SimResult) -> np.ndarray:
        """``g(0+) int_0^t omega_{s-} d(L_s - E L_s)`` along simulated paths."""
        if not self.is_semimartingale:
            raise ValueError("not a semimartingale")
        incr = np.sqrt(sim.omega2[:, :-1]) * (sim.dL - self.kappa1 * sim.dt)
        return self.g0 * np.concatenate([np.zeros((incr.shape[0], 1)), np.cumsum(incr, axis=1)], axis=1)


def semimartingale_decompose(p: LssProcess) -> SemimartingaleReport:
    """Check the sufficient semimartingale conditions (i)-(v).

    (i) ``E|L_1| < inf``; (ii) ``g(0+)`` and ``q(0+)`` finite; (iii) ``g`` absolutely
    continuous with ``g'`` square integrable; (iv) ``g'(t - s) omega_s`` square
    integrable; (v) ``q'(t - s) a_s`` integrable.
    """
    g = p.g
    if not p.stationary:
        return SemimartingaleReport(False, math.nan, None, {"stationary_kernel": False}, p.driver.kappa1)
    reg = g.regularity()
    conds = {"i_first_moment": math.isfinite(p.driver.kappa1)}
    q0 = None
    conds["ii_finite_at_zero"] = reg.finite_at_zero
    if p.q is not None and p.drift_weight != 0:
        qreg = p.q.regularity()
        q0 = qreg.g_at_zero
        conds["ii_finite_at_zero"] = conds["ii_finite_at_zero"] and qreg.finite_at_zero
        conds["v_drift_derivative"] = qreg.finite_at_zero and math.isfinite(
            _finite_quad(lambda x: abs(float(p.q.derivative(x))), 1e-12))
    conds["iii_derivative_l2"] = reg.derivative_sq_integrable
    conds["iv_weighted_derivative"] = reg.derivative_sq_integrable and math.isfinite(p.vol.stationary_mean)
    ok = all(conds.values())
    return SemimartingaleReport(ok, reg.g_at_zero, q0, conds, p.driver.kappa1)


@dataclass
class QuadraticVariation:
    times: np.ndarray
    analytic: np.ndarray
    realized: np.ndarray


def quadratic_variation(sim: SimResult, p: LssProcess) -> QuadraticVariation:
    """Analytic ``g(0+)**2 int omega**2 d[L]`` next to realised ``sum (dY)**2``.

    For a Brownian driver ``d[L] = b ds``; for pure-jump drivers the squared
    cell increments stand in for the squared jumps.

    Raises
    ------
    ValueError
        If ``p`` fails the semimartingale conditions.
    """
    rep = semimartingale_decompose(p)
    if not rep.is_semimartingale:
        raise ValueError(f"not a semimartingale: {rep.conditions}")
    om2 = sim.omega2[:, :-1]
    if isinstance(p.driver, Brownian):
        dq = p.driver.variance * om2 * sim.dt
    else:
        dq = om2 * sim.dL ** 2
    zero = np.zeros((om2.shape[0], 1))
    analytic = rep.g0 ** 2 * np.concatenate([zero, np.cumsum(dq, axis=1)], axis=1)
    realized = np.concatenate([zero, np.cumsum(np.diff(sim.paths, axis=1) ** 2, axis=1)], axis=1)
    return QuadraticVariation(sim.times, analytic, realized)


# ---------------------------------------------------------------------------
# Superposition


class Superposition:
    """Weighted sum ``sum w_i Y^(i)`` of independent LSS factors.

    Raises
    ------
    ValueError
        Unless weights are nonnegative and sum to one.
    """

    def __init__(self, processes, weights):
        w = np.asarray(weights, dtype=float)
        if len(processes) != w.size or w.size == 0:
            raise ValueError("one weight per factor is required")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("weights must be nonnegative and sum to 1")
        self.processes = list(processes)
        self.weights = w

    def simulate(self, c: SimConfig) -> np.ndarray:
        seeds = np.random.SeedSequence(c.seed).generate_state(len(self.processes))
        out = None
        for w, proc, s in zip(self.weights, self.processes, seeds):
            cfg = SimConfig(c.dt, c.horizon, c.n_paths, int(s), c.truncation_eps, c.window)
            y = w * simulate(proc, cfg).paths
            out = y if out is None else out + y
        return out

    def moments(self) -> StationaryMoments:
        ms = [moments_stationary(proc) for proc in self.processes]
        mean = float(sum(w * m.mean for w, m in zip(self.weights, ms)))
        parts = [w * w * m.var for w, m in zip(self.weights, ms)]
        var = float(sum(parts))

        def acf(h):
            return sum(pv * m.acf(h) for pv, m in zip(parts, ms)) / var

        return StationaryMoments(mean, var, acf)


def superpose(processes, weights) -> Superposition:
    return Superposition(processes, weights)


# ---------------------------------------------------------------------------
# Path I/O

_MAGIC = b"LSSP"
_VERSION = 1


def write_paths_csv(path, times, paths) -> None:
    """CSV with a ``time`` column followed by one column per path."""
    paths = np.atleast_2d(paths)
    header = "time," + ",".join(f"path{i}" for i in range(paths.shape[0]))
    np.savetxt(path, np.column_stack([times, paths.T]), delimiter=",", header=header,
               comments="", fmt="%.17g")


def read_paths_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:].T


def write_paths_binary(path, paths, dt: float) -> None:
    """Little-endian binary: magic, version, n_paths, n_steps, dt, then float64 rows."""
    paths = np.atleast_2d(np.asarray(paths, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array([_VERSION, paths.shape[0], paths.shape[1]], dtype="<u4").tobytes())
        fh.write(np.array([dt], dtype="<f8").tobytes())
        fh.write(paths.tobytes())


def read_paths_binary(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not an LSSP file")
        version, n_paths, n_steps = np.frombuffer(fh.read(12), dtype="<u4")
        if version != _VERSION:
            raise ValueError(f"unsupported LSSP version {version}")
        dt = float(np.frombuffer(fh.read(8), dtype="<f8")[0])
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(int(n_paths), int(n_steps))
    return data, dt
