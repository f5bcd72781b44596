r"""Forward prices :math:`F_t(T) = E_Q[S_T \mid \mathcal F_t]`.

Two pricing measures are supported:

* ``GeneralEsscher``: the driver is Esscher-tilted by ``theta`` and the
  volatility subordinator by ``eta``;
* ``BrownianGirsanov``: for a standard Brownian driver,
  :math:`dB = dW + \theta/\omega_{s-}\,ds` on :math:`s \ge 0`, with the
  volatility subordinator Esscher-tilted by ``eta``.

Conditioning information is held in a :class:`ForwardState`: the realised
volatility and driver increments over a truncation window, plus the current
squared volatility :math:`Z_t`.  The realised stochastic integral
:math:`\int_{-\infty}^t G(T,s)\omega_{s-}\,dL_s` is recomputed for every
maturity with the same cell-average weights used by the simulator, so
``F_t(t)`` equals the spot built from the same state.

Deterministic integrals in :math:`s` use Gauss-Legendre rules (Gauss-Jacobi
when :math:`g^2` is singular at the origin), doubled from 128 nodes until the
result is stable to ``1e-8`` relative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .kernels import Kernel, OUKernel, CarmaKernel, GammaKernel, SeparableKernel
from .levy import Brownian, EsscherParams, esscher_triplet
from .lss import _MAX_WINDOW_CELLS
from .spot import SpotKind, SpotModel, log_seasonality, seasonality
from .volatility import BnsOu, ConstantVol

_N0 = 128
_NMAX = 4096
_RTOL = 1e-8


class MeasureMode(enum.Enum):
    GeneralEsscher = "esscher"
    BrownianGirsanov = "girsanov"


@dataclass(frozen=True)
class PricingMeasure:
    esscher: EsscherParams = field(default_factory=EsscherParams)
    mode: MeasureMode = MeasureMode.GeneralEsscher

    def __post_init__(self):
        object.__setattr__(self, "mode", MeasureMode(self.mode))

    @property
    def theta(self) -> float:
        return self.esscher.theta

    @property
    def eta(self) -> float:
        return self.esscher.eta


def check_measure(model: SpotModel, measure: PricingMeasure) -> None:
    """Raise ``ValueError`` if ``measure`` is not admissible for ``model``.

    The Girsanov mode needs a standard Brownian driver and a volatility that
    is bounded away from zero on bounded intervals (constant ``c > 0`` or a
    BNS model, whose paths satisfy ``omega2_s >= Z_t exp(-lam (s - t))``),
    which is enough for the Novikov condition on ``theta / omega``.
    """
    core = model.core
    if core.drift_weight != 0 and core.q is not None:
        raise ValueError("forward pricing does not cover the drift term")
    vol = core.vol
    if not isinstance(vol, (ConstantVol, BnsOu)):
        raise ValueError(f"forward pricing supports constant and BNS volatility, not {vol!r}")
    if measure.eta != 0:
        if not isinstance(vol, BnsOu):
            raise ValueError("eta requires a stochastic volatility model")
        lo, hi = vol.sub.strip()
        if not lo < measure.eta < hi:
            raise ValueError(f"eta={measure.eta} outside the subordinator strip ({lo}, {hi})")
    if measure.mode is MeasureMode.BrownianGirsanov:
        d = core.driver
        if not (isinstance(d, Brownian) and d.drift == 0 and d.variance == 1):
            raise ValueError("Girsanov mode needs a standard Brownian driver")
        if isinstance(vol, ConstantVol) and vol.level == 0 and measure.theta != 0:
            raise ValueError("Novikov condition fails: theta / omega is unbounded for zero volatility")
    else:
        lo, hi = core.driver.strip()
        if not lo < measure.theta < hi:
            raise ValueError(f"theta={measure.theta} outside the driver strip ({lo}, {hi})")


# ---------------------------------------------------------------------------
# State and history


@dataclass
class ForwardState:
    """Information at time ``t`` for ``n_paths`` scenarios.

    Parameters
    ----------
    t : float
        Current time (``t >= 0``; the measure change starts at 0).
    z : array
        Current squared volatility ``omega2_t`` per path.
    dt : float, optional
        Cell width of the history.
    omega2, increments : array, optional
        Shape ``(n_paths, m)``: ``omega2`` at the left end of each past cell and
        the driver increment over it, oldest first; the last cell ends at ``t``.
    core : array, optional
        ``Y_t - mu`` per path.  Enough on its own for affine kernels.
    """

    t: float
    z: np.ndarray
    dt: float | None = None
    omega2: np.ndarray | None = None
    increments: np.ndarray | None = None
    core: np.ndarray | None = None

    def __post_init__(self):
        self.t = float(self.t)
        if self.t < 0:
            raise ValueError("forward states live at t >= 0")
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if self.omega2 is not None:
            self.omega2 = np.atleast_2d(np.asarray(self.omega2, dtype=float))
            self.increments = np.atleast_2d(np.asarray(self.increments, dtype=float))
            if self.omega2.shape != self.increments.shape:
                raise ValueError("omega2 and increments histories must have equal shape")
            if self.dt is None or not self.dt > 0:
                raise ValueError("a history needs dt > 0")
        elif self.core is None:
            raise ValueError("a state needs either a history or the core value")
        if self.core is not None:
            self.core = np.atleast_1d(np.asarray(self.core, dtype=float))

    @property
    def n_paths(self) -> int:
        return self.z.size

    def path(self, i: int) -> "ForwardState":
        """Single-scenario copy."""
        sl = slice(i, i + 1)
        return ForwardState(
            self.t, self.z[sl], self.dt,
            None if self.omega2 is None else self.omega2[sl],
            None if self.increments is None else self.increments[sl],
            None if self.core is None else self.core[sl],
        )


@dataclass
class History:
    """Simulated volatility and driver increments on ``s_k = (k - m) dt``.

    ``omega2[:, k]`` is the squared volatility at ``s_k`` and
    ``increments[:, k]`` the driver increment over ``[s_k, s_{k+1})``; index
    ``m`` corresponds to time 0.
    """

    dt: float
    m: int
    omega2: np.ndarray
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1] - self.m

    def state(self, k: int) -> ForwardState:
        """State at ``t = k dt`` with the last ``m`` cells as history."""
        if not 0 <= k <= self.n_steps:
            raise ValueError("state index outside the simulated range")
        j = self.m + k
        return ForwardState(k * self.dt, self.omega2[:, j], self.dt,
                            self.omega2[:, j - self.m: j], self.increments[:, j - self.m: j])


def _window_cells(model: SpotModel, dt: float, window: float | None, eps: float = 1e-8) -> int:
    g = model.core.g
    if window is None:
        if not isinstance(g, Kernel):
            raise ValueError("separable kernels need an explicit window")
        window = g.tail_point(eps)
    m = max(1, int(math.ceil(window / dt)))
    if m > _MAX_WINDOW_CELLS:
        raise ValueError(f"truncation window needs {m} cells; pass an explicit window")
    return m


def simulate_history(model: SpotModel, measure: PricingMeasure, horizon: float, dt: float,
                     n_paths: int, seed: int = 0, window: float | None = None,
                     under: str = "Q") -> History:
    """Simulate the increments the forward formulas condition on.

    Before time 0 everything is stationary under the physical measure.  On
    ``[0, horizon]`` the increments follow ``Q`` (``under="Q"``) or ``P``.  In
    Girsanov mode the stored driver increments are those of ``B``, i.e.
    ``dW + theta / omega ds`` under ``Q``.
    """
    if under not in ("P", "Q"):
        raise ValueError("under must be 'P' or 'Q'")
    check_measure(model, measure)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    core = model.core
    vol = core.vol
    m = _window_cells(model, dt, window)
    n = int(round(horizon / dt))
    q = under == "Q"
    pre = vol.sample_vol_path(m + 1, dt, rng, size=n_paths)
    if isinstance(vol, BnsOu):
        post = vol.sample_future(pre[:, -1], n, dt, rng, eta=measure.eta if q else 0.0)
    else:
        post = vol.sample_future(pre[:, -1], n, dt, rng)
    om2 = np.concatenate([pre[:, :-1], post], axis=1)
    inc = np.empty((n_paths, m + n))
    inc[:, :m] = core.driver.sample_increments(dt, (n_paths, m), rng)
    if not q:
        inc[:, m:] = core.driver.sample_increments(dt, (n_paths, n), rng)
    elif measure.mode is MeasureMode.BrownianGirsanov:
        with np.errstate(divide="ignore"):
            shift = measure.theta * dt / np.sqrt(om2[:, m: m + n])
        inc[:, m:] = core.driver.sample_increments(dt, (n_paths, n), rng) + shift
    else:
        drv = esscher_triplet(core.driver, measure.theta)
        inc[:, m:] = drv.sample_increments(dt, (n_paths, n), rng)
    return History(dt, m, om2, inc)


# ---------------------------------------------------------------------------
# Quadrature helpers


def _gl(n):
    return np.polynomial.legendre.leggauss(n)


_JACOBI_CACHE: dict = {}


def _jacobi(n, a):
    key = (n, round(a, 14))
    if key not in _JACOBI_CACHE:
        _JACOBI_CACHE[key] = special.roots_jacobi(n, a, 0.0)
    return _JACOBI_CACHE[key]


def _g2_rule(g, T: float, lo, hi, n: int):
    """Nodes ``s`` and weights ``w`` with ``sum w f(s) ~ int_lo^hi G(T,s)**2 f(s) ds``.

    ``lo`` and ``hi`` broadcast; the result has shape ``broadcast + (n,)``.
    """
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    length = hi - lo
    if isinstance(g, SeparableKernel):
        u, w = _gl(n)
        s = lo + 0.5 * length * (1.0 + u)
        return s, 0.5 * length * w * (np.asarray(g.g1(T), dtype=float) * g.g2(s)) ** 2
    a = g._singular_exponent()
    if a is not None and np.all(np.isclose(hi, T, rtol=0, atol=1e-14)):
        # x = T - s in [0, L]; g(x)**2 = x**(2a) r(x)**2 with Jacobi weight (1 - u)**(2a)
        u, w = _jacobi(n, 2.0 * a)
        x = 0.5 * length * (1.0 - u)
        r = np.asarray(g._eval_regular(x), dtype=float)
        return T - x, (0.5 * length) ** (2.0 * a + 1.0) * w * r * r
    u, w = _gl(n)
    s = lo + 0.5 * length * (1.0 + u)
    return s, 0.5 * length * w * np.asarray(g._eval(np.maximum(T - s, 0.0)), dtype=float) ** 2


def _stable(compute):
    """Evaluate ``compute(n)`` for doubling ``n`` until relative changes fall below 1e-8."""
    n = _N0
    prev = np.asarray(compute(n))
    while n < _NMAX:
        n *= 2
        cur = np.asarray(compute(n))
        if np.all(np.abs(cur - prev) <= _RTOL * np.maximum(np.abs(cur), 1e-300) + 1e-15):
            return cur
        prev = cur
    return prev


def kernel_integral(g, T: float, lo: float, hi: float) -> float:
    """``int_lo^hi G(T, s) ds``."""
    if hi <= lo:
        return 0.0
    if isinstance(g, SeparableKernel):
        def compute(n):
            u, w = _gl(n)
            s = lo + 0.5 * (hi - lo) * (1.0 + u)
            return 0.5 * (hi - lo) * float(np.sum(w * g.G(T, s)))
        return float(_stable(compute))
    return float(g.cell_integrals(np.array([T - hi, T - lo]))[0])


def g2_integral(g, T: float, lo, hi, weight=None):
    """``int_lo^hi G(T,s)**2 weight(s) ds`` with ``weight`` vectorised in ``s``."""
    def compute(n):
        s, w = _g2_rule(g, T, lo, hi, n)
        f = 1.0 if weight is None else weight(s)
        return np.sum(w * f, axis=-1)
    out = _stable(compute)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Surface


def _vol_decay(vol) -> float:
    return vol.lam if isinstance(vol, BnsOu) else 0.0


class ForwardSurface:
    """Forward curve evaluator for ``model`` under ``measure`` given ``state``.

    Read-only after construction; methods taking an ``rng`` use it for the
    inner Monte Carlo only.
    """

    def __init__(self, model: SpotModel, measure: PricingMeasure, state: ForwardState):
        check_measure(model, measure)
        self.model = model
        self.measure = measure
        self.state = state
        self._vol = model.core.vol

    # -- basic pieces -----------------------------------------------------
    @property
    def t(self) -> float:
        return self.state.t

    @property
    def kernel(self):
        return self.model.core.g

    def _check_T(self, T):
        if T < self.t:
            raise ValueError("maturity before the current time")

    def realized(self, T: float) -> np.ndarray:
        """``int_{-inf}^t G(T,s) omega_{s-} dL_s`` per path."""
        self._check_T(T)
        st = self.state
        g = self.kernel
        if st.omega2 is None:
            aff = affinity_check(g)
            if not aff.affine:
                raise ValueError("state holds no history and the kernel is not affine")
            return aff.ratio(T, st.t) * st.core
        m = st.omega2.shape[1]
        dt = st.dt
        left = st.t - dt * np.arange(m, 0, -1)
        if isinstance(g, SeparableKernel):
            w = np.asarray(g.g1(T), dtype=float) * np.asarray(g.g2(left + 0.5 * dt), dtype=float)
        else:
            edges = (T - st.t) + dt * np.arange(m + 1)
            w = g.cell_integrals(edges)[::-1] / dt
        return (np.sqrt(st.omega2) * st.increments) @ w

    def core_value(self) -> np.ndarray:
        """``Y_t - mu``."""
        if self.state.core is not None and self.state.omega2 is None:
            return self.state.core
        return self.realized(self.t)

    def spot(self) -> np.ndarray:
        """``S_t`` implied by the state."""
        y = self.model.core.mu + self.core_value()
        lam = seasonality(self.model.seasonality, self.t)
        if self.model.kind is SpotKind.Geometric:
            return lam * np.exp(y)
        return lam + y

    def past_sq_vol(self, s) -> np.ndarray:
        """Part of ``omega2_s`` (``s >= t``) fixed at time ``t``; shape ``(n_paths,) + s.shape``."""
        s = np.asarray(s, dtype=float)
        vol = self._vol
        if isinstance(vol, ConstantVol):
            return np.broadcast_to(vol.level ** 2, self.state.z.shape + s.shape)
        decay = np.exp(-vol.lam * (s - self.t))
        return self.state.z.reshape(self.state.z.shape + (1,) * s.ndim) * decay

    def driver_cumulant(self, x):
        """Cumulant of the background volatility driver under ``eta`` (0 for constant vol)."""
        vol = self._vol
        if isinstance(vol, ConstantVol):
            return np.zeros_like(np.asarray(x))
        return vol.driver_cumulant(x, self.measure.eta)

    def h_integral(self, T: float, v, upper: float):
        """``int_v^upper G(T,s)**2 i(s, v) ds`` for ``v <= upper <= T``."""
        lam = _vol_decay(self._vol)
        return g2_integral(self.kernel, T, v, upper,
                           None if lam == 0 else (lambda s: np.exp(-lam * (s - np.asarray(v)[..., None]))))

    def theta_term(self, T: float) -> float:
        """``int_t^T G(T,s) theta ds`` (Girsanov mode)."""
        if self.measure.mode is not MeasureMode.BrownianGirsanov or self.measure.theta == 0:
            return 0.0
        return self.measure.theta * kernel_integral(self.kernel, T, self.t, T)

    def future_vol_term(self, lo: float, hi: float, arg) -> float | np.ndarray:
        """``int_lo^hi phi_U^eta(arg(v)) dv`` by Gauss-Legendre in ``v``."""
        if isinstance(self._vol, ConstantVol) or hi <= lo:
            return 0.0

        def compute(n):
            u, w = _gl(n)
            v = lo + 0.5 * (hi - lo) * (1.0 + u)
            return 0.5 * (hi - lo) * np.sum(w * self.driver_cumulant(arg(v)), axis=-1)
        return _stable(compute)

    def convexity_past(self, T: float) -> np.ndarray:
        """``1/2 int_t^T G(T,s)**2 E-part of omega2_s`` fixed at ``t`` (per path)."""
        vol = self._vol
        if isinstance(vol, ConstantVol):
            return np.full(self.state.n_paths, 0.5 * vol.level ** 2 * g2_integral(self.kernel, T, self.t, T)
                           if T > self.t else 0.0)
        if T == self.t:
            return np.zeros(self.state.n_paths)
        return 0.5 * self.state.z * self.h_integral(T, self.t, T)

    # -- forward prices ---------------------------------------------------
    def log_forward_gaussian(self, T: float, realized=None) -> np.ndarray:
        self._check_T(T)
        if self.model.kind is not SpotKind.Geometric:
            raise ValueError("geometric spot required")
        if self.measure.mode is not MeasureMode.BrownianGirsanov:
            raise ValueError("the Gaussian forward formula needs Girsanov mode")
        t = self.t
        r = self.realized(T) if realized is None else realized
        det = log_seasonality(self.model.seasonality, T) + self.model.core.mu + self.theta_term(T)
        if T > t:
            det += float(self.future_vol_term(t, T, lambda v: 0.5 * self.h_integral(T, v, T)))
        return det + r + self.convexity_past(T)

    def forward_geometric_gaussian(self, T: float) -> np.ndarray:
        return np.exp(self.log_forward_gaussian(T))

    def forward_affine(self, T: float) -> np.ndarray:
        """Gaussian forward written through ``Y_t`` and ``Z_t`` only (affine kernels)."""
        aff = affinity_check(self.kernel, self._vol)
        if not aff.affine:
            raise ValueError("kernel or volatility kernel is not affine")
        return np.exp(self.log_forward_gaussian(T, realized=aff.ratio(T, self.t) * self.core_value()))

    def esscher_exponent(self, T: float, n_mc: int = 10_000, rng=None, dt_inner=None):
        """``log E_eta[exp(int_t^T phi_L^theta(G(T,s) omega_s) ds) | F_t]`` per path."""
        theta = self.measure.theta
        drv = self.model.core.driver
        phi = lambda x: drv.cumulant(np.asarray(x) + theta) - drv.cumulant(theta)
        g = self.kernel
        t = self.t
        if T == t:
            return np.zeros(self.state.n_paths)
        vol = self._vol
        lo, hi = drv.strip()
        if isinstance(vol, ConstantVol):
            c = vol.level

            singular = isinstance(g, Kernel) and g._singular_exponent() is not None

            def compute(n):
                u, w = _gl(n)
                if singular:
                    # T - s = (T - t) v**4 flattens the endpoint singularity of the kernel
                    v = 0.5 * (1.0 + u)
                    gs = np.asarray(g.eval((T - t) * v ** 4), dtype=float)
                    w = w * 4.0 * v ** 3
                else:
                    gs = np.asarray(g.G(T, t + 0.5 * (T - t) * (1.0 + u)), dtype=float)
                x = gs * c + theta
                if np.any(x <= lo) or np.any(x >= hi):
                    raise ValueError(f"G * omega + theta leaves the strip ({lo}, {hi})")
                return 0.5 * (T - t) * float(np.sum(w * phi(x - theta)))
            return np.full(self.state.n_paths, float(_stable(compute)))
        if rng is None:
            raise ValueError("stochastic volatility needs an rng for the inner Monte Carlo")
        h = self.state.dt if dt_inner is None else dt_inner
        n = max(1, int(math.ceil((T - t) / h)))
        h = (T - t) / n
        mid = t + h * (np.arange(n) + 0.5)
        gm = np.asarray(g.G(T, mid), dtype=float)
        out = np.empty(self.state.n_paths)
        for sl, paths in self._future_vol(n_mc, n, h, rng):
            om = np.sqrt(0.5 * (paths[..., :-1] + paths[..., 1:]))
            x = gm * om + theta
            bad = (x <= lo) | (x >= hi)
            if np.any(bad):
                raise ValueError(f"G * omega + theta leaves the strip ({lo}, {hi}) "
                                 f"on a fraction {float(np.mean(bad)):.3g} of the inner grid")
            expo = h * np.sum(phi(x - theta), axis=-1)
            mx = expo.max(axis=-1, keepdims=True)
            out[sl] = mx[:, 0] + np.log(np.mean(np.exp(expo - mx), axis=-1))
        return out

    def _future_vol(self, n_mc, n, h, rng, budget=400_000):
        """Yield ``(slice, omega2 paths)`` with paths of shape ``(chunk, n_mc, n + 1)``."""
        z = self.state.z
        chunk = max(1, budget // max(1, n_mc * (n + 1)))
        for lo in range(0, z.size, chunk):
            sl = slice(lo, min(lo + chunk, z.size))
            z0 = np.repeat(z[sl, None], n_mc, axis=1)
            yield sl, self._vol.sample_future(z0, n, h, rng, eta=self.measure.eta)

    def forward_geometric_esscher(self, T: float, n_mc: int = 10_000, rng=None,
                                  dt_inner=None) -> np.ndarray:
        self._check_T(T)
        if self.model.kind is not SpotKind.Geometric:
            raise ValueError("geometric spot required")
        if self.measure.mode is not MeasureMode.GeneralEsscher:
            raise ValueError("the Esscher forward formula needs GeneralEsscher mode")
        base = log_seasonality(self.model.seasonality, T) + self.model.core.mu + self.realized(T)
        return np.exp(base + self.esscher_exponent(T, n_mc, rng, dt_inner))

    def expected_vol_integral(self, T: float, n_mc: int = 10_000, rng=None, dt_inner=None):
        """``int_t^T G(T,s) E_eta[omega_s | F_t] ds`` per path."""
        t = self.t
        g = self.kernel
        vol = self._vol
        if T == t:
            return np.zeros(self.state.n_paths)
        if isinstance(vol, ConstantVol):
            return np.full(self.state.n_paths, vol.level * kernel_integral(g, T, t, T))
        if rng is None:
            raise ValueError("stochastic volatility needs an rng for the inner Monte Carlo")
        h = self.state.dt if dt_inner is None else dt_inner
        n = max(1, int(math.ceil((T - t) / h)))
        h = (T - t) / n
        if isinstance(g, SeparableKernel):
            mass = np.array([kernel_integral(g, T, t + k * h, t + (k + 1) * h) for k in range(n)])
        else:
            # cell k covers s in [t + k h, t + (k+1) h], i.e. x = T - s in reversed order
            xe = np.maximum(T - t - h * np.arange(n, -1, -1), 0.0)
            mass = g.cell_integrals(xe)[::-1]
        out = np.empty(self.state.n_paths)
        for sl, paths in self._future_vol(n_mc, n, h, rng):
            om = np.sqrt(paths).mean(axis=1)
            out[sl] = 0.5 * (om[:, :-1] + om[:, 1:]) @ mass
        return out

    def forward_arithmetic(self, T: float, n_mc: int = 10_000, rng=None, dt_inner=None):
        self._check_T(T)
        if self.model.kind is not SpotKind.Arithmetic:
            raise ValueError("arithmetic spot required")
        base = seasonality(self.model.seasonality, T) + self.model.core.mu + self.realized(T)
        if self.measure.mode is MeasureMode.BrownianGirsanov:
            return base + self.theta_term(T)
        k1 = esscher_triplet(self.model.core.driver, self.measure.theta).kappa1
        if k1 == 0 or T == self.t:
            return base
        return base + k1 * self.expected_vol_integral(T, n_mc, rng, dt_inner)

    def forward(self, T: float, n_mc: int = 10_000, rng=None) -> np.ndarray:
        """Dispatch on spot kind and measure mode."""
        if self.model.kind is SpotKind.Arithmetic:
            return self.forward_arithmetic(T, n_mc, rng)
        if self.measure.mode is MeasureMode.BrownianGirsanov:
            return self.forward_geometric_gaussian(T)
        return self.forward_geometric_esscher(T, n_mc, rng)


# module-level aliases mirroring the operation names
def forward_geometric_gaussian(fs: ForwardSurface, T: float):
    return fs.forward_geometric_gaussian(T)


def forward_geometric_esscher(fs: ForwardSurface, T: float, n_mc: int = 10_000, rng=None):
    return fs.forward_geometric_esscher(T, n_mc, rng)


def forward_arithmetic(fs: ForwardSurface, T: float, n_mc: int = 10_000, rng=None):
    return fs.forward_arithmetic(T, n_mc, rng)


# ---------------------------------------------------------------------------
# Affinity


@dataclass
class AffinityResult:
    """Outcome of :func:`affinity_check`; ``g1``/``g2`` are set when affine."""

    affine: bool
    g1: object = None
    g2: object = None
    reason: str = ""

    def ratio(self, T, t):
        """``g1(T) / g1(t)``."""
        return np.asarray(self.g1(T), dtype=float) / np.asarray(self.g1(t), dtype=float)


_PROBES = (0.5, 1.0, 2.0)


def _exponential_rate(k: Kernel) -> float | None:
    """Rate ``a`` if ``k(x) = c exp(-a x)`` at the probe points, else ``None``."""
    if isinstance(k, OUKernel):
        return k.alpha
    if isinstance(k, CarmaKernel) and k.p == 1:
        return float(k.a[0])
    if isinstance(k, GammaKernel) and k.nu == 1.0:
        return 0.5 * k.lam
    h = 1.0
    x = np.array(_PROBES)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = k.eval(x + h) / k.eval(x)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        return None
    if np.max(np.abs(r - r[0])) <= 1e-10 * abs(r[0]):
        return float(-math.log(r[0]) / h)
    return None


def affinity_check(g, vol=None) -> AffinityResult:
    """Decide whether ``G(t,s) = g1(t) g2(s)`` (and likewise the volatility kernel).

    Stationary kernels factor only when exponential; the test is exact for the
    OU, CARMA(1) and gamma ``nu = 1`` families and otherwise checks that
    ``g(x + 1) / g(x)`` does not depend on ``x`` at three probe points.
    """
    if vol is not None and not isinstance(vol, (BnsOu, ConstantVol)):
        if _exponential_rate(_FunctionKernel(vol.i_kernel)) is None:
            return AffinityResult(False, reason="volatility kernel does not factor")
    if isinstance(g, SeparableKernel):
        return AffinityResult(True, g.g1, g.g2, "separable")
    rate = _exponential_rate(g)
    if rate is None:
        return AffinityResult(False, reason=f"{type(g).__name__} is not exponential")
    c = float(g.eval(1.0)) * math.exp(rate)
    return AffinityResult(True, lambda t: np.exp(-rate * np.asarray(t, dtype=float)),
                          lambda s: c * np.exp(rate * np.asarray(s, dtype=float)),
                          f"exponential with rate {rate:g}")


class _FunctionKernel(Kernel):
    def __init__(self, f):
        self._f = f

    def _eval(self, x):
        return np.asarray(self._f(x), dtype=float)


# ---------------------------------------------------------------------------
# Volatility term structure and correlation


def forward_vol_term_structure(fs: ForwardSurface, T: float, t: float | None = None) -> np.ndarray:
    """Instantaneous volatility ``G(T, t) omega_{t-}`` of ``dF/F`` per path."""
    t = fs.t if t is None else t
    if T < t:
        raise ValueError("maturity before the evaluation time")
    return float(fs.kernel.G(T, t)) * np.sqrt(fs.state.z)


def forward_spot_correlation(k, t: float, T: float, window: float | None = None) -> float:
    """Correlation of ``M_t(T)`` and ``Y_t`` for a Gaussian constant-vol model.

    Stationary kernels reduce to ``overlap(T - t) / sqrt(int_{T-t}^inf g**2 * int g**2)``.
    Separable kernels integrate over ``[t - window, t]``.
    """
    if T < t:
        raise ValueError("maturity before the evaluation time")
    if T == t:
        return 1.0
    if isinstance(k, SeparableKernel):
        if window is None:
            raise ValueError("separable kernels need a window")
        lo = t - window
        u, w = _gl(256)
        s = lo + 0.5 * window * (1.0 + u)
        a = np.asarray(k.G(T, s), dtype=float)
        b = np.asarray(k.G(t, s), dtype=float)
        cross, aa, bb = (0.5 * window * np.sum(w * x) for x in (a * b, a * a, b * b))
    else:
        tau = T - t
        cross = k.overlap(tau)
        bb = k.l2_norm_sq()
        aa = bb - float(k.sq_cell_integrals(np.array([0.0, tau]))[0])
    if not (math.isfinite(cross) and math.isfinite(aa) and math.isfinite(bb)):
        raise ValueError("correlation integrals diverge")
    return float(np.clip(cross / math.sqrt(aa * bb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Risk-neutral dynamics


@dataclass
class ForwardStep:
    """One step of ``dF/F = G(T,t) omega dW + int (exp(H z / 2) - 1) dN~``.

    ``diffusion`` is ``G(T,t) omega_{t-}`` per path; ``jump_scale`` is
    ``H_T(t,t)/2`` so that a background jump ``z`` multiplies ``F`` by
    ``exp(jump_scale z)``; ``compensator`` is the drift ``phi_U^eta(jump_scale)``
    per unit time removed to keep ``F`` a martingale.
    """

    dt: float
    diffusion: np.ndarray
    jump_scale: float
    compensator: float
    _surface: "ForwardSurface" = None

    def sample(self, rng, size=None) -> np.ndarray:
        """Draws of ``F_{t+dt} / F_t``; shape ``(n_paths,)`` or ``(size, n_paths)``."""
        shape = self.diffusion.shape if size is None else (size,) + self.diffusion.shape
        sig = np.broadcast_to(self.diffusion, shape)
        out = np.exp(sig * math.sqrt(self.dt) * rng.standard_normal(shape) - 0.5 * sig ** 2 * self.dt)
        vol = self._surface._vol if self._surface is not None else None
        if isinstance(vol, BnsOu) and self.jump_scale > 0:
            sub = vol.sub.esscher(self._surface.measure.eta) if self._surface.measure.eta else vol.sub
            du = sub.sample_increments(vol.lam * self.dt, shape, rng)
            out *= np.exp(self.jump_scale * du - self.compensator * self.dt)
        return out


def risk_neutral_forward_step(fs: ForwardSurface, T: float, dt: float) -> ForwardStep:
    """Parameters of one Euler step of the risk-neutral forward dynamics."""
    if fs.measure.mode is not MeasureMode.BrownianGirsanov:
        raise ValueError("risk-neutral forward dynamics need Girsanov mode")
    if not dt > 0:
        raise ValueError("dt must be positive")
    diff = forward_vol_term_structure(fs, T)
    if isinstance(fs._vol, ConstantVol) or T == fs.t:
        return ForwardStep(dt, diff, 0.0, 0.0, fs)
    js = 0.5 * float(fs.h_integral(T, fs.t, T))
    return ForwardStep(dt, diff, js, float(fs.driver_cumulant(js)), fs)
