r"""Stationary squared-volatility processes :math:`\omega^2`.

Three models are provided:

* :class:`ConstantVol`, :math:`\omega \equiv c`;
* :class:`BnsOu`, :math:`\omega^2_t = \int_{-\infty}^t e^{-\lambda(t-u)}\,dU_{\lambda u}`
  driven by a subordinator :math:`U`;
* :class:`GigOu`, :math:`\omega^2_t = \int_{-\infty}^t i^*(t-u)\,dU_u` with the
  gamma-density kernel :math:`i^*(t) = \lambda^{-1}\mathrm{ga}(t; 2-2\nu, \lambda)`,
  and a background subordinator chosen so that
  :math:`\sigma^2_t = \int e^{-\lambda(t-u)}\,dU_u` is GIG distributed.

Volatility paths are sampled on the left endpoints ``k * dt`` of a uniform grid.
The background driver :math:`\tilde U` entering ``Z_t = \int i(t-v)\,d\tilde U_v`` is
exposed through :meth:`VolatilityModel.driver_cumulant` for pricing formulas.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, signal, special

from .distributions import GigParams, gig_mean, gig_var, sample_gig
from .levy import CompoundPoissonExp, LevyModel
from .specfun import gamma_density


class VolatilityModel:
    """Base class for stationary models of ``omega**2``."""

    family = "abstract"

    @property
    def stationary_mean(self) -> float:
        """``E[omega**2]``."""
        raise NotImplementedError

    @property
    def stationary_var(self) -> float:
        """``Var[omega**2]``."""
        raise NotImplementedError

    def acvf_sq(self, h):
        """Autocovariance of ``omega**2`` at lag ``h``."""
        raise NotImplementedError

    def i_kernel(self, x):
        """Volatility kernel ``i(x)`` with ``omega**2_t = int i(t - v) dU~_v``."""
        raise NotImplementedError

    def driver_cumulant(self, x, eta: float = 0.0):
        """Cumulant per unit calendar time of the background driver ``U~`` under the ``eta`` tilt."""
        raise NotImplementedError

    def sample_vol_path(self, n: int, dt: float, rng: np.random.Generator, size=None):
        """Stationary ``omega**2`` at ``0, dt, ..., (n-1) dt``; shape ``(size, n)`` or ``(n,)``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class ConstantVol(VolatilityModel):
    """Deterministic volatility ``omega = level`` (so ``omega**2 = level**2``)."""

    family = "constant"

    def __init__(self, level: float = 1.0):
        if not level >= 0:
            raise ValueError("constant volatility must be nonnegative")
        self.level = float(level)

    def __repr__(self):
        return f"ConstantVol(level={self.level})"

    @property
    def stationary_mean(self):
        return self.level ** 2

    @property
    def stationary_var(self):
        return 0.0

    def acvf_sq(self, h):
        return np.zeros_like(np.asarray(h, dtype=float)) + 0.0

    def acvf(self, h):
        """Autocovariance of ``omega``; identically zero."""
        return self.acvf_sq(h)

    def i_kernel(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def driver_cumulant(self, x, eta=0.0):
        return np.zeros_like(np.asarray(x)) * 0.0

    def sample_vol_path(self, n, dt, rng, size=None):
        shape = (n,) if size is None else (size, n)
        return np.full(shape, self.level ** 2)

    def sample_future(self, z0, n, dt, rng, eta=0.0):
        z0 = np.asarray(z0, dtype=float)
        return np.full(z0.shape + (n + 1,), self.level ** 2)

    def to_dict(self):
        return {"family": "constant", "level": self.level}


class BnsOu(VolatilityModel):
    """BNS-type OU model ``d omega2 = -lam omega2 dt + dU_{lam t}``.

    Parameters
    ----------
    lam : float
        Mean-reversion rate.
    subordinator : LevyModel
        Background driving Levy process ``U`` (a subordinator with finite
        second moment). With :class:`~vmlv.levy.CompoundPoissonExp` the
        stationary law is gamma and paths are sampled exactly.
    """

    family = "bns_ou"

    def __init__(self, lam: float, subordinator: LevyModel):
        if not lam > 0:
            raise ValueError("BNS model needs lambda > 0")
        if not subordinator.is_subordinator:
            raise ValueError("BNS model needs a subordinator")
        self.lam = float(lam)
        self.sub = subordinator

    def __repr__(self):
        return f"BnsOu(lam={self.lam}, subordinator={self.sub!r})"

    @property
    def stationary_mean(self):
        # lambda-free: E[U_1]
        return self.sub.kappa1

    @property
    def stationary_var(self):
        return 0.5 * self.sub.kappa2

    def acvf_sq(self, h):
        return self.stationary_var * np.exp(-self.lam * np.asarray(h, dtype=float))

    def i_kernel(self, x):
        return np.exp(-self.lam * np.asarray(x, dtype=float))

    def driver_cumulant(self, x, eta=0.0):
        sub = self.sub.esscher(eta) if eta != 0 else self.sub
        return self.lam * sub.cumulant(x)

    def _exact(self, sub) -> bool:
        return isinstance(sub, CompoundPoissonExp)

    def _stationary_draw(self, size, rng):
        if self._exact(self.sub):
            return rng.gamma(self.sub.rate, 1.0 / self.sub.jump_rate, size)
        return None

    def _step_increments(self, sub, dt, shape, rng):
        """Discounted background contribution over one step of length ``dt``."""
        lam = self.lam
        if self._exact(sub):
            n = rng.poisson(sub.rate * lam * dt, shape)
            out = np.zeros(shape)
            tot = int(n.sum())
            if tot:
                ages = rng.uniform(0.0, dt, tot)
                jumps = rng.exponential(1.0 / sub.jump_rate, tot)
                idx = np.repeat(np.arange(n.size), n.ravel())
                out.ravel()[:] = np.bincount(idx, weights=jumps * np.exp(-lam * ages),
                                             minlength=n.size)
            return out
        # Left-point rule for the stochastic integral over the step.
        return math.exp(-lam * dt) * sub.sample_increments(lam * dt, shape, rng)

    def sample_vol_path(self, n, dt, rng, size=None):
        shape = () if size is None else (size,)
        decay = math.exp(-self.lam * dt)
        z = self._stationary_draw(shape, rng)
        if z is None:
            z = np.full(shape, self.stationary_mean)
            burn = int(math.ceil(20.0 / (self.lam * dt)))
            for _ in range(burn):
                z = decay * z + self._step_increments(self.sub, dt, shape, rng)
        out = np.empty(shape + (n,))
        for k in range(n):
            out[..., k] = z
            z = decay * z + self._step_increments(self.sub, dt, shape, rng)
        return out

    def sample_future(self, z0, n, dt, rng, eta=0.0):
        """Paths started at ``z0`` under the ``eta`` tilt; ``n + 1`` points including the start."""
        sub = self.sub.esscher(eta) if eta != 0 else self.sub
        z = np.asarray(z0, dtype=float).copy()
        decay = math.exp(-self.lam * dt)
        out = np.empty(z.shape + (n + 1,))
        out[..., 0] = z
        for k in range(n):
            z = decay * z + self._step_increments(sub, dt, z.shape, rng)
            out[..., k + 1] = z
        return out

    def to_dict(self):
        return {"family": "bns_ou", "lambda": self.lam, "subordinator": self.sub.to_dict()}


# ---------------------------------------------------------------------------
# GIG-marginal construction


def gig_ou_kernels(nu: float, lam: float):
    """Volatility kernel ``i*`` and drift kernel ``q`` of the GIG-marginal construction.

    ``i*(t) = ga(t; 2 - 2 nu, lam) / lam`` and ``q(t) = ga(t; 2 nu - 1, lam)``; both
    ``q * i*`` and ``g**2 * i*`` equal ``exp(-lam t)`` for the gamma kernel ``g``.

    Returns
    -------
    (callable, callable)
    """
    if not 0.5 < nu < 1.0:
        raise ValueError("the GIG-marginal construction needs 1/2 < nu < 1")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    istar = lambda t: gamma_density(t, 2.0 - 2.0 * nu, lam) / lam
    q = lambda t: gamma_density(t, 2.0 * nu - 1.0, lam)
    return istar, q


def gamma_cell_integrals(shape: float, rate: float, n: int, dt: float) -> np.ndarray:
    """Masses of the gamma density on ``[k dt, (k+1) dt)``, ``k < n``."""
    return np.diff(special.gammainc(shape, rate * dt * np.arange(n + 1)))


class GigBdlp:
    """Background driving Levy process whose OU process has a GIG stationary law.

    The Levy density of the driver is ``u(y) = -(d/dy)(y l(y))`` with ``l`` the
    GIG Levy density.  Jumps above ``eps`` are sampled from a tabulated
    distribution; smaller ones are replaced by their mean.  Time is measured
    in the driver's own clock (one unit per ``1/lam`` of calendar time).
    """

    def __init__(self, target: GigParams, eps: float = 1e-6, tail_mass: float = 1e-8,
                 n_grid: int = 400):
        self.target = target
        lam, chi, psi = target.lam, target.chi, target.psi
        self._a = abs(lam)
        self.eps = float(eps)
        mean = gig_mean(target)
        if chi == 0:
            # Gamma target: compound Poisson with rate lam and Exp(psi/2) jumps.
            self.kind = "cp_exp"
            self.rate = lam
            self.jump_rate = psi / 2.0
            self.drift = 0.0
            return
        self.kind = "tabulated"
        y_hi = self._upper_cutoff(tail_mass)
        grid = np.geomspace(self.eps, y_hi, n_grid)
        dens = np.array([self.density(y) for y in grid])
        # Tail rate H(y) = int_y^inf u via cumulative trapezoid on log scale.
        logy = np.log(grid)
        integrand = dens * grid
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(logy))])
        tail_beyond = integrate.quad(self.density, y_hi, np.inf, limit=200)[0]
        self._H = cum[-1] - cum + tail_beyond
        self._grid = grid
        self.rate = float(self._H[0])
        mean_big = integrate.quad(lambda y: y * self.density(y), self.eps, y_hi, limit=400,
                                  points=np.geomspace(self.eps, y_hi, 12)[1:-1])[0]
        self.drift = max(mean - mean_big, 0.0)

    # Levy density pieces -----------------------------------------------------
    def _M(self, r):
        return special.jv(self._a, r) ** 2 + special.yv(self._a, r) ** 2

    def _A(self, y):
        chi = self.target.chi
        f = lambda r: 2.0 * math.exp(-y * r * r / (2.0 * chi)) / (math.pi ** 2 * r * self._M(r))
        return integrate.quad(f, 0.0, np.inf, limit=400)[0]

    def _B(self, y):
        chi = self.target.chi
        f = lambda r: r * math.exp(-y * r * r / (2.0 * chi)) / (chi * math.pi ** 2 * self._M(r))
        return integrate.quad(f, 0.0, np.inf, limit=400)[0]

    def gig_levy_density(self, y: float) -> float:
        """Levy density of the GIG law itself."""
        lam, chi, psi = self.target.lam, self.target.chi, self.target.psi
        a = self._A(y) if chi > 0 else 0.0
        return (a + max(0.0, lam)) * math.exp(-0.5 * psi * y) / y

    def density(self, y: float) -> float:
        """Levy density ``u(y)`` of the background driver."""
        lam, chi, psi = self.target.lam, self.target.chi, self.target.psi
        if chi == 0:
            return 0.5 * psi * lam * math.exp(-0.5 * psi * y)
        return (self._B(y) + 0.5 * psi * (self._A(y) + max(0.0, lam))) * math.exp(-0.5 * psi * y)

    def _upper_cutoff(self, tail_mass: float) -> float:
        total = integrate.quad(self.density, 1.0, np.inf, limit=200)[0] + 1.0
        y = 1.0
        while integrate.quad(self.density, y, np.inf, limit=200)[0] > tail_mass * total:
            y *= 2.0
            if y > 1e12:
                break
        return y

    def cumulant(self, x):
        """``log E[exp(x U_1)]`` of the approximating driver (``x`` real, below the strip edge)."""
        if self.kind == "cp_exp":
            return self.rate * x / (self.jump_rate - x)
        big = integrate.quad(lambda y: (math.exp(x * y) - 1.0) * self.density(y), self.eps,
                             np.inf, limit=400)[0]
        return self.drift * x + big

    # Sampling -------------------------------------------------------------------
    def sample_jumps(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "cp_exp":
            return rng.exponential(1.0 / self.jump_rate, n)
        u = rng.uniform(0.0, self.rate, n)
        # H is decreasing; interpolate log y against log H.
        logH = np.log(self._H[::-1])
        logy = np.log(self._grid[::-1])
        return np.exp(np.interp(np.log(u), logH, logy))

    def cell_increments(self, n_cells: int, dt_own: float, rng: np.random.Generator, size: int):
        """Increments over ``n_cells`` consecutive cells of own-clock length ``dt_own``."""
        counts = rng.poisson(self.rate * dt_own, (size, n_cells))
        tot = int(counts.sum())
        out = np.full((size, n_cells), self.drift * dt_own)
        if tot:
            jumps = self.sample_jumps(tot, rng)
            idx = np.repeat(np.arange(size * n_cells), counts.ravel())
            out += np.bincount(idx, weights=jumps, minlength=size * n_cells).reshape(size, n_cells)
        return out


class GigOu(VolatilityModel):
    """GIG-marginal volatility with gamma-density kernel ``i*``.

    ``omega**2 = int i*(t - u) dU_u`` and ``sigma**2 = int exp(-lam (t - u)) dU_u``
    share the background subordinator; ``sigma**2`` has the ``target`` GIG law.

    Parameters
    ----------
    nu : float
        Shape of the companion gamma kernel, ``1/2 < nu < 1``.
    lam : float
        Rate.
    target : GigParams
        Stationary law of ``sigma**2``.
    eps : float
        Small-jump cutoff of the background driver.
    """

    family = "gig_ou"

    def __init__(self, nu: float, lam: float, target: GigParams, eps: float = 1e-4):
        gig_ou_kernels(nu, lam)
        self.nu = float(nu)
        self.lam = float(lam)
        self.target = target
        self.eps = eps
        self._bdlp = None

    def __repr__(self):
        return f"GigOu(nu={self.nu}, lam={self.lam}, target={self.target!r})"

    @property
    def bdlp(self) -> GigBdlp:
        if self._bdlp is None:
            self._bdlp = GigBdlp(self.target, eps=self.eps)
        return self._bdlp

    @property
    def stationary_mean(self):
        return gig_mean(self.target)

    @property
    def stationary_var(self):
        # Calendar-time driver variance is 2 lam Var(sigma^2); multiply by int i*^2.
        s = 2.0 - 2.0 * self.nu
        if s <= 0.5:
            return math.inf
        int_i2 = special.gamma(2 * s - 1) / (self.lam * special.gamma(s) ** 2 * 2 ** (2 * s - 1))
        return 2.0 * gig_var(self.target) * self.lam * int_i2

    def i_kernel(self, x):
        return gamma_density(x, 2.0 - 2.0 * self.nu, self.lam) / self.lam

    def q_kernel(self, x):
        return gamma_density(x, 2.0 * self.nu - 1.0, self.lam)

    def acvf_sq(self, h):
        """Autocovariance of ``omega**2`` by quadrature of ``2 lam Var(sigma^2) int i*(x+h) i*(x) dx``."""
        s = 2.0 - 2.0 * self.nu
        c = 2.0 * gig_var(self.target) * self.lam / self.lam ** 2
        hs = np.atleast_1d(np.asarray(h, dtype=float))
        out = np.empty(hs.shape)
        for k, hi in enumerate(hs):
            if hi == 0:
                out[k] = self.stationary_var
            else:
                f = lambda x: gamma_density(x + hi, s, self.lam) * gamma_density(x, s, self.lam)
                out[k] = c * integrate.quad(f, 0, np.inf, limit=400)[0]
        return float(out[0]) if np.ndim(h) == 0 else out

    def sample_background(self, n_cells: int, dt: float, rng, size: int) -> np.ndarray:
        """Background increments ``dU`` over calendar cells of length ``dt``."""
        return self.bdlp.cell_increments(n_cells, self.lam * dt, rng, size)

    def window(self, dt: float, eps: float = 1e-6) -> int:
        """Cells needed so that the neglected tail of ``i*`` and ``exp(-lam t)`` is below ``eps``."""
        s = 2.0 - 2.0 * self.nu
        t = max(special.gammainccinv(s, eps), special.gammainccinv(1.0, eps)) / self.lam
        return int(math.ceil(t / dt))

    def paths_from_background(self, dU: np.ndarray, dt: float, n_burn: int):
        """``(omega2, sigma2)`` at left endpoints of cells ``n_burn..``.

        ``dU`` has shape ``(size, n_cells)``; cell ``j`` feeds values at
        grid points ``k > j`` with cell-averaged kernel weights.
        """
        size, n_cells = dU.shape
        s = 2.0 - 2.0 * self.nu
        lam = self.lam
        # Kernels averaged over a uniformly placed jump inside the cell.
        w_i = gamma_cell_integrals(s, lam, n_cells, dt) / (lam * dt)
        e = np.exp(-lam * dt * np.arange(n_cells + 1))
        w_e = (e[:-1] - e[1:]) / (lam * dt)
        conv_i = signal.fftconvolve(dU, w_i[None, :], axes=1)[:, :n_cells]
        conv_e = signal.fftconvolve(dU, w_e[None, :], axes=1)[:, :n_cells]
        # value at grid point k collects cells j <= k - 1
        omega2 = np.zeros((size, n_cells))
        sigma2 = np.zeros((size, n_cells))
        omega2[:, 1:] = conv_i[:, :-1]
        sigma2[:, 1:] = conv_e[:, :-1]
        return np.maximum(omega2[:, n_burn:], 0.0), np.maximum(sigma2[:, n_burn:], 0.0)

    def sample_vol_path(self, n, dt, rng, size=None):
        m = self.window(dt)
        dU = self.sample_background(m + n, dt, rng, 1 if size is None else size)
        omega2, _ = self.paths_from_background(dU, dt, m)
        return omega2[0] if size is None else omega2

    def sample_sigma2_path(self, n, dt, rng, size=None):
        """Exact OU recursion for ``sigma**2`` started from an exact GIG draw."""
        shape = (1 if size is None else size,)
        z = sample_gig(self.target, shape, rng)
        out = np.empty(shape + (n,))
        decay = math.exp(-self.lam * dt)
        bd = self.bdlp
        for k in range(n):
            out[:, k] = z
            # Jumps at uniform positions inside the step.
            cnt = rng.poisson(bd.rate * self.lam * dt, shape)
            tot = int(cnt.sum())
            inc = np.full(shape, bd.drift * (1.0 - decay))
            if tot:
                jumps = bd.sample_jumps(tot, rng) * np.exp(-self.lam * rng.uniform(0, dt, tot))
                inc += np.bincount(np.repeat(np.arange(shape[0]), cnt), weights=jumps,
                                   minlength=shape[0])
            z = decay * z + inc
        return out[0] if size is None else out

    def to_dict(self):
        t = self.target
        return {"family": "gig_ou", "nu": self.nu, "lambda": self.lam,
                "target": {"lambda": t.lam, "chi": t.chi, "psi": t.psi}}


# ---------------------------------------------------------------------------
# Module-level operations


def vol_mean(v: VolatilityModel) -> float:
    """Stationary ``E[omega**2]``."""
    return v.stationary_mean


def vol_acvf(v: VolatilityModel, h):
    """Autocovariance of ``omega**2`` (closed form for OU-type models).

    The autocovariance of ``omega`` itself has no closed form for
    subordinator-driven models; see :func:`vol_acvf_omega_mc`.
    """
    return v.acvf_sq(h)


def vol_acvf_omega_mc(v: VolatilityModel, lags, dt: float, n: int, rng, size: int = 64):
    """Monte Carlo autocovariance of ``omega = sqrt(omega**2)`` at integer ``lags`` of ``dt``."""
    w = np.sqrt(v.sample_vol_path(n, dt, rng, size=size))
    w = w - w.mean()
    lags = np.atleast_1d(lags)
    return np.array([np.mean(w[:, : n - L] * w[:, L:]) for L in lags])


def sample_vol_path(v: VolatilityModel, n: int, dt: float, seed: int) -> np.ndarray:
    return v.sample_vol_path(n, dt, np.random.default_rng(seed))


def vol_from_dict(d: dict) -> VolatilityModel:
    """Build a volatility model from JSON."""
    from .levy import levy_from_dict

    fam = str(d.get("family", "")).lower()
    try:
        if fam == "constant":
            return ConstantVol(d.get("level", 1.0))
        if fam == "bns_ou":
            return BnsOu(d["lambda"], levy_from_dict(d["subordinator"]))
        if fam == "gig_ou":
            t = d["target"]
            if "alpha_bar" in t:
                from .distributions import GhParams, alphabar_to_chipsi

                target = alphabar_to_chipsi(GhParams(t["lambda"], t["alpha_bar"], 0.0, 1.0))
            else:
                target = GigParams(t["lambda"], t["chi"], t["psi"])
            return GigOu(d["nu"], d["lambda"], target)
    except KeyError as exc:
        raise ValueError(f"volatility spec missing field {exc}") from None
    raise ValueError(f"unknown volatility family {fam!r}")
