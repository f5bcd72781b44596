r"""Memory kernels :math:`g` (stationary) and :math:`G(t, s)` (separable).

Four stationary families are provided:

* Ornstein-Uhlenbeck, :math:`g(x) = e^{-\alpha x}`;
* gamma, :math:`g(x) = \lambda^{\nu-1/2}\Gamma(2\nu-1)^{-1/2} x^{\nu-1} e^{-\lambda x/2}`,
  normalised so that :math:`g^2` is the Gamma(:math:`2\nu-1`, :math:`\lambda`) density;
* CARMA(p, q), :math:`g(x) = b^\top e^{A x} e_p` with companion matrix :math:`A`;
* Bjerksund, :math:`g(x) = \sigma / (x + b)`.

Every kernel exposes its value, L2 norm, lag overlap
:math:`\int_0^\infty g(x+h) g(x)\,dx` and regularity flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from .specfun import bessel_k_bar, gamma_fn

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class KernelRegularity:
    """Regularity facts used by the semimartingale check.

    ``g_at_zero`` is ``math.inf`` for kernels singular at the origin.
    """

    g_at_zero: float
    derivative_sq_integrable: bool
    l2_integrable: bool

    @property
    def finite_at_zero(self) -> bool:
        return math.isfinite(self.g_at_zero)


def _quad_0_inf(f, singular_exp: float | None = None, scale: float = 1.0,
                f_regular=None) -> float:
    """Integrate ``f`` over ``[0, inf)``.

    When ``singular_exp`` is given, ``f(x) = x**singular_exp * f_regular(x)``
    near the origin and the algebraic weight is handled exactly.
    """
    split = 10.0 * scale
    if singular_exp is not None and singular_exp < 0:
        head = integrate.quad(f_regular, 0.0, split,
                              weight="alg", wvar=(singular_exp, 0.0), limit=400,
                              epsabs=1e-14, epsrel=1e-13)[0]
    else:
        head = integrate.quad(f, 0.0, split, limit=400, epsabs=1e-14, epsrel=1e-13)[0]
    tail = integrate.quad(f, split, np.inf, limit=400, epsabs=1e-14, epsrel=1e-13)[0]
    return head + tail


class Kernel:
    """Base class for stationary kernels ``g`` on ``[0, inf)``."""

    family = "abstract"

    # -- evaluation -------------------------------------------------------
    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval(self, x):
        """Kernel value at ``x >= 0``."""
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0):
            raise ValueError("kernel evaluated at a negative argument")
        out = self._eval(xa)
        return float(out) if np.ndim(out) == 0 else out

    __call__ = eval

    def G(self, t, s):
        """Two-argument form ``G(t, s) = g(t - s)``, zero for ``s > t``."""
        d = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        out = np.where(d >= 0, self._eval(np.maximum(d, 0.0)), 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, x):
        """Derivative ``g'(x)`` for ``x > 0``; central differences by default."""
        xa = np.asarray(x, dtype=float)
        h = 1e-6 * np.maximum(1.0, xa)
        return (self._eval(xa + h) - self._eval(np.maximum(xa - h, 0.0))) / (
            xa + h - np.maximum(xa - h, 0.0)
        )

    # -- integrals --------------------------------------------------------
    def _singular_exponent(self) -> float | None:
        return None

    def _scale(self) -> float:
        return 1.0

    def _eval_regular(self, x):
        """``g(x) / x**a`` where ``a`` is the singular exponent."""
        raise NotImplementedError

    def l2_norm_sq_quad(self) -> float:
        """``int_0^inf g(x)**2 dx`` by adaptive quadrature."""
        a = self._singular_exponent()
        return _quad_0_inf(lambda x: self._eval(np.asarray(x)) ** 2,
                           None if a is None else 2 * a, self._scale(),
                           lambda x: self._eval_regular(x) ** 2)

    def overlap_quad(self, h: float) -> float:
        """``int_0^inf g(x + h) g(x) dx`` by adaptive quadrature."""
        a = self._singular_exponent()
        if h == 0:
            return self.l2_norm_sq_quad()
        return _quad_0_inf(lambda x: self._eval(np.asarray(x + h)) * self._eval(np.asarray(x)),
                           a, self._scale(),
                           lambda x: self._eval(np.asarray(x + h)) * self._eval_regular(x))

    def l2_norm_sq(self) -> float:
        """Squared L2 norm; closed form where known."""
        return self.l2_norm_sq_quad()

    def overlap(self, h):
        """Lag-``h`` overlap integral; ``overlap(0) == l2_norm_sq()``."""
        hs = np.asarray(h, dtype=float)
        if np.any(hs < 0):
            raise ValueError("overlap requires h >= 0")
        out = np.vectorize(self._overlap_scalar, otypes=[float])(hs)
        return float(out) if np.ndim(out) == 0 else out

    def _overlap_scalar(self, h: float) -> float:
        return self.overlap_quad(h)

    def acf(self, h):
        """Autocorrelation ``overlap(h) / l2_norm_sq()`` of a centred LSS process."""
        return self.overlap(h) / self.l2_norm_sq()

    def integral(self) -> float:
        """``int_0^inf g``; ``inf`` when the kernel is not integrable."""
        a = self._singular_exponent()
        return _quad_0_inf(lambda x: self._eval(np.asarray(x)), a, self._scale(),
                           self._eval_regular)

    def cell_integrals(self, edges) -> np.ndarray:
        """``int_{e_k}^{e_{k+1}} g`` for consecutive edges (Gauss-Legendre per cell)."""
        e = np.asarray(edges, dtype=float)
        lo, hi = e[:-1], e[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = self._eval(x)
        out = half * (vals @ _GL_WEIGHTS)
        a = self._singular_exponent()
        if e[0] == 0 and a is not None:
            out[0] = integrate.quad(self._eval_regular, 0.0, e[1], weight="alg",
                                    wvar=(a, 0.0), limit=200)[0]
        return out

    def sq_cell_integrals(self, edges) -> np.ndarray:
        """``int_{e_k}^{e_{k+1}} g**2`` for consecutive edges."""
        e = np.asarray(edges, dtype=float)
        lo, hi = e[:-1], e[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        out = half * (self._eval(x) ** 2 @ _GL_WEIGHTS)
        a = self._singular_exponent()
        if e[0] == 0 and a is not None:
            out[0] = integrate.quad(lambda u: self._eval_regular(u) ** 2, 0.0, e[1],
                                    weight="alg", wvar=(2 * a, 0.0), limit=200)[0]
        return out

    def cell_averages(self, n: int, dt: float) -> np.ndarray:
        """Averages of ``g`` over ``[k dt, (k+1) dt)``, ``k = 0..n-1``."""
        return self.cell_integrals(dt * np.arange(n + 1)) / dt

    def tail_point(self, eps: float) -> float:
        """Smallest ``T`` (up to bisection tolerance) with ``int_T^inf g^2 <= eps * ||g||^2``."""
        total = self.l2_norm_sq()
        tail = lambda T: integrate.quad(lambda x: self._eval(np.asarray(x)) ** 2, T, np.inf,
                                        limit=400)[0]
        hi = self._scale()
        while tail(hi) > eps * total:
            hi *= 2.0
            if hi > 1e9:
                raise ValueError("kernel tail does not decay fast enough")
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if tail(mid) > eps * total:
                lo = mid
            else:
                hi = mid
        return hi

    def regularity(self) -> KernelRegularity:
        raise NotImplementedError

    @property
    def g0(self) -> float:
        return self.regularity().g_at_zero

    def to_dict(self) -> dict:
        raise NotImplementedError


class OUKernel(Kernel):
    """Exponential kernel ``exp(-alpha x)``."""

    family = "ou"

    def __init__(self, alpha: float):
        if not alpha > 0:
            raise ValueError("OU kernel needs alpha > 0")
        self.alpha = float(alpha)

    def __repr__(self):
        return f"OUKernel(alpha={self.alpha})"

    def _eval(self, x):
        return np.exp(-self.alpha * x)

    def derivative(self, x):
        return -self.alpha * np.exp(-self.alpha * np.asarray(x, dtype=float))

    def _scale(self):
        return 1.0 / self.alpha

    def l2_norm_sq(self):
        return 1.0 / (2.0 * self.alpha)

    def _overlap_scalar(self, h):
        return math.exp(-self.alpha * h) / (2.0 * self.alpha)

    def integral(self):
        return 1.0 / self.alpha

    def cell_integrals(self, edges):
        e = np.asarray(edges, dtype=float)
        return (np.exp(-self.alpha * e[:-1]) - np.exp(-self.alpha * e[1:])) / self.alpha

    def tail_point(self, eps):
        return -math.log(eps) / (2.0 * self.alpha)

    def regularity(self):
        return KernelRegularity(1.0, True, True)

    def to_dict(self):
        return {"family": "ou", "alpha": self.alpha}


class GammaKernel(Kernel):
    """Gamma-type kernel with ``g**2`` equal to the Gamma(2 nu - 1, lam) density.

    Parameters
    ----------
    nu : float
        Shape, ``nu > 1/2``. The kernel is singular at 0 for ``nu < 1``.
    lam : float
        Rate, ``lam > 0``.
    """

    family = "gamma"

    def __init__(self, nu: float, lam: float):
        if not nu > 0.5:
            raise ValueError("gamma kernel needs nu > 1/2")
        if not lam > 0:
            raise ValueError("gamma kernel needs lambda > 0")
        self.nu = float(nu)
        self.lam = float(lam)
        self._c = lam ** (nu - 0.5) / math.sqrt(gamma_fn(2.0 * nu - 1.0))

    def __repr__(self):
        return f"GammaKernel(nu={self.nu}, lam={self.lam})"

    def _eval(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.nu == 1.0:
                return self._c * np.exp(-0.5 * self.lam * x)
            return self._c * x ** (self.nu - 1.0) * np.exp(-0.5 * self.lam * x)

    def _eval_regular(self, x):
        return self._c * np.exp(-0.5 * self.lam * np.asarray(x, dtype=float))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return self._eval(x) * ((self.nu - 1.0) / x - 0.5 * self.lam)

    def _singular_exponent(self):
        return self.nu - 1.0 if self.nu < 1.0 else None

    def _scale(self):
        return 2.0 / self.lam

    def l2_norm_sq(self):
        return 1.0

    def _overlap_scalar(self, h):
        if h == 0:
            return 1.0
        nu = self.nu
        return float(bessel_k_bar(nu - 0.5, 0.5 * self.lam * h)
                     / (2.0 ** (nu - 1.5) * gamma_fn(nu - 0.5)))

    def integral(self):
        return self._c * gamma_fn(self.nu) * (2.0 / self.lam) ** self.nu

    def cell_integrals(self, edges):
        e = np.asarray(edges, dtype=float)
        cdf = special.gammainc(self.nu, 0.5 * self.lam * e)
        return self.integral() * np.diff(cdf)

    def sq_cell_integrals(self, edges):
        e = np.asarray(edges, dtype=float)
        return np.diff(special.gammainc(2.0 * self.nu - 1.0, self.lam * e))

    def tail_point(self, eps):
        return float(special.gammainccinv(2.0 * self.nu - 1.0, eps) / self.lam)

    def regularity(self):
        nu = self.nu
        if nu < 1.0:
            g0 = math.inf
        elif nu == 1.0:
            g0 = self._c
        else:
            g0 = 0.0
        return KernelRegularity(g0, bool(nu > 1.5 or nu == 1.0), True)

    def to_dict(self):
        return {"family": "gamma", "nu": self.nu, "lambda": self.lam}


class GammaDensityKernel(Kernel):
    """Gamma probability density ``ga(x; shape, rate)`` used as a drift kernel."""

    family = "gamma_density"

    def __init__(self, shape: float, rate: float):
        if not (shape > 0 and rate > 0):
            raise ValueError("gamma density kernel needs shape > 0 and rate > 0")
        self.shape = float(shape)
        self.rate = float(rate)
        self._logc = shape * math.log(rate) - special.gammaln(shape)

    def __repr__(self):
        return f"GammaDensityKernel(shape={self.shape}, rate={self.rate})"

    def _eval(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.shape == 1.0:
                return np.exp(self._logc - self.rate * x)
            return np.exp(self._logc + (self.shape - 1.0) * np.log(x) - self.rate * x)

    def _eval_regular(self, x):
        return np.exp(self._logc - self.rate * np.asarray(x, dtype=float))

    def _singular_exponent(self):
        return self.shape - 1.0 if self.shape < 1.0 else None

    def _scale(self):
        return 1.0 / self.rate

    def integral(self):
        return 1.0

    def cell_integrals(self, edges):
        return np.diff(special.gammainc(self.shape, self.rate * np.asarray(edges, dtype=float)))

    def regularity(self):
        s = self.shape
        g0 = math.inf if s < 1 else (self.rate if s == 1 else 0.0)
        return KernelRegularity(g0, bool(s > 1.5 or s == 1.0), bool(s > 0.5))

    def to_dict(self):
        return {"family": "gamma_density", "shape": self.shape, "rate": self.rate}


class CarmaKernel(Kernel):
    """CARMA(p, q) kernel ``b^T exp(A x) e_p``.

    Parameters
    ----------
    a : sequence of float
        Autoregressive coefficients ``alpha_1..alpha_p``; the companion
        matrix has last row ``(-alpha_p, ..., -alpha_1)``.
    b : sequence of float
        Moving-average coefficients ``b_0..b_q`` with ``b_q = 1`` and ``q < p``.
    """

    family = "carma"

    def __init__(self, a, b):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        p, q = a.size, b.size - 1
        if p < 1 or q < 0 or q >= p:
            raise ValueError("CARMA needs 0 <= q < p")
        if b[-1] != 1.0:
            raise ValueError("CARMA needs b_q = 1")
        A = np.zeros((p, p))
        if p > 1:
            A[:-1, 1:] = np.eye(p - 1)
        A[-1, :] = -a[::-1]
        eig = np.linalg.eigvals(A)
        if not np.all(eig.real < 0):
            raise ValueError("CARMA companion matrix must have eigenvalues with negative real part")
        self.a = a
        self.b_coef = b
        self.A = A
        self.bvec = np.zeros(p)
        self.bvec[: q + 1] = b
        self.ep = np.zeros(p)
        self.ep[-1] = 1.0
        self._decay = float(-eig.real.max())

    def __repr__(self):
        return f"CarmaKernel(a={self.a.tolist()}, b={self.b_coef.tolist()})"

    @property
    def p(self) -> int:
        return self.a.size

    def _eval(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty_like(flat)
        for i, xi in enumerate(flat):
            out[i] = self.bvec @ linalg.expm(self.A * xi) @ self.ep
        return out.reshape(x.shape)

    def eval_grid(self, n: int, dt: float) -> np.ndarray:
        """Values at ``0, dt, ..., (n-1) dt`` by repeated one-step propagation."""
        step = linalg.expm(self.A * dt)
        v = self.ep.copy()
        out = np.empty(n)
        for k in range(n):
            out[k] = self.bvec @ v
            v = step @ v
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.array([self.bvec @ self.A @ linalg.expm(self.A * xi) @ self.ep for xi in flat])
        return out.reshape(x.shape)

    def _scale(self):
        return 1.0 / self._decay

    def _gramian(self) -> np.ndarray:
        return linalg.solve_continuous_lyapunov(self.A, -np.outer(self.ep, self.ep))

    def l2_norm_sq_lyapunov(self) -> float:
        """Closed form ``b^T P b`` with ``A P + P A^T = -e_p e_p^T``."""
        return float(self.bvec @ self._gramian() @ self.bvec)

    def overlap_lyapunov(self, h):
        """Closed form ``b^T exp(A h) P b``."""
        P = self._gramian()
        hs = np.atleast_1d(np.asarray(h, dtype=float))
        out = np.array([self.bvec @ linalg.expm(self.A * hi) @ P @ self.bvec for hi in hs])
        return float(out[0]) if np.ndim(h) == 0 else out

    def acf_lyapunov(self, h):
        return self.overlap_lyapunov(h) / self.l2_norm_sq_lyapunov()

    def integral(self):
        return float(-self.bvec @ np.linalg.solve(self.A, self.ep))

    def cell_integrals(self, edges):
        e = np.asarray(edges, dtype=float)
        Ainv_ep = np.linalg.solve(self.A, self.ep)
        prim = np.array([self.bvec @ linalg.expm(self.A * ei) @ Ainv_ep for ei in e])
        return np.diff(prim)

    def cell_averages(self, n, dt):
        # exp(A x) A^{-1} e_p propagated on the grid
        step = linalg.expm(self.A * dt)
        v = np.linalg.solve(self.A, self.ep)
        prim = np.empty(n + 1)
        for k in range(n + 1):
            prim[k] = self.bvec @ v
            v = step @ v
        return np.diff(prim) / dt

    def regularity(self):
        return KernelRegularity(float(self.bvec @ self.ep), True, True)

    def to_dict(self):
        return {"family": "carma", "a": self.a.tolist(), "b": self.b_coef.tolist()}


class BjerksundKernel(Kernel):
    """Hyperbolic kernel ``sigma / (x + b)``.

    Square integrable but not integrable, so only centred drivers give a
    finite mean.
    """

    family = "bjerksund"

    def __init__(self, sigma: float, b: float):
        if not (sigma > 0 and b > 0):
            raise ValueError("Bjerksund kernel needs sigma > 0 and b > 0")
        self.sigma = float(sigma)
        self.b = float(b)

    def __repr__(self):
        return f"BjerksundKernel(sigma={self.sigma}, b={self.b})"

    def _eval(self, x):
        return self.sigma / (x + self.b)

    def derivative(self, x):
        return -self.sigma / (np.asarray(x, dtype=float) + self.b) ** 2

    def _scale(self):
        return self.b

    def l2_norm_sq(self):
        return self.sigma ** 2 / self.b

    def _overlap_scalar(self, h):
        if h == 0:
            return self.l2_norm_sq()
        return self.sigma ** 2 / h * math.log1p(h / self.b)

    def integral(self):
        return math.inf

    def cell_integrals(self, edges):
        e = np.asarray(edges, dtype=float)
        return self.sigma * np.diff(np.log(e + self.b))

    def tail_point(self, eps):
        return self.b / eps - self.b

    def regularity(self):
        return KernelRegularity(self.sigma / self.b, True, True)

    def to_dict(self):
        return {"family": "bjerksund", "sigma": self.sigma, "b": self.b}


class SeparableKernel:
    """Nonstationary kernel ``G(t, s) = g1(t) g2(s)`` for ``s <= t``.

    Parameters
    ----------
    g1, g2 : callable
        Vectorised factor functions.
    """

    family = "separable"

    def __init__(self, g1: Callable, g2: Callable):
        self.g1 = g1
        self.g2 = g2

    def G(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        out = np.where(s <= t, self.g1(t) * self.g2(s), 0.0)
        return float(out) if np.ndim(out) == 0 else out


KernelLike = Kernel | SeparableKernel


# ---------------------------------------------------------------------------
# Module-level operations


def kernel_eval(k: Kernel, x):
    """Value of ``k`` at ``x >= 0``."""
    return k.eval(x)


def l2_norm_sq(k: Kernel) -> float:
    return k.l2_norm_sq()


def overlap(k: Kernel, h):
    return k.overlap(h)


def acf_zero_mean(k: Kernel, h):
    return k.acf(h)


def regularity(k: Kernel) -> KernelRegularity:
    return k.regularity()


def kernel_from_dict(d: dict) -> Kernel:
    """Build a kernel from its JSON description."""
    fam = str(d.get("family", "")).lower()
    try:
        if fam == "ou":
            return OUKernel(d["alpha"])
        if fam == "gamma":
            return GammaKernel(d["nu"], d["lambda"])
        if fam == "carma":
            return CarmaKernel(d["a"], d["b"])
        if fam == "bjerksund":
            return BjerksundKernel(d["sigma"], d["b"])
        if fam == "gamma_density":
            return GammaDensityKernel(d["shape"], d["rate"])
    except KeyError as exc:
        raise ValueError(f"kernel spec missing field {exc}") from None
    raise ValueError(f"unknown kernel family {fam!r}")
