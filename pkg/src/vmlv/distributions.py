r"""Generalised inverse Gaussian (GIG) and generalised hyperbolic (GH) laws.

The GIG density is

.. math::

    f(x) = \frac{(\psi/\chi)^{\lambda/2}}{2 K_\lambda(\sqrt{\chi\psi})}
           x^{\lambda-1} \exp\left(-\tfrac12(\chi/x + \psi x)\right),

and a GH variable is the normal mean-variance mixture
:math:`X = \mu + W\gamma + \sqrt{W}\sigma Z` with :math:`W` GIG.  GH laws are
parametrised by :math:`(\lambda, \bar\alpha, \mu, \sigma, \gamma)`, where the
mixing law is scaled to have unit mean.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from .specfun import log_bessel_k


class Family(enum.IntEnum):
    """GH subfamilies in reporting order."""

    GHYP = 0
    NIG = 1
    StudentT = 2
    HYP = 3
    VG = 4
    Gaussian = 5


@dataclass(frozen=True)
class GigParams:
    """GIG(lambda, chi, psi) parameters.

    Raises
    ------
    ValueError
        Unless one of the admissible regions holds:
        ``chi > 0, psi >= 0, lam < 0``; ``chi > 0, psi > 0, lam == 0``;
        ``chi >= 0, psi > 0, lam > 0``.
    """

    lam: float
    chi: float
    psi: float

    def __post_init__(self):
        lam, chi, psi = self.lam, self.chi, self.psi
        ok = (
            (chi > 0 and psi >= 0 and lam < 0)
            or (chi > 0 and psi > 0 and lam == 0)
            or (chi >= 0 and psi > 0 and lam > 0)
        )
        if not ok or not all(map(math.isfinite, (lam, chi, psi))):
            raise ValueError(f"inadmissible GIG parameters {self}")


@dataclass(frozen=True)
class GhParams:
    """Univariate GH parameters in the (lambda, alpha_bar) parametrisation.

    ``alpha_bar = inf`` encodes the Gaussian limit.
    """

    lam: float
    alpha_bar: float
    mu: float
    sigma: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.alpha_bar >= 0:
            raise ValueError("alpha_bar must be nonnegative")
        if self.alpha_bar == 0:
            if not (self.lam > 0 or self.lam < -1):
                raise ValueError(
                    "alpha_bar = 0 requires lam > 0 (variance gamma) or lam < -1 (Student t)"
                )


@dataclass(frozen=True)
class FittedModel:
    """Outcome of a maximum-likelihood fit of one GH subfamily."""

    params: GhParams
    log_likelihood: float
    n_params: int
    family_tag: Family
    symmetric: bool
    converged: bool = True
    aic: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "aic", 2.0 * self.n_params - 2.0 * self.log_likelihood)


# ---------------------------------------------------------------------------
# GIG


def _gig_log_norm(p: GigParams) -> float:
    """Log of the normalising constant multiplying x^(lam-1) exp(...)."""
    lam, chi, psi = p.lam, p.chi, p.psi
    if chi == 0:
        # Gamma(lam, rate psi/2).
        return lam * math.log(psi / 2.0) - special.gammaln(lam)
    if psi == 0:
        # Inverse gamma(-lam, scale chi/2).
        return -lam * math.log(chi / 2.0) - special.gammaln(-lam)
    omega = math.sqrt(chi * psi)
    return 0.5 * lam * math.log(psi / chi) - math.log(2.0) - log_bessel_k(lam, omega)


def gig_logpdf(x, p: GigParams):
    """Log density of GIG(p) at ``x > 0``."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise ValueError("GIG density is defined for x > 0")
    out = _gig_log_norm(p) + (p.lam - 1.0) * np.log(xa) - 0.5 * (p.chi / xa + p.psi * xa)
    return float(out) if np.ndim(out) == 0 else out


def gig_density(x, p: GigParams):
    """GIG density; the boundary regions reduce to gamma or inverse gamma."""
    out = np.exp(gig_logpdf(x, p))
    return float(out) if np.ndim(out) == 0 else out


def gig_moment(p: GigParams, r: float = 1.0) -> float:
    """Raw moment ``E[W**r]``."""
    lam, chi, psi = p.lam, p.chi, p.psi
    if chi == 0:
        return math.exp(special.gammaln(lam + r) - special.gammaln(lam)) * (2.0 / psi) ** r
    if psi == 0:
        if r >= -lam:
            return math.inf
        return math.exp(special.gammaln(-lam - r) - special.gammaln(-lam)) * (chi / 2.0) ** r
    omega = math.sqrt(chi * psi)
    return (chi / psi) ** (r / 2.0) * math.exp(
        log_bessel_k(lam + r, omega) - log_bessel_k(lam, omega)
    )


def gig_mean(p: GigParams) -> float:
    return gig_moment(p, 1.0)


def gig_var(p: GigParams) -> float:
    return gig_moment(p, 2.0) - gig_moment(p, 1.0) ** 2


def gig_laplace(p: GigParams, s):
    """Laplace transform ``E[exp(-s W)]`` for ``s >= 0``."""
    s = np.asarray(s, dtype=float)
    lam, chi, psi = p.lam, p.chi, p.psi
    if chi == 0:
        return (1.0 + 2.0 * s / psi) ** (-lam)
    if psi == 0:
        z = np.sqrt(2.0 * chi * s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 2.0 * (z / 2.0) ** (-lam) * special.kv(-lam, z) / special.gamma(-lam)
        return np.where(s == 0, 1.0, out)
    omega = math.sqrt(chi * psi)
    z = np.sqrt(chi * (psi + 2.0 * s))
    return (psi / (psi + 2.0 * s)) ** (lam / 2.0) * np.exp(
        log_bessel_k(lam, z) - log_bessel_k(lam, omega)
    )


def _gig_frozen(p: GigParams):
    if p.chi == 0:
        return stats.gamma(a=p.lam, scale=2.0 / p.psi)
    if p.psi == 0:
        return stats.invgamma(a=-p.lam, scale=p.chi / 2.0)
    return stats.geninvgauss(p=p.lam, b=math.sqrt(p.chi * p.psi), scale=math.sqrt(p.chi / p.psi))


def gig_cdf(x, p: GigParams):
    """GIG distribution function by adaptive quadrature of the density."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    order = np.argsort(xs)
    out = np.empty_like(xs)
    acc, prev = 0.0, 0.0
    for idx in order:
        xi = xs[idx]
        if xi <= 0:
            out[idx] = 0.0
            continue
        acc += integrate.quad(lambda w: gig_density(w, p), prev, xi, limit=200)[0]
        prev = xi
        out[idx] = min(acc, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out


def sample_gig(p: GigParams, size, rng: np.random.Generator):
    """Draw GIG variates (ratio-of-uniforms sampler in the interior region)."""
    return _gig_frozen(p).rvs(size=size, random_state=rng)


def alphabar_to_chipsi(p: GhParams) -> GigParams:
    """Mixing-law parameters for the (lambda, alpha_bar) parametrisation.

    ``psi = a K_{lam+1}(a) / K_lam(a)``, ``chi = a**2 / psi`` so that the
    GIG mixing variable has unit mean.  For ``alpha_bar = 0`` the unit-mean
    boundary laws are returned: gamma (``lam > 0``) or inverse gamma
    (``lam < -1``).
    """
    a, lam = p.alpha_bar, p.lam
    if math.isinf(a):
        raise ValueError("the Gaussian limit has no GIG mixing law")
    if a == 0:
        if lam > 0:
            return GigParams(lam, 0.0, 2.0 * lam)
        if lam < -1:
            return GigParams(lam, -2.0 * (lam + 1.0), 0.0)
        raise ValueError("alpha_bar = 0 is degenerate for -1 <= lam <= 0")
    psi = a * math.exp(log_bessel_k(lam + 1.0, a) - log_bessel_k(lam, a))
    return GigParams(lam, a * a / psi, psi)


# ---------------------------------------------------------------------------
# GH


def _log_mixture_integral(p_order: float, a, b: float):
    """log of int_0^inf w^(p-1) exp(-(a/w + b w)/2) dw for a >= 0, b >= 0."""
    a = np.asarray(a, dtype=float)
    if b > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.sqrt(a * b)
            pos = math.log(2.0) + 0.5 * p_order * (np.log(a) - math.log(b)) + (
                np.log(special.kve(abs(p_order), np.where(z > 0, z, 1.0))) - z
            )
        if p_order > 0:
            at_zero = special.gammaln(p_order) + p_order * math.log(2.0 / b)
        else:
            at_zero = math.inf
        return np.where(a > 0, pos, at_zero)
    # b == 0: needs p < 0
    with np.errstate(divide="ignore"):
        return special.gammaln(-p_order) + p_order * np.log(a / 2.0)


def gh_logpdf(x, p: GhParams):
    """Log density of the univariate GH law."""
    xa = np.asarray(x, dtype=float)
    if math.isinf(p.alpha_bar):
        out = stats.norm.logpdf(xa, loc=p.mu + p.gamma, scale=p.sigma)
        return float(out) if np.ndim(out) == 0 else out
    g = alphabar_to_chipsi(p)
    s2 = p.sigma ** 2
    dev = xa - p.mu
    q = dev * dev / s2
    out = (
        _gig_log_norm(g)
        - 0.5 * math.log(2.0 * math.pi * s2)
        + dev * p.gamma / s2
        + _log_mixture_integral(g.lam - 0.5, g.chi + q, g.psi + p.gamma ** 2 / s2)
    )
    return float(out) if np.ndim(out) == 0 else out


def gh_density(x, p: GhParams):
    """Density of ``mu + W gamma + sqrt(W) sigma Z`` with ``W`` unit-mean GIG."""
    out = np.exp(gh_logpdf(x, p))
    return float(out) if np.ndim(out) == 0 else out


def gh_mean(p: GhParams) -> float:
    return p.mu + p.gamma


def gh_var(p: GhParams) -> float:
    if math.isinf(p.alpha_bar):
        return p.sigma ** 2
    g = alphabar_to_chipsi(p)
    return p.sigma ** 2 * gig_mean(g) + p.gamma ** 2 * gig_var(g)


def gh_cdf(x, p: GhParams):
    """GH distribution function by quadrature, increasing through sorted points."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if math.isinf(p.alpha_bar):
        out = stats.norm.cdf(xs, loc=p.mu + p.gamma, scale=p.sigma)
        return float(out[0]) if np.ndim(x) == 0 else out
    order = np.argsort(xs)
    out = np.empty_like(xs)
    f = lambda u: gh_density(u, p)
    # Start from the mode side: integrate the left tail once, then step.
    start = xs[order[0]]
    acc = integrate.quad(f, -np.inf, start, limit=400)[0]
    prev = start
    for idx in order:
        xi = xs[idx]
        if xi > prev:
            pts = [p.mu] if prev < p.mu < xi else None
            acc += integrate.quad(f, prev, xi, limit=400, points=pts)[0]
            prev = xi
        out[idx] = min(max(acc, 0.0), 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out


def sample_gh(p: GhParams, size, rng: np.random.Generator):
    """Draw GH variates through the mixture representation."""
    z = rng.standard_normal(size)
    if math.isinf(p.alpha_bar):
        return p.mu + p.gamma + p.sigma * z
    w = sample_gig(alphabar_to_chipsi(p), size, rng)
    return p.mu + w * p.gamma + np.sqrt(w) * p.sigma * z


# ---------------------------------------------------------------------------
# Fitting

_N_FREE = {
    # (family, symmetric) -> number of free parameters
    Family.GHYP: 4,
    Family.NIG: 3,
    Family.StudentT: 3,
    Family.HYP: 3,
    Family.VG: 3,
    Family.Gaussian: 2,
}


def n_free_params(family: Family, symmetric: bool) -> int:
    """Number of estimated parameters of a subfamily."""
    k = _N_FREE[Family(family)]
    if family != Family.Gaussian and not symmetric:
        k += 1
    return k


def _unpack(family: Family, symmetric: bool, theta, scale: float) -> GhParams:
    theta = list(theta)
    mu = theta.pop(0) * scale
    sigma = math.exp(theta.pop(0)) * scale
    if family == Family.Gaussian:
        return GhParams(-0.5, math.inf, mu, sigma, 0.0)
    gamma = 0.0 if symmetric else theta.pop(-1) * scale
    if family == Family.GHYP:
        lam, abar = theta[0], math.exp(theta[1])
    elif family == Family.NIG:
        lam, abar = -0.5, math.exp(theta[0])
    elif family == Family.HYP:
        lam, abar = 1.0, math.exp(theta[0])
    elif family == Family.StudentT:
        lam, abar = -1.0 - math.exp(theta[0]), 0.0
    elif family == Family.VG:
        lam, abar = math.exp(theta[0]), 0.0
    else:
        raise ValueError(f"unknown family {family}")
    return GhParams(lam, abar, mu, sigma, gamma)


def _starts(family: Family, symmetric: bool, z):
    """Candidate starting vectors on the standardised scale."""
    m, s = float(np.median(z)), float(np.std(z))
    base = [m, math.log(s)]
    tail = [] if symmetric else [0.0]
    if family == Family.Gaussian:
        return [[float(np.mean(z)), math.log(s)]]
    shapes = {
        Family.GHYP: [[-0.5, math.log(1.0)], [1.0, math.log(1.0)], [-0.5, math.log(0.3)]],
        Family.NIG: [[math.log(1.0)], [math.log(0.3)], [math.log(3.0)]],
        Family.HYP: [[math.log(1.0)], [math.log(0.3)], [math.log(3.0)]],
        Family.StudentT: [[math.log(2.0)], [math.log(0.5)], [math.log(8.0)]],
        Family.VG: [[math.log(1.0)], [math.log(0.3)], [math.log(3.0)]],
    }[family]
    return [base + sh + tail for sh in shapes]


def fit_gh_family(data, family: Family, symmetric: bool = True, maxiter: int = 4000) -> FittedModel:
    """Maximum-likelihood fit of one GH subfamily by Nelder-Mead.

    Parameters
    ----------
    data : array_like
        At least 50 observations with positive spread.
    family : Family
        Subfamily tag. ``Gaussian`` ignores ``symmetric``.
    symmetric : bool
        If true the skewness ``gamma`` is pinned at zero.

    Returns
    -------
    FittedModel
        Best point found; ``converged`` is false when the optimiser stopped
        on its iteration budget.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 1 or x.size < 50:
        raise ValueError("fit_gh_family needs at least 50 observations")
    scale = float(np.std(x))
    if not scale > 0:
        raise ValueError("degenerate data: zero variance")
    family = Family(family)
    if family == Family.Gaussian:
        symmetric = True
    z = x / scale
    log_jac = -x.size * math.log(scale)

    def nll(theta):
        try:
            p = _unpack(family, symmetric, theta, 1.0)
            ll = np.sum(gh_logpdf(z, p))
        except (ValueError, OverflowError, FloatingPointError, ZeroDivisionError):
            return 1e300
        return -ll if np.isfinite(ll) else 1e300

    best = None
    for start in _starts(family, symmetric, z):
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            res = optimize.minimize(
                nll, np.asarray(start, dtype=float), method="Nelder-Mead",
                options={"maxiter": maxiter, "xatol": 1e-7, "fatol": 1e-9, "adaptive": True},
            )
        if best is None or res.fun < best.fun:
            best = res
    params = _unpack(family, symmetric, best.x, scale)
    ll = float(-best.fun + log_jac)
    return FittedModel(
        params=params,
        log_likelihood=ll,
        n_params=n_free_params(family, symmetric),
        family_tag=family,
        symmetric=symmetric,
        converged=bool(best.success),
    )


def fit_all_families(data) -> list[FittedModel]:
    """Fit the eleven subfamily configurations (five families, both symmetries, plus Gaussian)."""
    out = []
    for fam in (Family.GHYP, Family.NIG, Family.StudentT, Family.HYP, Family.VG):
        for sym in (True, False):
            out.append(fit_gh_family(data, fam, sym))
    out.append(fit_gh_family(data, Family.Gaussian, True))
    return out


def rank_by_aic(models) -> list[FittedModel]:
    """Sort by AIC; ties broken by fewer parameters, then family order."""
    models = list(models)
    if not models:
        raise ValueError("rank_by_aic needs at least one model")
    return sorted(models, key=lambda m: (m.aic, m.n_params, int(m.family_tag)))
