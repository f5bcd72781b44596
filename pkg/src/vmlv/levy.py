r"""Driving Levy processes, subordinators and the Esscher transform.

Each model carries its cumulant :math:`\phi(x) = \log E[e^{x L_1}]`, the
interval of real ``x`` on which it is finite, exact increment samplers and
the Esscher-tilted copy.  Under the Esscher measure with density
:math:`\exp(\theta L_t - t\phi(\theta))` the cumulant becomes
:math:`\phi^\theta(x) = \phi(x + \theta) - \phi(\theta)`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EsscherParams:
    """Market prices of risk: ``theta`` for the driver, ``eta`` for the volatility.

    Both are switched on at time 0 and vanish before.
    """

    theta: float = 0.0
    eta: float = 0.0


class LevyModel:
    """Base class; subclasses implement ``cumulant``, ``strip`` and ``sample_increments``."""

    family = "abstract"
    is_subordinator = False

    def strip(self) -> tuple[float, float]:
        """Open interval of real ``x`` where ``E[exp(x L_1)]`` is finite."""
        return (-math.inf, math.inf)

    def _check_strip(self, x):
        lo, hi = self.strip()
        xr = np.real(np.asarray(x))
        if np.any(xr <= lo) or np.any(xr >= hi):
            raise ValueError(f"cumulant argument outside the exponential-moment strip ({lo}, {hi})")

    def _cumulant(self, x):
        raise NotImplementedError

    def cumulant(self, x):
        """``log E[exp(x L_1)]``; complex ``x`` allowed inside the strip."""
        self._check_strip(x)
        out = self._cumulant(np.asarray(x))
        return out.item() if np.ndim(out) == 0 else out

    def esscher(self, theta: float) -> "LevyModel":
        """Model of ``L`` under the Esscher measure with parameter ``theta``."""
        raise NotImplementedError

    @property
    def kappa1(self) -> float:
        raise NotImplementedError

    @property
    def kappa2(self) -> float:
        raise NotImplementedError

    def sample_increments(self, dt: float, size, rng: np.random.Generator) -> np.ndarray:
        """Independent draws of ``L_dt``."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(self.params().items())))


class Brownian(LevyModel):
    """Brownian motion with drift ``d`` and variance ``b`` per unit time."""

    family = "brownian"

    def __init__(self, drift: float = 0.0, variance: float = 1.0):
        if not variance > 0:
            raise ValueError("Brownian variance must be positive")
        self.drift = float(drift)
        self.variance = float(variance)

    def params(self):
        return {"drift": self.drift, "variance": self.variance}

    def _cumulant(self, x):
        return self.drift * x + 0.5 * self.variance * x * x

    def esscher(self, theta):
        return Brownian(self.drift + self.variance * theta, self.variance)

    @property
    def kappa1(self):
        return self.drift

    @property
    def kappa2(self):
        return self.variance

    def sample_increments(self, dt, size, rng):
        return self.drift * dt + math.sqrt(self.variance * dt) * rng.standard_normal(size)


class NIG(LevyModel):
    """Normal inverse Gaussian process with ``0 <= |beta| < alpha``, ``delta > 0``."""

    family = "nig"

    def __init__(self, alpha: float, beta: float, mu: float, delta: float):
        if not (alpha > 0 and abs(beta) < alpha and delta > 0):
            raise ValueError("NIG needs |beta| < alpha and delta > 0")
        self.alpha, self.beta, self.mu, self.delta = map(float, (alpha, beta, mu, delta))

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta, "mu": self.mu, "delta": self.delta}

    def strip(self):
        return (-self.alpha - self.beta, self.alpha - self.beta)

    def _cumulant(self, x):
        a, b = self.alpha, self.beta
        root = np.sqrt(a * a - (b + x) ** 2 + 0j) if np.iscomplexobj(x) else np.sqrt(a * a - (b + x) ** 2)
        return self.mu * x + self.delta * (math.sqrt(a * a - b * b) - root)

    def esscher(self, theta):
        return NIG(self.alpha, self.beta + theta, self.mu, self.delta)

    @property
    def _gam(self):
        return math.sqrt(self.alpha ** 2 - self.beta ** 2)

    @property
    def kappa1(self):
        return self.mu + self.delta * self.beta / self._gam

    @property
    def kappa2(self):
        return self.delta * self.alpha ** 2 / self._gam ** 3

    def sample_increments(self, dt, size, rng):
        # X = mu dt + beta V + sqrt(V) Z with V ~ IG(mean delta dt / gam, shape (delta dt)^2)
        d = self.delta * dt
        v = rng.wald(d / self._gam, d * d, size)
        return self.mu * dt + self.beta * v + np.sqrt(v) * rng.standard_normal(size)


class CompoundPoissonNormal(LevyModel):
    """Compound Poisson process with normal jumps."""

    family = "cp_normal"

    def __init__(self, rate: float, jump_mean: float, jump_sd: float):
        if not (rate > 0 and jump_sd >= 0):
            raise ValueError("compound Poisson needs rate > 0 and jump_sd >= 0")
        self.rate, self.jump_mean, self.jump_sd = map(float, (rate, jump_mean, jump_sd))

    def params(self):
        return {"rate": self.rate, "jump_mean": self.jump_mean, "jump_sd": self.jump_sd}

    def _cumulant(self, x):
        return self.rate * (np.exp(self.jump_mean * x + 0.5 * self.jump_sd ** 2 * x * x) - 1.0)

    def esscher(self, theta):
        m, s = self.jump_mean, self.jump_sd
        return CompoundPoissonNormal(self.rate * math.exp(m * theta + 0.5 * s * s * theta * theta),
                                     m + s * s * theta, s)

    @property
    def kappa1(self):
        return self.rate * self.jump_mean

    @property
    def kappa2(self):
        return self.rate * (self.jump_mean ** 2 + self.jump_sd ** 2)

    def sample_increments(self, dt, size, rng):
        n = rng.poisson(self.rate * dt, size)
        return self.jump_mean * n + self.jump_sd * np.sqrt(n) * rng.standard_normal(size)


class CompoundPoissonExp(LevyModel):
    """Compound Poisson subordinator with exponential jumps of rate ``jump_rate``.

    This is the background driver of the gamma-OU volatility model.
    """

    family = "cp_exp"
    is_subordinator = True

    def __init__(self, rate: float, jump_rate: float):
        if not (rate > 0 and jump_rate > 0):
            raise ValueError("compound Poisson needs rate > 0 and jump_rate > 0")
        self.rate, self.jump_rate = float(rate), float(jump_rate)

    def params(self):
        return {"rate": self.rate, "jump_rate": self.jump_rate}

    def strip(self):
        return (-math.inf, self.jump_rate)

    def _cumulant(self, x):
        return self.rate * x / (self.jump_rate - x)

    def esscher(self, theta):
        c = self.jump_rate
        if not theta < c:
            raise ValueError("Esscher parameter must be below the jump rate")
        return CompoundPoissonExp(self.rate * c / (c - theta), c - theta)

    @property
    def kappa1(self):
        return self.rate / self.jump_rate

    @property
    def kappa2(self):
        return 2.0 * self.rate / self.jump_rate ** 2

    def sample_increments(self, dt, size, rng):
        n = rng.poisson(self.rate * dt, size)
        # Sum of n exponentials is Gamma(n); n = 0 gives 0.
        out = np.zeros(np.shape(n))
        pos = n > 0
        out[pos] = rng.gamma(n[pos], 1.0 / self.jump_rate)
        return out

    def levy_density(self, z):
        z = np.asarray(z, dtype=float)
        return self.rate * self.jump_rate * np.exp(-self.jump_rate * z)


class GammaSubordinator(LevyModel):
    """Gamma process with ``L_1 ~ Gamma(shape a, rate c)``."""

    family = "gamma"
    is_subordinator = True

    def __init__(self, a: float, c: float):
        if not (a > 0 and c > 0):
            raise ValueError("gamma subordinator needs a > 0 and c > 0")
        self.a, self.c = float(a), float(c)

    def params(self):
        return {"a": self.a, "c": self.c}

    def strip(self):
        return (-math.inf, self.c)

    def _cumulant(self, x):
        return -self.a * np.log(1.0 - x / self.c)

    def esscher(self, theta):
        if not theta < self.c:
            raise ValueError("Esscher parameter must be below the rate c")
        return GammaSubordinator(self.a, self.c - theta)

    @property
    def kappa1(self):
        return self.a / self.c

    @property
    def kappa2(self):
        return self.a / self.c ** 2

    def sample_increments(self, dt, size, rng):
        return rng.gamma(self.a * dt, 1.0 / self.c, size)


class IGSubordinator(LevyModel):
    """Inverse Gaussian subordinator, ``L_1 ~ IG(delta, gamma)`` with mean ``delta / gamma``."""

    family = "ig"
    is_subordinator = True

    def __init__(self, delta: float, gamma: float):
        if not (delta > 0 and gamma > 0):
            raise ValueError("IG subordinator needs delta > 0 and gamma > 0")
        self.delta, self.gamma = float(delta), float(gamma)

    def params(self):
        return {"delta": self.delta, "gamma": self.gamma}

    def strip(self):
        return (-math.inf, 0.5 * self.gamma ** 2)

    def _cumulant(self, x):
        g = self.gamma
        root = np.sqrt(g * g - 2.0 * x + 0j) if np.iscomplexobj(x) else np.sqrt(g * g - 2.0 * x)
        return self.delta * (g - root)

    def esscher(self, theta):
        if not theta < 0.5 * self.gamma ** 2:
            raise ValueError("Esscher parameter outside the IG strip")
        return IGSubordinator(self.delta, math.sqrt(self.gamma ** 2 - 2.0 * theta))

    @property
    def kappa1(self):
        return self.delta / self.gamma

    @property
    def kappa2(self):
        return self.delta / self.gamma ** 3

    def sample_increments(self, dt, size, rng):
        d = self.delta * dt
        return rng.wald(d / self.gamma, d * d, size)


# ---------------------------------------------------------------------------
# Module-level operations


def cumulant(m: LevyModel, x):
    """Log moment generating function of ``L_1``."""
    return m.cumulant(x)


def esscher_cumulant(m: LevyModel, theta: float, x):
    """Cumulant under the Esscher measure, ``phi(x + theta) - phi(theta)``."""
    m._check_strip(theta)
    return m.cumulant(np.asarray(x) + theta) - m.cumulant(theta)


def esscher_triplet(m: LevyModel, theta: float) -> LevyModel:
    """Same-family model of ``L`` under the Esscher measure."""
    m._check_strip(theta)
    return m if theta == 0 else m.esscher(theta)


def sample_increments(m: LevyModel, dt: float, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. increments over ``dt``, reproducible from ``seed``."""
    if not dt > 0 or n < 1:
        raise ValueError("need dt > 0 and n >= 1")
    return m.sample_increments(dt, n, np.random.default_rng(seed))


_FAMILIES = {
    "brownian": (Brownian, ("drift", "variance")),
    "nig": (NIG, ("alpha", "beta", "mu", "delta")),
    "cp_normal": (CompoundPoissonNormal, ("rate", "jump_mean", "jump_sd")),
    "cp_exp": (CompoundPoissonExp, ("rate", "jump_rate")),
    "gamma": (GammaSubordinator, ("a", "c")),
    "ig": (IGSubordinator, ("delta", "gamma")),
}


def levy_from_dict(d: dict) -> LevyModel:
    """Build a driver from its JSON description, e.g. ``{"family": "nig", ...}``."""
    fam = str(d.get("family", "")).lower()
    if fam not in _FAMILIES:
        raise ValueError(f"unknown Levy family {fam!r}")
    cls, names = _FAMILIES[fam]
    kwargs = {k: d[k] for k in names if k in d}
    missing = [k for k in names if k not in d and not (cls is Brownian)]
    if missing:
        raise ValueError(f"Levy spec missing fields {missing}")
    return cls(**kwargs)
