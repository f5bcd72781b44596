r"""Seasonal level and the geometric / arithmetic spot models.

The log-seasonality is

.. math::

    \log\Lambda(t) = \beta_0 + \beta_1\cos\frac{\tau_1 + 2\pi t}{P_y}
                   + \beta_2\cos\frac{\tau_2 + 2\pi t}{P_w} + \beta_3 t,

with ``P_y = 261`` and ``P_w = 5`` business days.  The phases enter before
the division by the period, exactly as written above.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .lss import LssProcess


@dataclass(frozen=True)
class Seasonality:
    beta0: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    tau1: float = 0.0
    tau2: float = 0.0
    period_year: float = 261.0
    period_week: float = 5.0

    def __post_init__(self):
        if not (self.period_year > 0 and self.period_week > 0):
            raise ValueError("seasonal periods must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "Seasonality":
        allowed = cls.__dataclass_fields__.keys()
        unknown = set(d) - set(allowed)
        if unknown:
            raise ValueError(f"unknown seasonality fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def log_seasonality(s: Seasonality, t):
    """``log Lambda(t)``."""
    t = np.asarray(t, dtype=float)
    out = (
        s.beta0
        + s.beta1 * np.cos((s.tau1 + 2.0 * math.pi * t) / s.period_year)
        + s.beta2 * np.cos((s.tau2 + 2.0 * math.pi * t) / s.period_week)
        + s.beta3 * t
    )
    return float(out) if np.ndim(out) == 0 else out


def seasonality(s: Seasonality, t):
    """``Lambda(t) = exp(log Lambda(t))``."""
    return np.exp(log_seasonality(s, t))


class SpotKind(enum.Enum):
    Geometric = "geometric"
    Arithmetic = "arithmetic"


@dataclass
class SpotModel:
    """Spot price ``Lambda(t) exp(Y_t)`` (geometric) or ``Lambda(t) + Y_t`` (arithmetic).

    ``positivity_warning`` is set for arithmetic models whose driver is not a
    subordinator or whose kernel can be negative.
    """

    kind: SpotKind
    seasonality: Seasonality
    core: LssProcess
    positivity_warning: bool = field(init=False, default=False)

    def __post_init__(self):
        self.kind = SpotKind(self.kind)
        if self.kind is SpotKind.Arithmetic:
            nonneg = self.core.g.family in ("ou", "gamma", "bjerksund")
            self.positivity_warning = not (self.core.driver.is_subordinator and nonneg)

    def level(self, t):
        return seasonality(self.seasonality, t)


def spot_path(m: SpotModel, times, core_path):
    """Map a path of ``Y`` on ``times`` to spot prices."""
    lam = seasonality(m.seasonality, times)
    y = np.asarray(core_path, dtype=float)
    if m.kind is SpotKind.Geometric:
        return lam * np.exp(y)
    return lam + y
