"""Model equations of the multi-region climate-economy with permit trading.

Every function here is a pure evaluation of one model equation. They accept
scalars or numpy arrays (broadcasting applies) and never optimize anything.

Units used throughout the package:

* emissions in GtC, money in trillion 2020 USD, population in billions,
  so per-capita consumption is in thousand USD;
* permit prices are carried internally in $T/GtC and shown in USD/tC
  (multiply by ``USD_PER_TC``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

USD_PER_TC = 1000.0
"""Converts $T/GtC to USD per ton of carbon."""

BASE_YEAR = 2020
INITIAL_TEMPERATURE = 1.2


class ModelError(ValueError):
    """Base class for invalid evaluations of the model equations."""


class NonpositiveDamageDenominator(ModelError):
    pass


class NonpositiveConsumption(ModelError):
    pass


class NegativeCapital(ModelError):
    pass


@dataclass(frozen=True)
class GlobalParams:
    beta: float = 0.985
    gamma: float = 1.45
    alpha: float = 0.3
    delta: float = 0.1
    zeta: float = 0.0021
    horizon: int = 300
    consumption_share_terminal: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.gamma <= 0.0 or self.gamma == 1.0:
            raise ValueError(f"gamma must be positive and != 1, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.zeta <= 0.0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise ValueError(f"horizon must be an integer >= 2, got {self.horizon}")

    @property
    def initial_cum_emissions(self) -> float:
        """Cumulative emissions consistent with the 1.2 degC starting temperature."""
        return INITIAL_TEMPERATURE / self.zeta


@dataclass
class RegionParams:
    """Calibrated constants and exogenous paths of one region.

    All ``*_path`` arrays are indexed by year offset from 2020 and must cover
    at least ``horizon + 1`` entries (the terminal year included).
    """

    name: str
    b1: float
    b2: float
    b3: float
    b4: float
    pi1: float
    pi2: float
    g0: float
    d: float
    K0: float
    A_path: np.ndarray
    L_path: np.ndarray
    sigma_path: np.ndarray
    cap_path: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("A_path", "L_path", "sigma_path", "cap_path"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float))
        if self.b1 < 0 or self.b3 < 0 or self.b4 < 0:
            raise ValueError(f"{self.name}: abatement coefficients b1, b3, b4 must be >= 0")
        if self.b2 <= 1.0:
            raise ValueError(f"{self.name}: abatement exponent b2 must exceed 1")
        if np.any(self.L_path <= 0) or np.any(self.sigma_path <= 0):
            raise ValueError(f"{self.name}: population and carbon intensity must be positive")
        if np.any(self.cap_path < 0):
            raise ValueError(f"{self.name}: emission caps must be non-negative")
        if self.K0 < 0:
            raise ValueError(f"{self.name}: initial capital must be non-negative")

    @property
    def A0(self) -> float:
        return float(self.A_path[0])

    def path_length(self) -> int:
        return min(len(self.A_path), len(self.L_path), len(self.sigma_path), len(self.cap_path))

    def abatement_coefficient(self, t):
        """b1 + b3*exp(-b4*t): the time-varying cost scale per unit of intensity."""
        return self.b1 + self.b3 * np.exp(-self.b4 * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class WorldState:
    year_index: int
    capitals: tuple
    cum_emissions: float

    def __post_init__(self):
        if self.year_index < 0:
            raise ValueError("year_index must be >= 0")
        if any(k < 0 for k in self.capitals):
            raise NegativeCapital("capital stocks must be non-negative")
        if self.cum_emissions < 0:
            raise ValueError("cumulative emissions must be non-negative")


@dataclass(frozen=True)
class RegionDecision:
    mu: float
    permit_purchase: float
    investment: float

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"emission control rate must lie in [0, 1], got {self.mu}")


def _check_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0.0) or np.any(mu > 1.0) or np.any(np.isnan(mu)):
        raise ValueError("emission control rate must lie in [0, 1]")
    return mu


def gross_emissions(sigma, Q):
    return np.multiply(sigma, Q)


def net_emissions(mu, sigma, Q):
    mu = _check_mu(mu)
    return (1.0 - mu) * np.multiply(sigma, Q)


def temperature(cum_emissions, zeta=GlobalParams.zeta):
    return np.multiply(zeta, cum_emissions)


def gross_output(A, K, L, alpha):
    return A * np.power(K, alpha) * np.power(L, 1.0 - alpha)


def damage_denominator(T, pi1, pi2):
    return 1.0 + pi1 * T + pi2 * np.square(T)


def net_output(Q, T, pi1, pi2):
    denom = damage_denominator(T, pi1, pi2)
    if np.any(denom <= 0):
        raise NonpositiveDamageDenominator(
            f"1 + pi1*T + pi2*T^2 must be positive (pi1={pi1}, pi2={pi2})"
        )
    return Q / denom


def abatement_cost(mu, Q, sigma, b1, b2, b3, b4, t):
    mu = _check_mu(mu)
    theta = b1 + b3 * np.exp(-b4 * np.asarray(t, dtype=float))
    return theta * sigma * np.power(mu, b2) * Q


def consumption(Y, I, Phi, m, permit_purchase, L):
    """Per-capita consumption left after investment, abatement and permits."""
    if np.any(np.asarray(L) <= 0):
        raise ValueError("population must be positive")
    c = (Y - I - Phi - m * permit_purchase) / L
    if np.any(c <= 0):
        raise NonpositiveConsumption("budget leaves non-positive consumption")
    return c


def step_capital(K, I, delta):
    K_next = (1.0 - delta) * K + I
    if np.any(K_next < 0):
        raise NegativeCapital("investment drives next-period capital below zero")
    return K_next


def utility(c, gamma):
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise NonpositiveConsumption("utility requires positive consumption")
    return np.power(c, 1.0 - gamma) / (1.0 - gamma)


def marginal_utility(c, gamma):
    return np.power(c, -gamma)


def mac(mu, sigma, b1, b2, b3, b4, t):
    """Marginal abatement cost in USD/tC.

    ``sigma`` cancels out of the derivative of abatement cost with respect to
    abated tonnes; it is accepted so call sites mirror :func:`abatement_cost`.
    """
    mu = _check_mu(mu)
    theta = b1 + b3 * np.exp(-b4 * np.asarray(t, dtype=float))
    return USD_PER_TC * b2 * np.power(mu, b2 - 1.0) * theta * np.ones_like(np.asarray(sigma, dtype=float))


def terminal_value(Y_terminal, L_terminal, gamma, beta, share=0.75):
    """Value of the post-horizon tail: consumption frozen at ``share`` of output forever."""
    c = share * np.asarray(Y_terminal, dtype=float) / L_terminal
    return utility(c, gamma) * L_terminal / (1.0 - beta)
