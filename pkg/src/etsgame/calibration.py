"""Calibration procedures: TCRE slope, cap pathways, TFP and damage fits,
carbon intensities, abatement-cost fit, Kahn damage fit, long-run TFP growth.

Every nonlinear fit is a bounded least-squares problem solved from eight
deterministic starting points; the best local solution is kept.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded
from scipy.optimize import least_squares

from .model import GlobalParams, damage_denominator

log = logging.getLogger(__name__)

US_LONGRUN_TFP_GROWTH = 0.0033
CONVERGENCE_CHI = 0.005
US_DECAY = 0.01
N_STARTS = 8

ABATEMENT_BOUNDS = ((0.0, 2.0 + 1e-9, 0.0, 0.0), (5.0, 6.0, 50.0, 0.2))
TFP_DAMAGE_BOUNDS = ((-0.02, 0.0, -1.0, -1.0), (0.08, 0.1, 1.0, 1.0))
KAHN_BOUNDS = ((-1.0, -1.0), (1.0, 1.0))


class DegenerateData(ValueError):
    pass


class ZeroGDP(ValueError):
    pass


class NoInteriorPoints(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class OutOfBounds(ValueError):
    pass


class NegativeSegment(UserWarning):
    """A fitted quadratic cap segment went negative and was clamped at 0."""


@dataclass
class FitResult:
    params: dict
    cost: float
    flags: list = field(default_factory=list)


def _multistart(fun, bounds, first, n_starts=N_STARTS, seed=0, **kw):
    """Run bounded least squares from ``first`` plus seeded uniform draws."""
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    rng = np.random.default_rng(seed)
    starts = [np.clip(np.asarray(first, dtype=float), lo, hi)]
    while len(starts) < n_starts:
        starts.append(lo + (hi - lo) * rng.random(len(lo)))
    best = None
    for x0 in starts:
        try:
            res = least_squares(fun, x0, bounds=(lo, hi), **kw)
        except (ValueError, FloatingPointError) as exc:
            log.debug("start %s failed: %s", x0, exc)
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise NonConvergence("no start produced a finite fit")
    return best


# TCRE

def cumulative(emissions, initial: float = 0.0) -> np.ndarray:
    """Cumulative emissions at the end of each year."""
    return initial + np.cumsum(np.asarray(emissions, dtype=float))


def fit_tcre(rcp_series: dict) -> float:
    """Least-squares slope through the origin of temperature on cumulative emissions.

    ``rcp_series`` maps scenario names to ``(cum_emissions, temperature)``
    pairs; all scenarios are pooled.
    """
    if not rcp_series:
        raise DegenerateData("no scenario supplied")
    cum = np.concatenate([np.asarray(v[0], dtype=float) for v in rcp_series.values()])
    temp = np.concatenate([np.asarray(v[1], dtype=float) for v in rcp_series.values()])
    if cum.shape != temp.shape:
        raise DegenerateData("cumulative emissions and temperatures are not aligned")
    if np.ptp(cum) == 0.0:
        raise DegenerateData("cumulative emissions do not vary")
    return float(cum @ temp / (cum @ cum))


# cap pathways

@dataclass
class CapPathway:
    """Annual caps (GtC) for consecutive calendar years starting at ``start_year``."""

    start_year: int
    caps: np.ndarray
    flags: list = field(default_factory=list)

    def values(self, first_year: int, length: int) -> np.ndarray:
        """Caps for ``length`` years from ``first_year``; 0 beyond the stored range."""
        idx = np.arange(length) + (first_year - self.start_year)
        if np.any(idx < 0):
            raise ValueError("requested years precede the pathway")
        out = np.zeros(length)
        ok = idx < len(self.caps)
        out[ok] = self.caps[idx[ok]]
        return out

    def __add__(self, other: "CapPathway") -> "CapPathway":
        start = min(self.start_year, other.start_year)
        n = max(self.start_year + len(self.caps), other.start_year + len(other.caps)) - start
        return CapPathway(start, self.values(start, n) + other.values(start, n), self.flags + other.flags)


def build_cap_pathway(hist_5yr, target, netzero_year: int, target_year: int = 2030,
                      hist_years=(2014, 2015, 2016, 2017, 2018), end_year: int = 2120,
                      anchor: str = "lstsq") -> CapPathway:
    """Quadratic trend from history to the pledge year, then linear to net zero.

    With ``anchor="lstsq"`` the quadratic is an unweighted least-squares fit
    through the history points and the target point; ``anchor="exact"``
    forces it through the target. The pathway starts at the last history year.
    """
    hist = np.asarray(hist_5yr, dtype=float)
    years = np.asarray(hist_years, dtype=float)
    if len(hist) != len(years) or len(hist) < 2:
        raise ValueError("history needs at least two aligned points")
    if netzero_year < target_year:
        raise ValueError("net-zero year must not precede the target year")
    if target_year <= years[-1]:
        raise ValueError("target year must follow the history")
    x0 = years[0]
    if anchor == "lstsq":
        coef = np.polyfit(np.append(years, target_year) - x0, np.append(hist, target), 2)
        quad = np.poly1d(coef)
    elif anchor == "exact":
        # q(x) = target + a (x - xT) + b (x - xT)^2 fitted to the history
        xT = target_year - x0
        dx = years - x0 - xT
        a, b = np.linalg.lstsq(np.column_stack([dx, dx**2]), hist - target, rcond=None)[0]
        quad = np.poly1d([b, a - 2 * b * xT, target - a * xT + b * xT**2])
    else:
        raise ValueError(f"unknown anchor {anchor!r}")
    start = int(years[-1])
    cal = np.arange(start, end_year + 1)
    caps = np.empty(len(cal))
    first = cal <= target_year
    caps[first] = quad(cal[first] - x0)
    level = float(quad(target_year - x0))
    flags = []
    if np.any(caps[first] < 0) or level < 0:
        warnings.warn("quadratic cap segment dips below zero; clamped", NegativeSegment, stacklevel=2)
        flags.append("negative_segment")
        caps[first] = np.maximum(caps[first], 0.0)
        level = max(level, 0.0)
    later = ~first
    if netzero_year == target_year:
        caps[later] = 0.0
    else:
        caps[later] = level * np.clip((netzero_year - cal[later]) / (netzero_year - target_year), 0.0, None)
    return CapPathway(start, caps, flags)


def ndc_target(kind: str, reduction: float, reference_emissions: float, gdp_ratio: float = 1.0) -> float:
    """Target-year emissions implied by a pledge.

    ``absolute``: a cut of ``reduction`` relative to reference emissions.
    ``intensity``: a cut in emissions per unit of GDP, converted with the
    projected GDP growth ``gdp_ratio`` between reference and target year,
    i.e. ``(1 - r) * sigma_ref * Q_target``.
    """
    if kind == "absolute":
        return (1.0 - reduction) * reference_emissions
    if kind == "intensity":
        return (1.0 - reduction) * reference_emissions * gdp_ratio
    raise ValueError(f"unknown pledge kind {kind!r}")


def aggregate(pathways) -> CapPathway:
    pathways = list(pathways)
    if not pathways:
        raise ValueError("nothing to aggregate")
    total = pathways[0]
    for p in pathways[1:]:
        total = total + p
    return total


# carbon intensity

def extract_carbon_intensity(emissions_path, gdp_path) -> np.ndarray:
    E = np.asarray(emissions_path, dtype=float)
    Q = np.asarray(gdp_path, dtype=float)
    if E.shape != Q.shape:
        raise ValueError("emission and GDP paths are not aligned")
    if np.any(Q <= 0):
        raise ZeroGDP("GDP must be positive to form carbon intensities")
    if np.any(E < 0):
        raise ValueError("emissions must be non-negative")
    return E / Q


# abatement cost

def control_rate(emissions, zero_tax_emissions) -> np.ndarray:
    return 1.0 - np.asarray(emissions, dtype=float) / np.asarray(zero_tax_emissions, dtype=float)


def _mac_usd(p, mu, t):
    b1, b2, b3, b4 = p
    return 1000.0 * b2 * mu ** (b2 - 1.0) * (b1 + b3 * np.exp(-b4 * t))


def fit_abatement(tax_scenarios, zero_tax_emissions, years_offset=None) -> FitResult:
    """Fit (b1, b2, b3, b4) so that the MAC reproduces each scenario's tax.

    ``tax_scenarios`` is a list of ``(tax_usd_tc, emissions)`` array pairs on
    the same annual grid as ``zero_tax_emissions``; ``years_offset`` gives
    the year index ``t`` of each grid point (default 0, 1, 2, ...).
    Only points with a positive tax and ``0 < mu < 1`` are used. Residuals
    are taken in logs so every tax level weighs alike.
    """
    E0 = np.asarray(zero_tax_emissions, dtype=float)
    t_grid = np.arange(len(E0), dtype=float) if years_offset is None else np.asarray(years_offset, dtype=float)
    mus, taxes, ts = [], [], []
    for tax, E in tax_scenarios:
        tax = np.asarray(tax, dtype=float)
        mu = control_rate(E, E0)
        keep = (tax > 0) & (mu > 0) & (mu < 1)
        mus.append(mu[keep])
        taxes.append(tax[keep])
        ts.append(t_grid[keep])
    mu = np.concatenate(mus) if mus else np.array([])
    tax = np.concatenate(taxes) if taxes else np.array([])
    t = np.concatenate(ts) if ts else np.array([])
    if len(mu) < 4:
        raise NoInteriorPoints("need at least four points with a positive tax and interior control rate")

    def resid(p):
        return np.log(_mac_usd(p, mu, t)) - np.log(tax)

    best = _multistart(resid, ABATEMENT_BOUNDS, (0.5, 3.0, 8.0, 0.15),
                       xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
    b1, b2, b3, b4 = (float(v) for v in best.x)
    flags = []
    if b4 <= ABATEMENT_BOUNDS[0][3] + 1e-9 or b4 >= ABATEMENT_BOUNDS[1][3] - 1e-9:
        flags.append("ill_conditioned_b4")
    return FitResult(dict(b1=b1, b2=b2, b3=b3, b4=b4), float(best.cost), flags)


# Kahn-style damage fit

def _kahn_resid(p, d26, d85, T26, T85):
    D26 = damage_denominator(T26, p[0], p[1])
    D85 = damage_denominator(T85, p[0], p[1])
    return D85 / D26 - (1.0 - d26) / (1.0 - d85)


def fit_damage_kahn(delta_rcp26, delta_rcp85, temps_rcp26, temps_rcp85) -> FitResult:
    """Fit (pi1, pi2) to the ratio of damage factors between two warming paths.

    ``delta_*`` are GDP-loss fractions; the model counterpart of
    ``(1 - loss26) / (1 - loss85)`` is ``D(T85) / D(T26)``.
    """
    d26, d85, T26, T85 = (np.asarray(v, dtype=float) for v in (delta_rcp26, delta_rcp85, temps_rcp26, temps_rcp85))
    if not (d26.shape == d85.shape == T26.shape == T85.shape):
        raise ValueError("series are not aligned")
    if np.allclose(T26, T85):
        raise DegenerateData("temperature paths are identical")
    target = (1.0 - d26) / (1.0 - d85)
    # linearised start: D85 - target*D26 = 0 is linear in (pi1, pi2)
    A = np.column_stack([T85 - target * T26, T85**2 - target * T26**2])
    first = np.linalg.lstsq(A, target - 1.0, rcond=None)[0]

    def resid(p):
        r = _kahn_resid(p, d26, d85, T26, T85)
        return np.where(np.isfinite(r), r, 1e6)

    best = _multistart(resid, KAHN_BOUNDS, first, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    return FitResult(dict(pi1=float(best.x[0]), pi2=float(best.x[1])), float(best.cost))


# long-run TFP growth

def extend_tfp_growth(g_79: dict, y_79: dict, alpha: float, n_years: int,
                      chi: float = CONVERGENCE_CHI, leader: str = "US") -> dict:
    """TFP growth rates from year offset 79 onwards.

    The leader's growth decays towards ``0.0033*(1-alpha)`` at rate 0.01 per
    year; every other region tracks the leader plus a catch-up term
    ``(1-alpha)*chi*ln(y_leader/y_i)`` driven by per-capita output.

    Returns per-region arrays ``g[k]`` for year ``79 + k``, ``k < n_years``.
    """
    if leader not in g_79:
        raise ValueError(f"leader region {leader!r} missing")
    if any(v <= 0 for v in y_79.values()):
        raise ValueError("per-capita outputs must be positive")
    g_inf = US_LONGRUN_TFP_GROWTH * (1.0 - alpha)
    k = np.arange(n_years)
    g_lead = g_inf + (g_79[leader] - g_inf) * np.exp(-US_DECAY * k)
    out = {leader: g_lead}
    y_lead = y_79[leader] * np.exp(np.concatenate([[0.0], np.cumsum(g_lead[:-1])]) / (1.0 - alpha))
    for name, g0 in g_79.items():
        if name == leader:
            continue
        g = np.empty(n_years)
        g[0] = g0
        y = y_79[name]
        for j in range(n_years - 1):
            g[j + 1] = g_lead[j + 1] + (1.0 - alpha) * chi * np.log(y_lead[j] / y)
            y *= np.exp(g[j] / (1.0 - alpha))
        out[name] = g
    return out


# TFP and damage structural estimation

def pad_path(values, n: int) -> np.ndarray:
    """First ``n`` entries of ``values``, holding the last value if it is shorter."""
    v = np.asarray(values, dtype=float)
    return np.concatenate([v, np.full(max(0, n - len(v)), v[-1])])[:n]


def tfp_path(A0: float, g0: float, d: float, length: int) -> np.ndarray:
    g = g0 * np.exp(-d * np.arange(length, dtype=float))
    return A0 * np.exp(np.concatenate([[0.0], np.cumsum(g[:-1])]))


def solve_ramsey(A, L, K0: float, damage_factor, gp: GlobalParams, tol: float = 1e-12,
                 max_iter: int = 100) -> dict:
    """Optimal growth with exogenous TFP, population and damage factor.

    Welfare is truncated like the climate model: after the last year output
    is consumed at the terminal share forever. The Euler system has a
    tridiagonal Hessian and is solved by Newton steps on it.
    """
    A, L, Om = (np.asarray(v, dtype=float) for v in (A, L, damage_factor))
    N = len(A) - 1
    a, g, beta, delta = gp.alpha, gp.gamma, gp.beta, gp.delta
    share = gp.consumption_share_terminal
    rho = beta ** np.arange(N + 1)
    rho[N] /= 1.0 - beta
    LA = Om * A * L ** (1.0 - a)

    def evaluate(Kn):
        K = np.concatenate([[K0], Kn])
        if np.any(K <= 0):
            return None
        Y = LA * K**a
        C = np.empty(N + 1)
        C[:N] = Y[:N] + (1.0 - delta) * K[:N] - K[1:]
        C[N] = share * Y[N]
        if np.any(C <= 0):
            return None
        c = C / L
        W = float(np.sum(rho * L * c ** (1.0 - g) / (1.0 - g)))
        return K, Y, C, c, W

    # start from a constant savings rate
    K = np.empty(N + 1)
    K[0] = K0
    for t in range(N):
        K[t + 1] = (1.0 - delta) * K[t] + 0.2 * LA[t] * K[t] ** a
    state = evaluate(K[1:])
    if state is None:
        raise NonConvergence("infeasible starting path for the growth model")
    for _ in range(max_iter):
        K, Y, C, c, W = state
        f1 = rho * c**-g
        f2 = -g * rho * c ** (-g - 1.0) / L
        YK = a * Y / K
        YKK = a * (a - 1.0) * Y / K**2
        dC = YK + 1.0 - delta
        dC[N] = share * YK[N]
        ddC = YKK.copy()
        ddC[N] *= share
        s = np.arange(1, N + 1)
        grad = -f1[s - 1] + f1[s] * dC[s]
        scale = f1[s - 1]
        if np.max(np.abs(grad) / scale) < tol:
            return dict(K=K, Y=Y, C=C, c=c, W=W, y=Y / L)
        diag = f2[s - 1] + f2[s] * dC[s] ** 2 + f1[s] * ddC[s]
        off = -f2[s[:-1]] * dC[s[:-1]]
        # negative Hessian in upper banded storage
        ab = np.zeros((2, N))
        ab[1] = -diag
        ab[0, 1:] = -off
        step = solveh_banded(ab, grad)
        lam = 1.0
        for _ in range(50):
            cand = evaluate(K[1:] + lam * step)
            if cand is not None and cand[4] >= W - 1e-14 * abs(W):
                break
            lam *= 0.5
        else:
            raise NonConvergence("growth-model line search failed")
        state = cand
    raise NonConvergence("growth model did not converge")


def initial_tfp(y0: float, K0: float, L0: float, T0: float, pi1: float, pi2: float, alpha: float) -> float:
    """TFP reproducing observed first-year GDP per capita net of damages."""
    return y0 * damage_denominator(T0, pi1, pi2) * L0**alpha / K0**alpha


def model_gdp_paths(params, y0, K0, L, temps, gp: GlobalParams, n_nocc=80, n_cc=30):
    """Normalised GDP per capita without and with climate damages."""
    g0, d, pi1, pi2 = params
    N = len(L) - 1
    D = damage_denominator(np.asarray(temps, dtype=float), pi1, pi2)
    if np.any(D <= 0):
        raise OutOfBounds("damage denominator non-positive along the temperature path")
    A0 = initial_tfp(y0, K0, L[0], temps[0], pi1, pi2, gp.alpha)
    A = tfp_path(A0, g0, d, N + 1)
    nocc = solve_ramsey(A, L, K0, np.ones(N + 1), gp)["y"]
    cc = solve_ramsey(A, L, K0, 1.0 / D, gp)["y"]
    return nocc[:n_nocc] / nocc[0], cc[:n_cc] / cc[0]


def fit_tfp_damage(gdp_nocc, gdp_cc, temps, y0: float, K0: float, population,
                   gp: GlobalParams | None = None, horizon: int = 300, first=None) -> FitResult:
    """Structural estimate of (g0, d, pi1, pi2) from projected GDP per capita.

    ``gdp_nocc`` (80 years) and ``gdp_cc`` (30 years) are projections without
    and with climate impacts; only their ratios to the first year matter.
    ``temps`` is the temperature path behind ``gdp_cc``; it is held at its
    last value beyond the data, as is population.
    """
    gp = gp or GlobalParams()
    nocc = np.asarray(gdp_nocc, dtype=float)
    cc = np.asarray(gdp_cc, dtype=float)
    if len(nocc) < 80 or len(cc) < 30:
        raise ValueError("need 80 years without and 30 years with climate impacts")
    n = horizon + 1
    T = pad_path(temps, n)
    L = pad_path(population, n)
    target_nocc = nocc[:80] / nocc[0]
    target_cc = cc[:30] / cc[0]

    def resid(p):
        try:
            m_nocc, m_cc = model_gdp_paths(p, y0, K0, L, T, gp)
        except (OutOfBounds, NonConvergence, FloatingPointError):
            return np.full(110, 1e3)
        return np.concatenate([m_nocc - target_nocc, m_cc - target_cc])

    if first is None:
        growth = np.log(target_nocc[-1]) / 79.0 * (1.0 - gp.alpha)
        first = (max(growth, 0.0), 0.005, 0.0, 0.0)
    best = _multistart(resid, TFP_DAMAGE_BOUNDS, first, xtol=1e-14, ftol=1e-14, gtol=1e-14,
                       max_nfev=400, x_scale=(0.01, 0.01, 0.1, 0.1), diff_step=1e-7)
    g0, d, pi1, pi2 = (float(v) for v in best.x)
    return FitResult(dict(g0=g0, d=d, pi1=pi1, pi2=pi2), float(best.cost))
