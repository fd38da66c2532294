"""Post-equilibrium analysis: MAC, SCC, optimal taxes, discount rates,
welfare comparisons and scenario tables.

All money values are reported in USD per ton of carbon (prices, MAC, SCC,
taxes) or 2020 USD per capita (compensating variation).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import model
from .nash import EquilibriumSolution, NashConfig, solve_nash
from .scenario import Scenario

REPORT_COLUMNS = ("region", "year", "variable", "value", "unit")
WELFARE_COLUMNS = ("region", "cv_usd_per_capita", "cv_share_pct")
REPORT_SCHEMA_VERSION = 1
EMISSION_TOL = 1e-4


class MissingMultipliers(ValueError):
    pass


class Unbracketed(RuntimeError):
    pass


class TemperatureMismatch(ValueError):
    pass


class GridMismatch(ValueError):
    pass


def _region_solution(eq: EquilibriumSolution, region: str):
    try:
        return eq.region_solutions[region]
    except KeyError:
        raise KeyError(f"region {region!r} not in equilibrium") from None


def mac_path(eq: EquilibriumSolution, region: str) -> np.ndarray:
    rp = eq.scenario.region(region)
    tr = eq.trajectories[region]
    t = np.arange(eq.horizon)
    return model.mac(tr.mu, rp.sigma_path[: eq.horizon], rp.b1, rp.b2, rp.b3, rp.b4, t)


def scc_path(eq: EquilibriumSolution, region: str) -> np.ndarray:
    """Regional SCC from the shadow prices of the emissions and capital transitions."""
    mult = _region_solution(eq, region).multipliers
    if "cum_emissions" not in mult or "capital" not in mult:
        raise MissingMultipliers(f"{region}: solution carries no transition multipliers")
    return -model.USD_PER_TC * np.asarray(mult["cum_emissions"]) / np.asarray(mult["capital"])


def permit_price_usd(eq: EquilibriumSolution) -> np.ndarray:
    return model.USD_PER_TC * eq.price_path


def optimal_tax_path(eq: EquilibriumSolution, region: str, emission_tol: float = EMISSION_TOL):
    """``max(0, MAC - price)`` with a flag for years where it is only a lower bound.

    The bound applies where the region emits nothing: the optimal tax may
    then exceed the gap between MAC and price.
    """
    mac = mac_path(eq, region)
    tax = np.maximum(0.0, mac - permit_price_usd(eq))
    lower_bound = eq.trajectories[region].emissions <= emission_tol
    return tax, lower_bound


def discount_rates(eq_or_consumption, region: str | None = None, beta: float | None = None,
                   gamma: float | None = None) -> np.ndarray:
    """Endogenous social discount rates ``r_{t+1} = u'(c_t) / (beta u'(c_{t+1})) - 1``.

    Accepts an equilibrium plus region, or a bare consumption path with
    ``beta`` and ``gamma``.
    """
    if isinstance(eq_or_consumption, EquilibriumSolution):
        gp = eq_or_consumption.scenario.global_params
        c = eq_or_consumption.trajectories[region].consumption
        beta, gamma = gp.beta, gp.gamma
    else:
        c = np.asarray(eq_or_consumption, dtype=float)
    if np.any(c <= 0):
        raise model.NonpositiveConsumption("discount rates need positive consumption")
    return (c[1:] / c[:-1]) ** gamma / beta - 1.0


def marginal_damages(eq: EquilibriumSolution, region: str) -> np.ndarray:
    """Output lost per extra GtC of cumulative emissions, years 0..H ($T/GtC)."""
    rp = eq.scenario.region(region)
    gp = eq.scenario.global_params
    tr = eq.trajectories[region]
    T = tr.temperature
    D = model.damage_denominator(T, rp.pi1, rp.pi2)
    dD = gp.zeta * (rp.pi1 + 2.0 * rp.pi2 * T)
    return tr.gross_output * dD / D**2


def pv_damage_check(eq: EquilibriumSolution, region: str):
    """Compare the SCC with the discounted stream of future marginal damages.

    A pulse in year t raises cumulative emissions from t+1 on. Damages are
    discounted with the endogenous rates; the post-horizon tail is valued
    like the terminal value, at 75% consumption forever. Returns the worst
    relative gap and the per-year gaps.
    """
    gp = eq.scenario.global_params
    H = eq.horizon
    tr = eq.trajectories[region]
    c = np.empty(H + 1)
    c[:H] = tr.consumption
    c[H] = gp.consumption_share_terminal * tr.net_output[H] / tr.population[H]
    r = discount_rates(c, beta=gp.beta, gamma=gp.gamma)
    factor = np.concatenate([[1.0], np.cumprod(1.0 / (1.0 + r))])
    md = marginal_damages(eq, region)
    md[H] *= gp.consumption_share_terminal / (1.0 - gp.beta)
    stream = factor * md
    tail = np.cumsum(stream[::-1])[::-1]
    pv = model.USD_PER_TC * tail[1:] / factor[:H]
    scc = scc_path(eq, region)
    scale = np.maximum(np.abs(scc), np.max(np.abs(scc), initial=0.0) * 1e-6 + 1e-12)
    gaps = np.abs(pv - scc) / scale
    return float(np.max(gaps, initial=0.0)), gaps


def welfare_sum(consumption, population, beta: float, gamma: float) -> float:
    """Discounted welfare over the horizon, without the terminal value."""
    c = np.asarray(consumption, dtype=float)
    disc = beta ** np.arange(len(c))
    return float(np.sum(disc * model.utility(c, gamma) * np.asarray(population[: len(c)])))


def compensating_variation(eq_with_ets: EquilibriumSolution, eq_without_ets: EquilibriumSolution,
                           region: str, temperature_tol: float = 1e-3, tol: float = 1e-12):
    """Uniform per-capita consumption reduction in the ETS economy that equates
    its welfare with the no-ETS economy.

    Returns ``(cv_usd_per_capita, cv_share_pct)``; the share is relative to
    no-ETS per-capita consumption in the first year. Positive values mean the
    ETS economy is preferred.
    """
    gap = float(np.max(np.abs(eq_with_ets.temperature - eq_without_ets.temperature)))
    if gap > temperature_tol:
        raise TemperatureMismatch(
            f"temperature paths differ by {gap:.3g} degC; compare economies under the adjusted caps"
        )
    gp = eq_with_ets.scenario.global_params
    c1 = eq_with_ets.trajectories[region].consumption
    c0 = eq_without_ets.trajectories[region].consumption
    L = eq_with_ets.trajectories[region].population
    cv = cv_from_paths(c1, c0, L, gp.beta, gp.gamma, tol)
    return model.USD_PER_TC * cv, 100.0 * cv / c0[0]


def cv_from_paths(c1, c0, population, beta, gamma, tol=1e-12) -> float:
    """Solve ``W(c1 - x) = W(c0)`` for the scalar ``x`` (consumption units)."""
    c1 = np.asarray(c1, dtype=float)
    target = welfare_sum(c0, population, beta, gamma)

    def f(x):
        return welfare_sum(c1 - x, population, beta, gamma) - target

    if f(0.0) == 0.0:
        return 0.0
    cmin = float(np.min(c1))
    half = 0.5 * cmin
    lo, hi = -half, half
    limit = cmin * (1.0 - 1e-12)
    while f(lo) < 0.0:
        lo *= 2.0
        if lo < -1e6 * cmin:
            raise Unbracketed("no compensating variation below the search interval")
    while f(hi) > 0.0:
        if hi >= limit:
            raise Unbracketed("compensating variation would exhaust consumption")
        hi = min(limit, hi * 2.0)
    return float(brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


@dataclass
class WelfareComparison:
    rows: dict
    eq_no_ets: EquilibriumSolution
    eq_adjusted_ets: EquilibriumSolution
    eq_adjusted_no_ets: EquilibriumSolution
    adjusted_caps: dict

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# schema_version={REPORT_SCHEMA_VERSION}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(WELFARE_COLUMNS)
        for name, (cv, share) in self.rows.items():
            w.writerow([name, repr(float(cv)), repr(float(share))])
        return out.getvalue()


def adjusted_caps(eq_no_ets: EquilibriumSolution) -> dict:
    """Caps equal to the no-ETS optimal emissions, padded to the path length."""
    out = {}
    for rp in eq_no_ets.scenario.regions:
        E = eq_no_ets.trajectories[rp.name].emissions
        pad = len(rp.cap_path) - len(E)
        out[rp.name] = np.concatenate([E, np.full(max(pad, 0), E[-1])])
    return out


def welfare_workflow(scenario: Scenario, config: NashConfig | None = None,
                     eq_no_ets: EquilibriumSolution | None = None,
                     temperature_tol: float = 1e-3) -> WelfareComparison:
    """Solve without trading, take its emissions as caps, re-solve both
    economies under those caps and compare them region by region."""
    config = config or NashConfig()
    if eq_no_ets is None:
        eq_no_ets = solve_nash(scenario.with_ets(False), config)
    caps = adjusted_caps(eq_no_ets)
    adj = scenario.with_caps(caps, name=f"{scenario.name}-adjusted")
    eq0 = solve_nash(adj.with_ets(False), config, warm=eq_no_ets)
    eq1 = solve_nash(adj.with_ets(True), config)
    rows = {name: compensating_variation(eq1, eq0, name, temperature_tol) for name in scenario.region_names}
    return WelfareComparison(rows, eq_no_ets, eq1, eq0, caps)


def policy_report(eq: EquilibriumSolution) -> list:
    """Long-format rows (region, year, variable, value, unit)."""
    rows = []
    years = eq.years
    price = permit_price_usd(eq)
    for name in eq.scenario.region_names:
        tr = eq.trajectories[name]
        mac = mac_path(eq, name)
        scc = scc_path(eq, name)
        tax, lower = optimal_tax_path(eq, name)
        r = discount_rates(eq, name)
        _, gaps = pv_damage_check(eq, name)
        cols = [
            ("mac", mac, "USD/tC"), ("scc", scc, "USD/tC"), ("optimal_tax", tax, "USD/tC"),
            ("tax_lower_bound", lower.astype(float), "flag"),
            ("permit_price", price, "USD/tC"),
            ("discount_rate", np.append(r, np.nan), "1/yr"),
            ("pv_damage_gap", gaps, "1"),
            ("emissions", tr.emissions, "GtC"), ("permit_purchase", tr.permit_purchase, "GtC"),
            ("mu", tr.mu, "1"), ("consumption", model.USD_PER_TC * tr.consumption, "USD/capita"),
        ]
        if not eq.ets_enabled:
            cols = [c for c in cols if c[0] != "permit_price"]
        for t, year in enumerate(years):
            for var, values, unit in cols:
                v = values[t]
                if np.isnan(v):
                    continue
                rows.append((name, int(year), var, float(v), unit))
    return rows


def rows_to_csv(columns, rows) -> str:
    out = io.StringIO()
    out.write(f"# schema_version={REPORT_SCHEMA_VERSION}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return out.getvalue()


def report_csv(eq: EquilibriumSolution) -> str:
    return rows_to_csv(REPORT_COLUMNS, policy_report(eq))


def global_abatement(eq: EquilibriumSolution) -> np.ndarray:
    """Abated emissions ``mu * sigma * Q`` summed over regions (GtC)."""
    H = eq.horizon
    total = np.zeros(H)
    for rp in eq.scenario.regions:
        tr = eq.trajectories[rp.name]
        total += tr.mu * rp.sigma_path[:H] * tr.gross_output[:H]
    return total


def scenario_compare(solutions: dict) -> dict:
    """Aligned per-year tables of price, temperature, MAC and SCC across scenarios.

    Returns ``{table_name: (columns, rows)}``; scenario columns follow sorted
    labels so the output does not depend on argument order.
    """
    if len(solutions) < 2:
        raise ValueError("need at least two solutions to compare")
    labels = sorted(solutions)
    first = solutions[labels[0]]
    for lab in labels[1:]:
        other = solutions[lab]
        if other.horizon != first.horizon or other.scenario.region_names != first.scenario.region_names:
            raise GridMismatch(f"{lab} is not on the grid of {labels[0]}")
    years = first.years
    tables = {}

    def table(getter):
        cols = ("year",) + tuple(labels)
        rows = [(int(y),) + tuple(float(getter(solutions[lab])[t]) for lab in labels)
                for t, y in enumerate(years)]
        return cols, rows

    tables["price"] = table(permit_price_usd)
    tables["temperature"] = table(lambda e: e.temperature[: e.horizon])
    tables["global_emissions"] = table(lambda e: sum(tr.emissions for tr in e.trajectories.values()))
    tables["global_abatement"] = table(global_abatement)
    tables["traded_volume"] = table(lambda e: sum(np.maximum(tr.permit_purchase, 0.0) for tr in e.trajectories.values()))
    for name in first.scenario.region_names:
        tables[f"emissions_{name}"] = table(lambda e, n=name: e.trajectories[n].emissions)
        tables[f"permit_purchase_{name}"] = table(lambda e, n=name: e.trajectories[n].permit_purchase)
        tables[f"mac_{name}"] = table(lambda e, n=name: mac_path(e, n))
        tables[f"scc_{name}"] = table(lambda e, n=name: scc_path(e, n))
    return tables
