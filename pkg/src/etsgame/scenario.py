"""Assemble complete model scenarios from the bundled tables and fixtures."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tables
from .calibration import extend_tfp_growth
from .model import BASE_YEAR, INITIAL_TEMPERATURE, GlobalParams, RegionParams, damage_denominator

CAP_SCENARIOS = ("baseline", "netzero2050", "netzero2070", "netzero2090", "custom")
NETZERO_STITCH_YEAR = 2030

# carbon-intensity decline of the synthetic fixture, DICE-style
SIGMA_GROWTH_0 = -0.0152
SIGMA_GROWTH_DECLINE = -0.001
POP_CONVERGENCE_RATE = 0.025
TFP_FORMULA_YEARS = 80


@dataclass
class Scenario:
    name: str
    global_params: GlobalParams
    regions: list
    ets_enabled: bool = True
    cap_scenario: str = "baseline"
    meta: dict = field(default_factory=dict)

    @property
    def region_names(self) -> list:
        return [r.name for r in self.regions]

    def region(self, name: str) -> RegionParams:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def with_caps(self, caps: dict, name: str | None = None) -> "Scenario":
        """Copy of the scenario with per-region annual caps replaced."""
        regions = [replace(r, cap_path=np.asarray(caps[r.name], dtype=float)) if r.name in caps else r
                   for r in self.regions]
        return replace(self, regions=regions, name=name or self.name, cap_scenario="custom")

    def with_ets(self, enabled: bool) -> "Scenario":
        return replace(self, ets_enabled=bool(enabled))


def annual_caps(values, length: int, years=tables.CAP_TABLE_YEARS) -> np.ndarray:
    """Linear interpolation of a coarse cap table onto the annual grid.

    Beyond the last tabulated year the last value is held.
    """
    cal = BASE_YEAR + np.arange(length)
    return np.interp(cal, np.asarray(years, dtype=float), np.asarray(values, dtype=float))


def netzero_caps(values, netzero_year: int, length: int, years=tables.CAP_TABLE_YEARS,
                 stitch_year: int = NETZERO_STITCH_YEAR) -> np.ndarray:
    """Baseline caps up to ``stitch_year``, then a straight line to 0 at ``netzero_year``."""
    if netzero_year <= stitch_year:
        raise ValueError("net-zero year must follow the stitch year")
    base = annual_caps(values, length, years)
    cal = BASE_YEAR + np.arange(length)
    level = float(np.interp(stitch_year, years, values))
    tail = level * np.clip((netzero_year - cal) / (netzero_year - stitch_year), 0.0, None)
    return np.where(cal <= stitch_year, base, tail)


def cap_paths(cap_scenario: str, length: int, custom_table: dict | None = None,
              custom_years=None) -> dict:
    if cap_scenario not in CAP_SCENARIOS:
        raise ValueError(f"unknown cap scenario {cap_scenario!r}; choose from {', '.join(CAP_SCENARIOS)}")
    if cap_scenario == "custom":
        if custom_table is None:
            raise ValueError("custom cap scenario needs a cap table")
        years = custom_years if custom_years is not None else tables.CAP_TABLE_YEARS
        return {k: annual_caps(v, length, years) for k, v in custom_table.items()}
    table = tables.baseline_cap_table()
    if cap_scenario == "baseline":
        return {k: annual_caps(v, length) for k, v in table.items()}
    year = int(cap_scenario[len("netzero"):])
    return {k: netzero_caps(v, year, length) for k, v in table.items()}


def exogenous_paths(length: int, global_params: GlobalParams, region_overrides: dict | None = None) -> dict:
    """Population, TFP and carbon-intensity paths for all twelve regions.

    TFP grows at ``g0*exp(-d*t)`` for the first 80 years and follows the
    leader-convergence rule afterwards. Initial TFP reproduces 2020 GDP net
    of damages at the initial temperature.
    """
    gp = global_params
    a = gp.alpha
    init = tables.initial_conditions()
    tfp = tables.tfp_params()
    dmg = tables.damage_params()
    overrides = region_overrides or {}
    t = np.arange(length, dtype=float)
    out = {}
    g_79, y_79 = {}, {}
    for name in tables.REGIONS:
        ic = dict(init[name])
        pars = {**tfp[name], **dmg[name], **ic, **overrides.get(name, {})}
        L0 = pars["pop_2020_bn"]
        L = pars["pop_longrun_bn"] + (L0 - pars["pop_longrun_bn"]) * np.exp(-POP_CONVERGENCE_RATE * t)
        Y0 = pars["gdp_2020_tusd"]
        K0 = pars.get("K0", pars["capital_output_ratio"] * Y0)
        Q0 = Y0 * damage_denominator(INITIAL_TEMPERATURE, pars["pi1"], pars["pi2"])
        A0 = Q0 / (K0**a * L0 ** (1.0 - a))
        g = pars["g0"] * np.exp(-pars["d"] * t)
        sig_g = SIGMA_GROWTH_0 * (1.0 + SIGMA_GROWTH_DECLINE) ** t
        sigma0 = pars["emissions_2020_gtc"] / Q0
        sigma = sigma0 * np.exp(np.concatenate([[0.0], np.cumsum(sig_g[:-1])]))
        n79 = min(TFP_FORMULA_YEARS - 1, length - 1)
        g_79[name] = float(g[n79])
        y_79[name] = (Y0 / L0) * np.exp(np.sum(g[:n79]) / (1.0 - a))
        out[name] = dict(L=L, g=g, A0=A0, K0=K0, sigma=sigma, pars=pars)
    if length > TFP_FORMULA_YEARS:
        ext = extend_tfp_growth(g_79, y_79, a, length - (TFP_FORMULA_YEARS - 1))
        for name in tables.REGIONS:
            out[name]["g"][TFP_FORMULA_YEARS - 1:] = ext[name]
    for name in tables.REGIONS:
        g = out[name]["g"]
        out[name]["A"] = out[name]["A0"] * np.exp(np.concatenate([[0.0], np.cumsum(g[:-1])]))
    return out


def build_scenario(cap_scenario: str = "baseline", horizon: int = 300, ets_enabled: bool = True,
                   regions=None, name: str | None = None, custom_caps: dict | None = None,
                   custom_years=None, region_overrides: dict | None = None,
                   global_overrides: dict | None = None, path_length: int | None = None) -> Scenario:
    """Scenario from the bundled tables.

    ``regions`` selects a subset (in canonical order). ``region_overrides``
    replaces table values per region, e.g. ``{"US": {"pi1": 0.0}}``.
    """
    gp_kwargs = {k: v for k, v in tables.key_params().items() if k in ("beta", "gamma", "alpha", "delta", "zeta")}
    gp_kwargs.update(global_overrides or {})
    gp = GlobalParams(horizon=horizon, **gp_kwargs)
    n = max(path_length or 0, horizon + 1)
    chosen = list(tables.REGIONS) if regions is None else [r for r in tables.REGIONS if r in set(regions)]
    unknown = set(regions or ()) - set(tables.REGIONS)
    if unknown:
        raise ValueError(f"unknown region(s): {', '.join(sorted(unknown))}")
    caps = cap_paths(cap_scenario, n, custom_caps, custom_years)
    paths = exogenous_paths(n, gp, region_overrides)
    abat = tables.abatement_params()
    out = []
    for rname in chosen:
        p = {**abat[rname], **paths[rname]["pars"]}
        if rname not in caps:
            raise ValueError(f"cap table lacks region {rname}")
        out.append(RegionParams(
            name=rname, b1=p["b1"], b2=p["b2"], b3=p["b3"], b4=p["b4"],
            pi1=p["pi1"], pi2=p["pi2"], g0=p["g0"], d=p["d"], K0=paths[rname]["K0"],
            A_path=paths[rname]["A"], L_path=paths[rname]["L"],
            sigma_path=paths[rname]["sigma"], cap_path=caps[rname],
        ))
    return Scenario(name=name or cap_scenario, global_params=gp, regions=out,
                    ets_enabled=ets_enabled, cap_scenario=cap_scenario)
