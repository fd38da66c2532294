"""Generator of the synthetic calibration dataset.

The series are produced from known parameters (the bundled tables plus the
values in ``GENERATOR``) so that every fit can be checked by recovering
them. Nothing here is observed data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import tables
from .calibration import model_gdp_paths, pad_path
from .model import GlobalParams, damage_denominator

GENERATOR = {
    "zeta": 0.0021,
    "tcre_wiggle": 0.01,
    "kahn_scale": 0.5,
    "kahn_shift": 0.002,
    "sigma_growth": 0.01,
    "fit_horizon": 300,
    "tax_levels": (50.0, 100.0, 200.0, 400.0, 800.0),
}
HIST_YEARS = (2014, 2015, 2016, 2017, 2018)
FIRST_YEAR = 2020
GDP_YEARS = 80
KAHN_YEARS = 95
SCHEMA_LINE = f"# schema_version={tables.SCHEMA_VERSION}\n"


def _write(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def rcp_emissions():
    """Annual emissions (GtC) for 1850..2100 in four stylised pathways."""
    hist_years = np.arange(1850, 2021)
    hist = 10.75 * ((hist_years - 1850) / 170.0) ** 2.2
    fut = np.arange(2021, 2101)
    s = (fut - 2020) / 80.0
    paths = {
        "RCP2.6": 10.75 * np.clip(1.0 - (fut - 2020) / 60.0, 0.0, None),
        "RCP4.5": np.where(fut <= 2040, 10.75, np.maximum(4.0, 10.75 - (fut - 2040) * (6.75 / 40.0))),
        "RCP6.0": 10.75 + 3.25 * np.sin(np.pi * np.minimum(s, 1.0) * 0.8),
        "RCP8.5": 10.75 + 17.25 * s**1.3,
    }
    years = np.concatenate([hist_years, fut])
    return years, {k: np.concatenate([hist, v]) for k, v in paths.items()}


def rcp_series(zeta=GENERATOR["zeta"]):
    """Cumulative emissions and temperatures with a small deterministic wiggle."""
    years, em = rcp_emissions()
    out = {}
    for name, e in em.items():
        cum = np.cumsum(e)
        temp = zeta * cum * (1.0 + GENERATOR["tcre_wiggle"] * np.sin(years / 7.0))
        out[name] = (years, e, cum, temp)
    return out


def model_temperatures(n: int) -> np.ndarray:
    """RCP4.5 temperatures from 2020 on, held after 2100."""
    years, _, _, temp = rcp_series()["RCP4.5"]
    return pad_path(temp[years >= FIRST_YEAR], n)


def kahn_pi(name: str):
    dmg = tables.damage_params()[name]
    return (GENERATOR["kahn_scale"] * dmg["pi1"], GENERATOR["kahn_scale"] * dmg["pi2"] + GENERATOR["kahn_shift"])


def population_path(name: str, n: int) -> np.ndarray:
    ic = tables.initial_conditions()[name]
    t = np.arange(n, dtype=float)
    lr, l0 = ic["pop_longrun_bn"], ic["pop_2020_bn"]
    return lr + (l0 - lr) * np.exp(-0.025 * t)


def make_synthetic_dataset(out_dir) -> Path:
    """Write the synthetic calibration dataset into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gp = GlobalParams()
    n = GENERATOR["fit_horizon"] + 1

    rows = []
    for name, (years, e, _, temp) in rcp_series().items():
        rows += [(name, int(y), float(a), float(b)) for y, a, b in zip(years, e, temp)]
    _write(out / "rcp.csv", ("scenario", "year", "emissions_gtc", "temp_c"), rows)

    init = tables.initial_conditions()
    tfp = tables.tfp_params()
    dmg = tables.damage_params()
    abat = tables.abatement_params()
    caps = tables.baseline_cap_table()
    T = model_temperatures(n)
    gdp_rows, pop_rows, init_rows, tax_rows, kahn_rows = [], [], [], [], []
    hist_rows, ndc_rows, nz_rows = [], [], []
    for name in tables.REGIONS:
        ic = init[name]
        L = population_path(name, n)
        y0 = ic["gdp_2020_tusd"] / ic["pop_2020_bn"]
        K0 = ic["capital_output_ratio"] * ic["gdp_2020_tusd"]
        params = (tfp[name]["g0"], tfp[name]["d"], dmg[name]["pi1"], dmg[name]["pi2"])
        nocc, cc = model_gdp_paths(params, y0, K0, L, T, gp, n_nocc=GDP_YEARS, n_cc=GDP_YEARS)
        nocc_level = nocc * y0 * damage_denominator(T[0], params[2], params[3])
        for k in range(GDP_YEARS):
            gdp_rows.append((name, FIRST_YEAR + k, float(nocc_level[k]), float(cc[k] * y0)))
        pop_rows += [(name, FIRST_YEAR + k, float(L[k])) for k in range(n)]
        init_rows.append((name, float(y0), float(K0)))

        # tax scenarios: zero-tax emissions grow with GDP at a falling intensity
        gdp_total = nocc_level * L[:GDP_YEARS]
        sigma = ic["emissions_2020_gtc"] / gdp_total[0] * np.exp(-GENERATOR["sigma_growth"] * np.arange(GDP_YEARS))
        E0 = sigma * gdp_total
        b = abat[name]
        for k in range(0, GDP_YEARS, 5):
            tax_rows.append(("zero", FIRST_YEAR + k, 0.0, name, float(E0[k])))
        for tau in GENERATOR["tax_levels"]:
            label = f"tax{int(tau):03d}"
            for k in range(0, GDP_YEARS, 5):
                theta = b["b1"] + b["b3"] * np.exp(-b["b4"] * k)
                mu = min(1.0, (tau / (1000.0 * b["b2"] * theta)) ** (1.0 / (b["b2"] - 1.0)))
                tax_rows.append((label, FIRST_YEAR + k, tau, name, float((1.0 - mu) * E0[k])))

        p1, p2 = kahn_pi(name)
        T26 = np.linspace(1.2, 1.7, KAHN_YEARS)
        T85 = np.linspace(1.2, 4.6, KAHN_YEARS)
        loss26 = 1.0 - damage_denominator(T26[0], p1, p2) / damage_denominator(T26, p1, p2)
        loss85 = 1.0 - (1.0 - loss26) * damage_denominator(T26, p1, p2) / damage_denominator(T85, p1, p2)
        for k in range(KAHN_YEARS):
            kahn_rows.append((name, FIRST_YEAR + k, float(loss26[k]), float(loss85[k]), float(T26[k]), float(T85[k])))

        # two synthetic countries per region; the second inherits the first's pledge
        cap = caps[name]
        target = float(cap[2])
        for ci, (country, share) in enumerate(((f"{name}_A", 0.7), (f"{name}_B", 0.3))):
            for y in HIST_YEARS:
                level = cap[0] * (1.0 + 0.004 * (2020 - y)) * share
                hist_rows.append((country, name, y, float(level)))
            nz_year = FIRST_YEAR + 5 * int(np.argmax(cap <= 0.0)) if np.any(cap <= 0.0) else 2070
            nz_rows.append((country, nz_year))
        ref = cap[0] * (1.0 + 0.004 * 2)
        reduction = 1.0 - target / ref
        kind = "intensity" if name == "China" else "absolute"
        gdp_ratio = 1.6 if kind == "intensity" else 1.0
        if kind == "intensity":
            reduction = 1.0 - target / (ref * gdp_ratio)
        ndc_rows.append((f"{name}_A", 2030, kind, float(reduction), 2018, gdp_ratio, ""))
        ndc_rows.append((f"{name}_B", 2030, "inherit", "", "", "", f"{name}_A"))

    _write(out / "gdp.csv", ("region", "year", "gdppc_nocc", "gdppc_cc"), gdp_rows)
    _write(out / "population.csv", ("region", "year", "pop_bn"), pop_rows)
    _write(out / "initial.csv", ("region", "gdppc_2020", "capital_2020_tusd"), init_rows)
    _write(out / "tax_scenarios.csv", ("scenario", "year", "tax_usd_tc", "region", "emissions_gtc"), tax_rows)
    _write(out / "kahn.csv", ("region", "year", "loss_rcp26", "loss_rcp85", "temp_rcp26", "temp_rcp85"), kahn_rows)
    _write(out / "history.csv", ("country", "region", "year", "emissions_gtc"), hist_rows)
    _write(out / "ndc.csv", ("country", "target_year", "kind", "reduction", "reference_year", "gdp_ratio", "inherit_from"), ndc_rows)
    _write(out / "netzero.csv", ("country", "netzero_year"), nz_rows)
    return out
