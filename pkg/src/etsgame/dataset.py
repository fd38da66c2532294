"""Calibration dataset ingestion, the full calibration run and the params file.

A dataset directory holds these CSV files, each starting with a
``# schema_version=N`` line:

``rcp.csv``            scenario, year, emissions_gtc, temp_c
``gdp.csv``            region, year, gdppc_nocc, gdppc_cc
``population.csv``     region, year, pop_bn
``initial.csv``        region, gdppc_2020, capital_2020_tusd
``tax_scenarios.csv``  scenario, year, tax_usd_tc, region, emissions_gtc
``kahn.csv``           region, year, loss_rcp26, loss_rcp85, temp_rcp26, temp_rcp85
``history.csv``        country, region, year, emissions_gtc
``ndc.csv``            country, target_year, kind, reduction, reference_year, gdp_ratio, inherit_from
``netzero.csv``        country, netzero_year
"""

from __future__ import annotations

import configparser
import hashlib
import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, calibration, tables
from .model import BASE_YEAR, GlobalParams

DATASET_FILES = {
    "rcp": ("rcp.csv", ("scenario", "year", "emissions_gtc", "temp_c")),
    "gdp": ("gdp.csv", ("region", "year", "gdppc_nocc", "gdppc_cc")),
    "population": ("population.csv", ("region", "year", "pop_bn")),
    "initial": ("initial.csv", ("region", "gdppc_2020", "capital_2020_tusd")),
    "tax": ("tax_scenarios.csv", ("scenario", "year", "tax_usd_tc", "region", "emissions_gtc")),
    "kahn": ("kahn.csv", ("region", "year", "loss_rcp26", "loss_rcp85", "temp_rcp26", "temp_rcp85")),
    "history": ("history.csv", ("country", "region", "year", "emissions_gtc")),
    "ndc": ("ndc.csv", ("country", "target_year", "kind", "reduction", "reference_year", "gdp_ratio", "inherit_from")),
    "netzero": ("netzero.csv", ("country", "netzero_year")),
}
OPTIONAL_CELLS = {"ndc": ("reduction", "reference_year", "gdp_ratio", "inherit_from")}
TEMPERATURE_SCENARIO = "RCP4.5"
CAP_END_YEAR = 2120
REGION_KEYS = ("b1", "b2", "b3", "b4", "pi1", "pi2", "g0", "d", "pi1_kahn", "pi2_kahn",
               "sigma_2020", "sigma_growth")


class CalibrationError(ValueError):
    """A fit could not be completed; no partial params file is written."""


@dataclass
class CalibrationDataset:
    root: Path
    frames: dict
    checksums: dict = field(default_factory=dict)

    def rows(self, key: str) -> list:
        return self.frames[key]


def _float(row, col, source, line):
    try:
        return float(row[col])
    except ValueError:
        raise tables.SchemaError(f"{source}: row {line}, column {col!r}: not a number: {row[col]!r}") from None


def _year(row, source, line, col="year"):
    v = _float(row, col, source, line)
    if v != int(v):
        raise tables.SchemaError(f"{source}: row {line}, column {col!r}: not an integer year")
    return int(v)


def load_dataset(root) -> CalibrationDataset:
    """Read and validate every file of a calibration dataset directory."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    frames, sums = {}, {}
    for key, (fname, cols) in DATASET_FILES.items():
        path = root / fname
        if not path.exists():
            raise FileNotFoundError(f"missing calibration input: {fname}")
        raw = path.read_bytes()
        sums[fname] = hashlib.sha256(raw).hexdigest()
        text = raw.decode("utf-8")
        version = tables.schema_version_of(text)
        if version != tables.SCHEMA_VERSION:
            raise tables.SchemaError(f"{fname}: schema_version {version} not supported (expected {tables.SCHEMA_VERSION})")
        frames[key] = tables.parse_csv(text, cols, fname, optional=OPTIONAL_CELLS.get(key, ()))
    ds = CalibrationDataset(root, frames, sums)
    _validate(ds)
    return ds


def _validate(ds: CalibrationDataset):
    for key in ("rcp", "tax", "history"):
        fname = DATASET_FILES[key][0]
        for i, row in enumerate(ds.rows(key), start=2):
            if _float(row, "emissions_gtc", fname, i) < 0:
                raise tables.SchemaError(f"{fname}: row {i}, column 'emissions_gtc': negative emissions")
    for key, fname in (("gdp", "gdp.csv"), ("population", "population.csv")):
        by_region = defaultdict(list)
        for i, row in enumerate(ds.rows(key), start=2):
            by_region[row["region"]].append(_year(row, fname, i))
        for region, years in by_region.items():
            if years != list(range(years[0], years[0] + len(years))):
                raise tables.SchemaError(f"{fname}: years for {region} are not a consecutive annual grid")


def _series(rows, key, value_cols, source):
    """Group rows by ``key`` into arrays ordered by year."""
    out = defaultdict(list)
    for i, row in enumerate(rows, start=2):
        out[row[key]].append((_year(row, source, i), *(_float(row, c, source, i) for c in value_cols)))
    return {k: np.array(sorted(v)) for k, v in out.items()}


def rcp_cumulative(ds: CalibrationDataset) -> dict:
    """Per scenario: (years, cumulative emissions, temperature)."""
    out = {}
    for name, arr in _series(ds.rows("rcp"), "scenario", ("emissions_gtc", "temp_c"), "rcp.csv").items():
        out[name] = (arr[:, 0].astype(int), calibration.cumulative(arr[:, 1]), arr[:, 2])
    return out


def fit_dataset_tcre(ds: CalibrationDataset) -> float:
    return calibration.fit_tcre({k: (v[1], v[2]) for k, v in rcp_cumulative(ds).items()})


def model_temperatures(ds: CalibrationDataset, n: int) -> np.ndarray:
    """Temperatures of the reference RCP from the base year on, held at the end."""
    series = rcp_cumulative(ds)
    if TEMPERATURE_SCENARIO not in series:
        raise CalibrationError(f"rcp.csv lacks the {TEMPERATURE_SCENARIO} scenario used for GDP projections")
    years, _, temp = series[TEMPERATURE_SCENARIO]
    return calibration.pad_path(temp[years >= BASE_YEAR], n)


def _region_tax_data(ds: CalibrationDataset, region: str):
    rows = [r for r in ds.rows("tax") if r["region"] == region]
    by_scen = _series(rows, "scenario", ("tax_usd_tc", "emissions_gtc"), "tax_scenarios.csv")
    zero = [k for k, v in by_scen.items() if np.all(v[:, 1] == 0.0)]
    if len(zero) != 1:
        raise CalibrationError(f"tax_scenarios.csv: need exactly one zero-tax scenario for {region}")
    base = by_scen.pop(zero[0])
    years = base[:, 0]
    scen = []
    for name in sorted(by_scen):
        arr = by_scen[name]
        if not np.array_equal(arr[:, 0], years):
            raise CalibrationError(f"tax_scenarios.csv: scenario {name} for {region} is not on the zero-tax grid")
        scen.append((arr[:, 1], arr[:, 2]))
    return years.astype(int), base[:, 2], scen


def cap_pathways(ds: CalibrationDataset, end_year: int = CAP_END_YEAR) -> dict:
    """Regional cap pathways aggregated from the country pledges."""
    hist = defaultdict(dict)
    region_of = {}
    for i, row in enumerate(ds.rows("history"), start=2):
        hist[row["country"]][_year(row, "history.csv", i)] = _float(row, "emissions_gtc", "history.csv", i)
        region_of[row["country"]] = row["region"]
    nz = {row["country"]: _year(row, "netzero.csv", i, "netzero_year")
          for i, row in enumerate(ds.rows("netzero"), start=2)}
    ndc = {row["country"]: (i, row) for i, row in enumerate(ds.rows("ndc"), start=2)}

    def pledge(country, seen=()):
        if country not in ndc:
            raise CalibrationError(f"ndc.csv: no pledge for {country}")
        i, row = ndc[country]
        if row["kind"] == "inherit":
            parent = row["inherit_from"]
            if not parent or parent in seen:
                raise CalibrationError(f"ndc.csv: row {i}: broken inheritance for {country}")
            return pledge(parent, seen + (country,))
        return (row["kind"], _float(row, "reduction", "ndc.csv", i),
                _float(row, "gdp_ratio", "ndc.csv", i) if row["gdp_ratio"] else 1.0,
                _year(row, "ndc.csv", i, "reference_year"), _year(row, "ndc.csv", i, "target_year"))

    per_region = defaultdict(list)
    for country in sorted(hist):
        if country not in nz:
            raise CalibrationError(f"netzero.csv: no net-zero year for {country}")
        years = sorted(hist[country])
        kind, red, gdp_ratio, ref_year, target_year = pledge(country)
        if ref_year not in hist[country]:
            raise CalibrationError(f"history.csv: {country} lacks reference year {ref_year}")
        target = calibration.ndc_target(kind, red, hist[country][ref_year], gdp_ratio)
        path = calibration.build_cap_pathway([hist[country][y] for y in years], target, nz[country],
                                             target_year=target_year, hist_years=years, end_year=end_year)
        per_region[region_of[country]].append(path)
    return {r: calibration.aggregate(p) for r, p in per_region.items()}


def calibrate_dataset(ds: CalibrationDataset, gp: GlobalParams | None = None, horizon: int = 300) -> dict:
    """Run every fit on a dataset.

    Returns ``{"global": {...}, "regions": {name: {...}}, "caps": {name: array},
    "cap_start_year": int, "flags": {name: [...]}}``. Regions are those present
    in ``gdp.csv``, in canonical order.
    """
    gp = gp or GlobalParams()
    n = horizon + 1
    zeta = fit_dataset_tcre(ds)
    T = model_temperatures(ds, n)
    gdp = _series(ds.rows("gdp"), "region", ("gdppc_nocc", "gdppc_cc"), "gdp.csv")
    pop = _series(ds.rows("population"), "region", ("pop_bn",), "population.csv")
    init = {row["region"]: (_float(row, "gdppc_2020", "initial.csv", i), _float(row, "capital_2020_tusd", "initial.csv", i))
            for i, row in enumerate(ds.rows("initial"), start=2)}
    kahn = _series(ds.rows("kahn"), "region", ("loss_rcp26", "loss_rcp85", "temp_rcp26", "temp_rcp85"), "kahn.csv")
    caps = cap_pathways(ds)
    names = [r for r in tables.REGIONS if r in gdp] + sorted(set(gdp) - set(tables.REGIONS))
    regions, flags = {}, {}
    for name in names:
        for what, table in (("population.csv", pop), ("initial.csv", init), ("kahn.csv", kahn), ("caps", caps)):
            if name not in table:
                raise CalibrationError(f"{what}: region {name} missing")
        y0, K0 = init[name]
        g = gdp[name]
        tfp = calibration.fit_tfp_damage(g[:, 1], g[:, 2], T, y0, K0, pop[name][:, 1], gp, horizon=horizon)
        years, E0, scen = _region_tax_data(ds, name)
        abat = calibration.fit_abatement(scen, E0, years - BASE_YEAR)
        k = kahn[name]
        kfit = calibration.fit_damage_kahn(k[:, 1], k[:, 2], k[:, 3], k[:, 4])
        # intensity of zero-tax emissions per unit of damage-free GDP
        Q = np.interp(years, g[:, 0], g[:, 1] * np.interp(g[:, 0], pop[name][:, 0], pop[name][:, 1]))
        sigma = calibration.extract_carbon_intensity(E0, Q)
        slope = np.polyfit(years - BASE_YEAR, np.log(sigma), 1)[0]
        regions[name] = {**abat.params, **tfp.params, "pi1_kahn": kfit.params["pi1"],
                         "pi2_kahn": kfit.params["pi2"], "sigma_2020": float(sigma[0]),
                         "sigma_growth": float(-slope)}
        flags[name] = abat.flags + caps[name].flags
    cap_start = min(caps[r].start_year for r in names)
    return {
        "global": {"zeta": zeta},
        "regions": regions,
        "caps": {r: caps[r].values(BASE_YEAR, CAP_END_YEAR - BASE_YEAR + 1) for r in names},
        "cap_start_year": cap_start,
        "flags": flags,
    }


def _fmt(v: float) -> str:
    return repr(float(v))


def params_to_text(result: dict, provenance: dict) -> str:
    """Deterministic INI rendering of a calibration result."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    cp["meta"] = {"schema_version": str(tables.SCHEMA_VERSION), "kind": "fitted_params",
                  "cap_first_year": str(BASE_YEAR)}
    cp["provenance"] = {k: provenance[k] for k in sorted(provenance)}
    cp["global"] = {k: _fmt(v) for k, v in sorted(result["global"].items())}
    for name, pars in result["regions"].items():
        sec = {k: _fmt(pars[k]) for k in REGION_KEYS}
        sec["caps"] = ",".join(_fmt(v) for v in result["caps"][name])
        sec["flags"] = ",".join(result["flags"].get(name, []))
        cp[f"region:{name}"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


@dataclass
class FittedParams:
    global_params: dict
    regions: dict
    caps: dict
    cap_first_year: int
    provenance: dict

    def region_overrides(self) -> dict:
        keys = ("b1", "b2", "b3", "b4", "pi1", "pi2", "g0", "d")
        return {r: {k: v[k] for k in keys} for r, v in self.regions.items()}


def parse_params(text: str, source: str = "params") -> FittedParams:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise tables.SchemaError(f"{source}: {exc}") from None
    if not cp.has_section("meta") or cp["meta"].get("kind") != "fitted_params":
        raise tables.SchemaError(f"{source}: not a fitted params file")
    version = cp["meta"].getint("schema_version")
    if version != tables.SCHEMA_VERSION:
        raise tables.SchemaError(f"{source}: schema_version {version} not supported")
    regions, caps = {}, {}
    for sec in cp.sections():
        if not sec.startswith("region:"):
            continue
        name = sec[len("region:"):]
        s = cp[sec]
        try:
            regions[name] = {k: float(s[k]) for k in REGION_KEYS}
            caps[name] = np.array([float(v) for v in s["caps"].split(",")])
        except (KeyError, ValueError) as exc:
            raise tables.SchemaError(f"{source}: section [{sec}]: bad or missing value ({exc})") from None
    return FittedParams({k: float(v) for k, v in cp["global"].items()}, regions, caps,
                        cp["meta"].getint("cap_first_year"), dict(cp["provenance"]))


def read_params(path) -> FittedParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"params file not found: {path}")
    return parse_params(path.read_text(), str(path))


def calibrate_to_file(dataset_dir, out_file, horizon: int = 300) -> Path:
    """Calibrate from ``dataset_dir`` and write the params file.

    The file is only written once every fit has succeeded.
    """
    ds = load_dataset(dataset_dir)
    result = calibrate_dataset(ds, horizon=horizon)
    provenance = {f"sha256.{k}": v for k, v in ds.checksums.items()}
    provenance["code_version"] = __version__
    provenance["fit_horizon"] = str(horizon)
    text = params_to_text(result, provenance)
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    return out
