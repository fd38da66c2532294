"""Scenario configuration files (INI syntax) and their translation to a scenario.

Example::

    [scenario]
    name = baseline
    cap_scenario = baseline
    ets_enabled = true
    horizon = 300
    regions = all
    params_file =
    caps_file =

    [global]
    beta = 0.985

    [solver]
    omega = 0.1
    max_iterations = 3000

    [region:US]
    pi1 = 0.0

    [output]
    directory = out

Relative file paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tables
from .dataset import read_params
from .nash import NashConfig
from .scenario import CAP_SCENARIOS, Scenario, build_scenario

GLOBAL_KEYS = ("beta", "gamma", "alpha", "delta", "zeta")
REGION_OVERRIDE_KEYS = ("b1", "b2", "b3", "b4", "pi1", "pi2", "g0", "d", "K0",
                        "gdp_2020_tusd", "pop_2020_bn", "pop_longrun_bn", "emissions_2020_gtc")
SOLVER_FLOAT_KEYS = ("omega", "price_floor", "price_tol", "emission_tol", "clearing_tol",
                     "region_tol", "emission_scale", "step_growth", "max_step", "max_log_step")
SOLVER_INT_KEYS = ("max_iterations",)
SOLVER_STR_KEYS = ("initial_guess", "step_rule")


class ConfigError(ValueError):
    """Invalid scenario configuration."""


@dataclass
class ScenarioConfig:
    name: str = "baseline"
    cap_scenario: str = "baseline"
    ets_enabled: bool = True
    horizon: int = 300
    regions: tuple = tables.REGIONS
    params_file: str = ""
    caps_file: str = ""
    global_params: dict = field(default_factory=dict)
    region_overrides: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output_dir: str = ""
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.regions = tuple(self.regions)
        self.validate()

    def validate(self):
        if self.cap_scenario not in CAP_SCENARIOS:
            raise ConfigError(f"cap_scenario must be one of {', '.join(CAP_SCENARIOS)}, got {self.cap_scenario!r}")
        if self.cap_scenario == "custom" and not self.caps_file:
            raise ConfigError("cap_scenario = custom needs caps_file")
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise ConfigError(f"horizon must be an integer >= 2, got {self.horizon}")
        unknown = set(self.regions) - set(tables.REGIONS)
        if unknown:
            raise ConfigError(f"unknown region(s): {', '.join(sorted(unknown))}")
        if not self.regions:
            raise ConfigError("no regions selected")
        if len(set(self.regions)) != len(self.regions):
            raise ConfigError("regions listed twice")
        for k in self.global_params:
            if k not in GLOBAL_KEYS:
                raise ConfigError(f"[global]: unknown key {k!r}")
        for r, over in self.region_overrides.items():
            if r not in tables.REGIONS:
                raise ConfigError(f"[region:{r}]: unknown region")
            for k in over:
                if k not in REGION_OVERRIDE_KEYS:
                    raise ConfigError(f"[region:{r}]: unknown key {k!r}")
        allowed = set(SOLVER_FLOAT_KEYS + SOLVER_INT_KEYS + SOLVER_STR_KEYS)
        for k in self.solver:
            if k not in allowed:
                raise ConfigError(f"[solver]: unknown key {k!r}")
        try:
            self.nash_config()
        except ValueError as exc:
            raise ConfigError(f"[solver]: {exc}") from None
        for what in ("params_file", "caps_file"):
            path = self.resolve(getattr(self, what))
            if path is not None and not path.exists():
                raise ConfigError(f"{what} not found: {path}")

    def resolve(self, path: str) -> Path | None:
        if not path:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def nash_config(self) -> NashConfig:
        return NashConfig(**self.solver)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        cp.optionxform = str
        cp["meta"] = {"schema_version": str(tables.SCHEMA_VERSION), "kind": "scenario_config"}
        cp["scenario"] = {
            "name": self.name,
            "cap_scenario": self.cap_scenario,
            "ets_enabled": "true" if self.ets_enabled else "false",
            "horizon": str(int(self.horizon)),
            "regions": "all" if self.regions == tables.REGIONS else ",".join(self.regions),
            "params_file": self.params_file,
            "caps_file": self.caps_file,
        }
        cp["global"] = {k: repr(float(self.global_params[k])) for k in GLOBAL_KEYS if k in self.global_params}
        cp["solver"] = {k: (repr(float(v)) if k in SOLVER_FLOAT_KEYS else str(v))
                        for k, v in sorted(self.solver.items())}
        for r in tables.REGIONS:
            if r in self.region_overrides:
                cp[f"region:{r}"] = {k: repr(float(v)) for k, v in sorted(self.region_overrides[r].items())}
        cp["output"] = {"directory": self.output_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        """SHA-256 of the serialized config plus the referenced files' contents."""
        h = hashlib.sha256(self.to_text().encode())
        for what in ("params_file", "caps_file"):
            path = self.resolve(getattr(self, what))
            if path is not None:
                h.update(path.read_bytes())
        return h.hexdigest()

    def build(self) -> Scenario:
        """Scenario described by this config."""
        overrides = {}
        gp = dict(self.global_params)
        custom_caps = custom_years = None
        cap_scenario = self.cap_scenario
        params_path = self.resolve(self.params_file)
        if params_path is not None:
            fitted = read_params(params_path)
            overrides = fitted.region_overrides()
            gp = {**fitted.global_params, **gp}
            if cap_scenario == "baseline":
                # fitted pathways replace the bundled baseline table
                cap_scenario = "custom"
                custom_caps = fitted.caps
                custom_years = fitted.cap_first_year + np.arange(len(next(iter(fitted.caps.values()))))
        for r, over in self.region_overrides.items():
            overrides[r] = {**overrides.get(r, {}), **over}
        caps_path = self.resolve(self.caps_file)
        if self.cap_scenario == "custom":
            custom_caps, custom_years = read_caps_file(caps_path)
        missing = [r for r in self.regions if custom_caps is not None and r not in custom_caps]
        if missing:
            raise ConfigError(f"cap table lacks region(s): {', '.join(missing)}")
        scenario = build_scenario(
            cap_scenario=cap_scenario, horizon=int(self.horizon), ets_enabled=self.ets_enabled,
            regions=self.regions, name=self.name, custom_caps=custom_caps, custom_years=custom_years,
            region_overrides=overrides, global_overrides=gp,
        )
        scenario.cap_scenario = self.cap_scenario
        return scenario


def read_caps_file(path) -> tuple:
    """Custom cap table: a ``region`` column plus one column per year (GtC)."""
    path = Path(path)
    rows = tables.read_csv(path, ("region",))
    year_cols = [c for c in rows[0] if c != "region"]
    try:
        years = np.array([int(c) for c in year_cols])
    except ValueError:
        raise ConfigError(f"{path.name}: year columns must be integers") from None
    if len(years) == 0 or np.any(np.diff(years) <= 0):
        raise ConfigError(f"{path.name}: year columns must be increasing")
    caps = {}
    for i, row in enumerate(rows, start=2):
        try:
            vals = np.array([float(row[c]) for c in year_cols])
        except (TypeError, ValueError):
            raise ConfigError(f"{path.name}: row {i}: cap values must be numbers") from None
        if np.any(vals < 0):
            raise ConfigError(f"{path.name}: row {i}: caps must be non-negative")
        caps[row["region"]] = vals
    return caps, years


def _bool(value: str, where: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {value!r}")


def _number(value: str, where: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None


def parse_config(text: str, base_dir=".", source: str = "config") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if cp.has_section("meta"):
        version = cp["meta"].get("schema_version")
        if version is not None and _number(version, "[meta] schema_version", int) != tables.SCHEMA_VERSION:
            raise ConfigError(f"{source}: schema_version {version} not supported")
    known = {"meta", "scenario", "global", "solver", "output"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("region:"):
            raise ConfigError(f"{source}: unknown section [{sec}]")
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    allowed = {"name", "cap_scenario", "ets_enabled", "horizon", "regions", "params_file", "caps_file"}
    for k in sc:
        if k not in allowed:
            raise ConfigError(f"[scenario]: unknown key {k!r}")
    regions = sc.get("regions", "all").strip()
    kw = dict(
        name=sc.get("name", "baseline"),
        cap_scenario=sc.get("cap_scenario", "baseline"),
        ets_enabled=_bool(sc.get("ets_enabled", "true"), "[scenario] ets_enabled"),
        horizon=_number(sc.get("horizon", "300"), "[scenario] horizon", int),
        regions=tables.REGIONS if regions in ("", "all") else tuple(r.strip() for r in regions.split(",")),
        params_file=sc.get("params_file", ""),
        caps_file=sc.get("caps_file", ""),
        base_dir=str(base_dir),
    )
    if cp.has_section("global"):
        kw["global_params"] = {k: _number(v, f"[global] {k}") for k, v in cp["global"].items()}
    solver = {}
    if cp.has_section("solver"):
        for k, v in cp["solver"].items():
            if k in SOLVER_INT_KEYS:
                solver[k] = _number(v, f"[solver] {k}", int)
            elif k in SOLVER_FLOAT_KEYS:
                solver[k] = _number(v, f"[solver] {k}")
            else:
                solver[k] = v
    kw["solver"] = solver
    kw["region_overrides"] = {
        sec[len("region:"):]: {k: _number(v, f"[{sec}] {k}") for k, v in cp[sec].items()}
        for sec in cp.sections() if sec.startswith("region:")
    }
    if cp.has_section("output"):
        kw["output_dir"] = cp["output"].get("directory", "")
    return ScenarioConfig(**kw)


def read_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent, source=str(path))


def config_fields() -> tuple:
    return tuple(f.name for f in fields(ScenarioConfig))
