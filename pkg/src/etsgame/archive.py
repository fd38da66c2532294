"""Solution archives: a directory of CSV files plus a JSON manifest.

Files written by :func:`save_solution`:

``config.ini``         the scenario config, with referenced files copied alongside
``trajectories.csv``   per region and year: decisions, states and multipliers
``market.csv``         per year: price (only with trading), imbalance, temperature
``regions.csv``        per region: welfare, KKT residual, convergence flag
``convergence.csv``    per iteration: max_dprice, max_demission, max_imbalance
``manifest.json``      config hash, code version, timestamps, summary, checksums

Floats are written with ``repr`` so they read back bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, tables
from .config import ScenarioConfig, read_config
from .nash import EquilibriumSolution, convergence_report
from .region import RegionSolution, Trajectory

FLOW_FIELDS = ("mu", "permit_purchase", "investment", "consumption", "emissions", "abatement_cost")
STOCK_FIELDS = ("capital", "gross_output", "net_output", "cum_emissions", "temperature", "population")
MULTIPLIER_FIELDS = ("capital", "cum_emissions", "marginal_utility", "cap", "dual_price")
MANIFEST = "manifest.json"


class ArchiveError(ValueError):
    pass


def _fmt(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _csv_text(columns, rows) -> str:
    out = io.StringIO()
    out.write(f"# schema_version={tables.SCHEMA_VERSION}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return out.getvalue()


def _timestamp():
    """Build time from SOURCE_DATE_EPOCH, else none, so archives stay reproducible."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def trajectories_csv(eq: EquilibriumSolution) -> str:
    H = eq.horizon
    mult_cols = [f"mult_{k}" for k in MULTIPLIER_FIELDS]
    cols = ("region", "year") + FLOW_FIELDS + STOCK_FIELDS + tuple(mult_cols)
    rows = []
    for name in eq.scenario.region_names:
        tr = eq.trajectories[name]
        mult = eq.region_solutions[name].multipliers
        for t in range(H + 1):
            row = [name, int(eq.years[0]) + t]
            row += [_fmt(getattr(tr, f)[t]) if t < H else "" for f in FLOW_FIELDS]
            row += [_fmt(getattr(tr, f)[t]) for f in STOCK_FIELDS]
            for k in MULTIPLIER_FIELDS:
                v = mult.get(k)
                row.append(_fmt(v[t]) if v is not None and t < len(v) else "")
            rows.append(row)
    return _csv_text(cols, rows)


def market_csv(eq: EquilibriumSolution) -> str:
    """Per-year market rows; the terminal year carries only the stocks."""
    H = eq.horizon
    cols = ["year"]
    if eq.ets_enabled:
        cols += ["price_usd_tc", "price", "raw_price"]
    cols += ["imbalance_gtc", "cum_emissions_gtc", "temperature_c"]
    rows = []
    for t in range(H + 1):
        row = [int(eq.years[0]) + t]
        if eq.ets_enabled:
            row += [_fmt(1000.0 * eq.price_path[t]), _fmt(eq.price_path[t]), _fmt(eq.raw_price_path[t])] if t < H else ["", "", ""]
        row += [_fmt(eq.imbalance[t]) if t < H else "", _fmt(eq.cum_emissions[t]), _fmt(eq.temperature[t])]
        rows.append(row)
    return _csv_text(cols, rows)


def regions_csv(eq: EquilibriumSolution) -> str:
    rows = []
    for name in eq.scenario.region_names:
        s = eq.region_solutions[name]
        rows.append([name, _fmt(eq.welfare[name]), _fmt(s.kkt_residual), int(bool(s.converged)), int(s.iterations)])
    return _csv_text(("region", "welfare", "kkt_residual", "converged", "iterations"), rows)


def _portable_config(config: ScenarioConfig, out: Path) -> ScenarioConfig:
    """Copy referenced files into the archive and point the config at them."""
    updates = {}
    for what, target in (("params_file", "params.ini"), ("caps_file", "caps.csv")):
        src = config.resolve(getattr(config, what))
        if src is not None:
            shutil.copyfile(src, out / target)
            updates[what] = target
    return replace(config, base_dir=str(out), **updates) if updates else replace(config, base_dir=str(out))


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, config_hash: str, summary: dict) -> dict:
    out = Path(out)
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != MANIFEST)
    manifest = {
        "schema_version": tables.SCHEMA_VERSION,
        "code_version": __version__,
        "config_hash": config_hash,
        "created": _timestamp(),
        "summary": summary,
        "files": {name: file_sha256(out / name) for name in files},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def save_solution(eq: EquilibriumSolution, config: ScenarioConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    portable = _portable_config(config, out)
    (out / "config.ini").write_text(portable.to_text())
    (out / "trajectories.csv").write_text(trajectories_csv(eq))
    (out / "market.csv").write_text(market_csv(eq))
    (out / "regions.csv").write_text(regions_csv(eq))
    (out / "convergence.csv").write_text(convergence_report(eq.history))
    last = eq.history[-1]
    summary = {
        "scenario": eq.scenario.name,
        "converged": bool(eq.converged),
        "iterations": int(eq.iterations),
        "ets_enabled": bool(eq.ets_enabled),
        "horizon": int(eq.horizon),
        "regions": list(eq.scenario.region_names),
        "final": {k: float(last[k]) for k in ("max_dprice", "max_demission", "max_imbalance")},
    }
    write_manifest(out, config.digest(), summary)
    return out


def verify_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.exists():
        raise ArchiveError(f"{path}: no {MANIFEST}")
    manifest = json.loads(mpath.read_text())
    for name, digest in manifest["files"].items():
        f = path / name
        if not f.exists():
            raise ArchiveError(f"{path}: listed file {name} is missing")
        if file_sha256(f) != digest:
            raise ArchiveError(f"{path}: checksum mismatch for {name}")
    return manifest


def _read(path: Path, name: str) -> list:
    return tables.read_csv(path / name)


def _col(rows, col) -> np.ndarray:
    return np.array([float(r[col]) if r[col] != "" else np.nan for r in rows])


def load_solution(path) -> tuple:
    """Rebuild ``(EquilibriumSolution, ScenarioConfig)`` from an archive."""
    path = Path(path)
    manifest = verify_manifest(path)
    config = read_config(path / "config.ini")
    scenario = config.build()
    H = scenario.global_params.horizon
    traj_rows = _read(path, "trajectories.csv")
    reg_rows = {r["region"]: r for r in _read(path, "regions.csv")}
    market = _read(path, "market.csv")
    trajectories, sols, welfare = {}, {}, {}
    for name in scenario.region_names:
        rows = [r for r in traj_rows if r["region"] == name]
        if len(rows) != H + 1:
            raise ArchiveError(f"{path}: trajectories for {name} do not span the horizon")
        data = {f: _col(rows, f)[:H] for f in FLOW_FIELDS}
        data.update({f: _col(rows, f) for f in STOCK_FIELDS})
        trajectories[name] = Trajectory(**data)
        mult = {}
        for k in MULTIPLIER_FIELDS:
            v = _col(rows, f"mult_{k}")
            n = int(np.sum(~np.isnan(v)))
            if n:
                mult[k] = v[:n]
        info = reg_rows[name]
        sols[name] = RegionSolution(
            trajectory=trajectories[name], welfare=float(info["welfare"]),
            kkt_residual=float(info["kkt_residual"]), multipliers=mult,
            converged=bool(int(info["converged"])), iterations=int(info["iterations"]),
            effective_price=_col(market, "raw_price")[:H] if scenario.ets_enabled else np.zeros(H),
        )
        welfare[name] = float(info["welfare"])
    conv = _read(path, "convergence.csv")
    history = [dict(iteration=int(r["iteration"]), **{k: float(r[k]) for k in ("max_dprice", "max_demission", "max_imbalance")})
               for r in conv]
    if len(market) != H + 1:
        raise ArchiveError(f"{path}: market.csv does not span the horizon")
    eq = EquilibriumSolution(
        scenario=scenario, trajectories=trajectories, region_solutions=sols,
        price_path=_col(market, "price")[:H] if scenario.ets_enabled else np.zeros(H),
        raw_price_path=_col(market, "raw_price")[:H] if scenario.ets_enabled else np.zeros(H),
        cum_emissions=_col(market, "cum_emissions_gtc"), temperature=_col(market, "temperature_c"),
        imbalance=_col(market, "imbalance_gtc")[:H],
        iterations=manifest["summary"]["iterations"], converged=manifest["summary"]["converged"],
        history=history, welfare=welfare,
    )
    return eq, config
