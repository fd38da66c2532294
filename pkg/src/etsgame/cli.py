"""Command-line entry point: ``etsgame {calibrate,solve,diagnose,compare}``.

Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 infeasible problem.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, archive, calibration, diagnostics, tables
from .config import ConfigError, ScenarioConfig, read_config
from .dataset import CalibrationError, calibrate_to_file
from .nash import NotConverged, RegionalInfeasibility, solve_nash
from .region import Infeasible
from .scenario import CAP_SCENARIOS

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4

log = logging.getLogger("etsgame")


def _fail(code: int, message: str) -> int:
    print(f"etsgame: error: {message}", file=sys.stderr)
    return code


def _load_config(args) -> ScenarioConfig:
    config = read_config(args.config) if args.config else ScenarioConfig()
    updates = {}
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if args.no_ets:
        updates["ets_enabled"] = False
    if args.cap_scenario is not None:
        updates["cap_scenario"] = args.cap_scenario
    solver = dict(config.solver)
    if args.omega is not None:
        solver["omega"] = args.omega
    if args.tol is not None:
        for k in ("price_tol", "emission_tol", "clearing_tol"):
            solver[k] = args.tol
    updates["solver"] = solver
    return replace(config, **updates)


def cmd_calibrate(args) -> int:
    if not args.data_dir:
        return _fail(EXIT_INVALID, "calibrate needs --data-dir")
    out = Path(args.out) if args.out else Path("params.ini")
    horizon = args.horizon if args.horizon is not None else 300
    try:
        path = calibrate_to_file(args.data_dir, out, horizon=horizon)
    except (FileNotFoundError, tables.SchemaError, CalibrationError, calibration.DegenerateData,
            calibration.NoInteriorPoints, calibration.ZeroGDP, calibration.OutOfBounds) as exc:
        return _fail(EXIT_INVALID, str(exc))
    except calibration.NonConvergence as exc:
        return _fail(EXIT_NOT_CONVERGED, str(exc))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        config = _load_config(args)
        scenario = config.build()
        nash_config = config.nash_config()
    except (ConfigError, FileNotFoundError, tables.SchemaError, ValueError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    out = Path(args.out or config.resolve(config.output_dir) or Path("out") / config.name)
    code = EXIT_OK
    try:
        eq = solve_nash(scenario, nash_config)
    except NotConverged as exc:
        eq = exc.solution
        code = _fail(EXIT_NOT_CONVERGED, f"{exc}; last iterate written to {out}")
    except (RegionalInfeasibility, Infeasible) as exc:
        return _fail(EXIT_INFEASIBLE, str(exc))
    archive.save_solution(eq, config, out)
    if code == EXIT_OK:
        print(f"converged after {eq.iterations} iterations; archive in {out}")
    return code


def cmd_diagnose(args) -> int:
    if not args.archives or len(args.archives) > 2:
        return _fail(EXIT_INVALID, "diagnose takes one archive, or an ETS archive and a no-ETS archive")
    try:
        loaded = [archive.load_solution(a) for a in args.archives]
    except (archive.ArchiveError, ConfigError, FileNotFoundError, tables.SchemaError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    out = Path(args.out or "diagnostics")
    out.mkdir(parents=True, exist_ok=True)
    eq, config = loaded[0]
    (out / "report.csv").write_text(diagnostics.report_csv(eq))
    if len(loaded) == 2:
        eq0, config0 = loaded[1]
        if not eq.ets_enabled or eq0.ets_enabled:
            return _fail(EXIT_INVALID, "the pair must be an ETS archive followed by a no-ETS archive")
        same = replace(config, ets_enabled=False, name="", output_dir="")
        other = replace(config0, ets_enabled=False, name="", output_dir="")
        if same.digest() != other.digest():
            return _fail(EXIT_INVALID, "archives were solved from different configurations")
        try:
            wc = diagnostics.welfare_workflow(eq.scenario, config.nash_config(), eq_no_ets=eq0)
        except NotConverged as exc:
            return _fail(EXIT_NOT_CONVERGED, str(exc))
        except (RegionalInfeasibility, Infeasible) as exc:
            return _fail(EXIT_INFEASIBLE, str(exc))
        (out / "welfare.csv").write_text(wc.to_csv())
    archive.write_manifest(out, config.digest(), {"diagnosed": [str(Path(a).name) for a in args.archives]})
    print(f"reports in {out}")
    return EXIT_OK


def _labels(loaded, paths):
    names = [eq.scenario.name for eq, _ in loaded]
    if len(set(names)) == len(names):
        return names
    return [Path(p).name for p in paths]


def cmd_compare(args) -> int:
    if len(args.archives) < 2:
        return _fail(EXIT_INVALID, "compare needs at least two archives")
    try:
        loaded = [archive.load_solution(a) for a in args.archives]
    except (archive.ArchiveError, ConfigError, FileNotFoundError, tables.SchemaError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    labels = _labels(loaded, args.archives)
    if len(set(labels)) != len(labels):
        return _fail(EXIT_INVALID, "archives need distinct scenario names or directory names")
    try:
        tabs = diagnostics.scenario_compare({lab: eq for lab, (eq, _) in zip(labels, loaded)})
    except diagnostics.GridMismatch as exc:
        return _fail(EXIT_INVALID, str(exc))
    out = Path(args.out or "comparison")
    out.mkdir(parents=True, exist_ok=True)
    glob_rows, reg_rows = [], []
    cols = None
    for key in sorted(tabs):
        cols, rows = tabs[key]
        var, _, region = key.partition("_") if key.startswith(("mac_", "scc_")) else (key, "", "")
        for prefix in ("emissions_", "permit_purchase_"):
            if key.startswith(prefix):
                var, region = prefix[:-1], key[len(prefix):]
        for row in rows:
            if region:
                reg_rows.append((var, region) + row)
            else:
                glob_rows.append((var,) + row)
    labels_sorted = cols[1:]
    (out / "compare_global.csv").write_text(diagnostics.rows_to_csv(("variable", "year") + labels_sorted, glob_rows))
    (out / "compare_regional.csv").write_text(
        diagnostics.rows_to_csv(("variable", "region", "year") + labels_sorted, reg_rows))
    archive.write_manifest(out, "", {"compared": sorted(labels)})
    print(f"comparison tables in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etsgame", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit parameters from a calibration dataset")
    p.add_argument("--data-dir", required=False, help="directory with the dataset CSV files")
    p.add_argument("--out", help="params file to write (default params.ini)")
    p.add_argument("--horizon", type=int, help="growth-model horizon of the TFP fit (default 300)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", help="solve the Nash equilibrium of a scenario")
    p.add_argument("--config", help="scenario config file (INI)")
    p.add_argument("--out", help="archive directory")
    p.add_argument("--horizon", type=int)
    p.add_argument("--tol", type=float, help="price, emission and clearing tolerance")
    p.add_argument("--omega", type=float, help="damping weight")
    p.add_argument("--no-ets", action="store_true", help="disable permit trading")
    p.add_argument("--cap-scenario", choices=CAP_SCENARIOS)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("diagnose", help="MAC/SCC/tax report; CV table for an ETS/no-ETS pair")
    p.add_argument("archives", nargs="+")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="align several solutions year by year")
    p.add_argument("archives", nargs="+")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
