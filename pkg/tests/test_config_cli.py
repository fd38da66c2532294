import json
import shutil

import numpy as np
import pytest

from etsgame import archive, tables
from etsgame.cli import EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from etsgame.config import ConfigError, ScenarioConfig, parse_config, read_caps_file, read_config

TOY_INI = """\
[scenario]
name = toy
cap_scenario = baseline
ets_enabled = true
horizon = 20
regions = US,China

[solver]
omega = 0.1
"""


@pytest.fixture
def toy_ini(tmp_path):
    path = tmp_path / "toy.ini"
    path.write_text(TOY_INI)
    return path


def run(*argv):
    return main([str(a) for a in argv])


# --- config files -------------------------------------------------------------------

def test_config_round_trip(toy_ini):
    cfg = read_config(toy_ini)
    assert cfg.regions == ("US", "China") and cfg.horizon == 20 and cfg.solver == {"omega": 0.1}
    again = parse_config(cfg.to_text(), base_dir=toy_ini.parent)
    assert again == cfg
    assert again.digest() == cfg.digest()
    sc = cfg.build()
    assert sc.region_names == ["US", "China"] and sc.global_params.horizon == 20


def test_config_defaults_describe_full_baseline():
    cfg = ScenarioConfig()
    assert cfg.regions == tables.REGIONS and cfg.horizon == 300 and cfg.ets_enabled
    assert parse_config("") == cfg


@pytest.mark.parametrize("text", [
    "[scenario]\ncap_scenario = netzero2040\n",
    "[scenario]\ncap_scenario = custom\n",
    "[scenario]\nhorizon = 1\n",
    "[scenario]\nhorizon = many\n",
    "[scenario]\nregions = US,Mars\n",
    "[scenario]\nregions = US,US\n",
    "[scenario]\nets_enabled = maybe\n",
    "[scenario]\ncolour = blue\n",
    "[global]\nrho = 0.1\n",
    "[solver]\nomega = 2.0\n",
    "[solver]\nstep = 1\n",
    "[region:Mars]\npi1 = 0\n",
    "[region:US]\nfoo = 0\n",
    "[extras]\n",
    "[meta]\nschema_version = 2\n",
    "[scenario]\nparams_file = missing.ini\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_custom_caps_file(tmp_path):
    caps = tmp_path / "caps.csv"
    caps.write_text("region,2020,2030,2040\nUS,1.5,0.5,0.0\nChina,2.9,1.0,0.0\n")
    table, years = read_caps_file(caps)
    assert list(years) == [2020, 2030, 2040]
    cfg = parse_config(TOY_INI.replace("cap_scenario = baseline", "cap_scenario = custom\ncaps_file = caps.csv"),
                       base_dir=tmp_path)
    us = cfg.build().region("US").cap_path
    assert us[0] == 1.5 and us[5] == pytest.approx(1.0) and us[10] == pytest.approx(0.5) and us[20] == 0.0
    caps.write_text("region,2020,2010\nUS,1,1\n")
    with pytest.raises(ConfigError):
        read_caps_file(caps)
    caps.write_text("region,2020\nUS,-1\n")
    with pytest.raises(ConfigError):
        read_caps_file(caps)


def test_overrides_reach_the_scenario(tmp_path):
    text = TOY_INI + "[global]\nbeta = 0.99\n\n[region:US]\npi1 = 0.0\npi2 = 0.0\n"
    sc = parse_config(text, base_dir=tmp_path).build()
    assert sc.global_params.beta == 0.99
    assert sc.region("US").pi1 == 0.0 and sc.region("China").pi1 != 0.0


# --- command line ---------------------------------------------------------------------

def test_solve_then_load(toy_ini, tmp_path, toy_eq):
    out = tmp_path / "arch"
    assert run("solve", "--config", toy_ini, "--out", out) == EXIT_OK
    eq, cfg = archive.load_solution(out)
    assert cfg.regions == ("US", "China") and cfg.horizon == 20
    assert eq.converged and eq.iterations == toy_eq.iterations
    assert np.array_equal(eq.price_path, toy_eq.price_path)
    for k in eq.scenario.region_names:
        for f in ("mu", "capital", "consumption", "emissions"):
            assert np.array_equal(getattr(eq.trajectories[k], f), getattr(toy_eq.trajectories[k], f))
        assert np.array_equal(eq.region_solutions[k].multipliers["cum_emissions"],
                              toy_eq.region_solutions[k].multipliers["cum_emissions"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["summary"]["converged"] and manifest["config_hash"] == read_config(toy_ini).digest()


def test_tampered_archive_rejected(toy_ini, tmp_path):
    out = tmp_path / "arch"
    assert run("solve", "--config", toy_ini, "--out", out) == EXIT_OK
    path = out / "market.csv"
    path.write_text(path.read_text() + "\n")
    with pytest.raises(archive.ArchiveError, match="checksum"):
        archive.load_solution(out)
    assert run("diagnose", out, "--out", tmp_path / "d") == EXIT_INVALID


def test_archives_do_not_depend_on_thread_count(toy_ini, tmp_path, monkeypatch):
    digests = []
    for threads in ("1", "4"):
        monkeypatch.setenv("ETS_NASH_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert run("solve", "--config", toy_ini, "--out", out) == EXIT_OK
        digests.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert digests[0] == digests[1]


def test_diagnose_pair_and_compare(toy_ini, tmp_path):
    ets, no_ets = tmp_path / "ets", tmp_path / "noets"
    assert run("solve", "--config", toy_ini, "--out", ets) == EXIT_OK
    assert run("solve", "--config", toy_ini, "--no-ets", "--out", no_ets) == EXIT_OK
    out = tmp_path / "diag"
    assert run("diagnose", ets, no_ets, "--out", out) == EXIT_OK
    welfare = tables.read_csv(out / "welfare.csv")
    assert [r["region"] for r in welfare] == ["US", "China"]
    assert all(float(r["cv_usd_per_capita"]) > 0 for r in welfare)
    report = tables.read_csv(out / "report.csv")
    assert {r["variable"] for r in report} >= {"mac", "scc", "optimal_tax"}
    assert run("diagnose", no_ets, ets, "--out", out) == EXIT_INVALID
    assert run("diagnose", ets, ets, no_ets) == EXIT_INVALID

    cmp_out = tmp_path / "cmp"
    assert run("compare", ets, no_ets, "--out", cmp_out) == EXIT_OK
    glob = tables.read_csv(cmp_out / "compare_global.csv")
    assert set(glob[0]) == {"variable", "year", "ets", "noets"}
    assert run("compare", ets) == EXIT_INVALID


def test_not_converged_exit_code_writes_last_iterate(toy_ini, tmp_path):
    toy_ini.write_text(TOY_INI + "max_iterations = 2\n")
    out = tmp_path / "arch"
    assert run("solve", "--config", toy_ini, "--out", out) == EXIT_NOT_CONVERGED
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["summary"]["converged"] is False and manifest["summary"]["iterations"] == 2


def test_invalid_input_exit_codes(tmp_path, toy_ini):
    assert run("solve", "--config", tmp_path / "missing.ini") == EXIT_INVALID
    assert run("solve", "--config", toy_ini, "--omega", "0") == EXIT_INVALID
    assert run("solve", "--cap-scenario", "nonsense") == EXIT_INVALID
    assert run("frobnicate") == EXIT_INVALID
    assert run("calibrate") == EXIT_INVALID
    assert run("diagnose", tmp_path / "nothing") == EXIT_INVALID


def test_calibrate_missing_file(tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(tables.data_path("synthetic"), data)
    (data / "rcp.csv").unlink()
    assert run("calibrate", "--data-dir", data, "--out", tmp_path / "p.ini") == EXIT_INVALID
    assert "rcp.csv" in capsys.readouterr().err
    assert not (tmp_path / "p.ini").exists()


def test_calibrated_params_drive_a_solve(calibrated, tmp_path):
    ini = tmp_path / "fit.ini"
    ini.write_text(TOY_INI.replace("regions = US,China", f"regions = US,China\nparams_file = {calibrated}"))
    cfg = read_config(ini)
    sc = cfg.build()
    assert sc.global_params.zeta == pytest.approx(0.0021, abs=2e-4)
    out = tmp_path / "arch"
    assert run("solve", "--config", ini, "--out", out) == EXIT_OK
    assert (out / "params.ini").read_bytes() == calibrated.read_bytes()
    eq, cfg2 = archive.load_solution(out)
    assert eq.converged and cfg2.params_file == "params.ini"
