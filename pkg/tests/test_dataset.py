import shutil

import numpy as np
import pytest

from etsgame import dataset, fixtures, tables
from etsgame.dataset import CalibrationError, calibrate_to_file, load_dataset, parse_params, read_params

SYNTH = tables.data_path("synthetic")
BUNDLED = ("abatement_params.csv", "caps_baseline.csv", "damage_params.csv", "key_params.csv",
           "region_initial.csv", "tfp_params.csv")


@pytest.fixture
def synth_copy(tmp_path):
    dst = tmp_path / "data"
    shutil.copytree(SYNTH, dst)
    return dst


# --- bundled tables -----------------------------------------------------------------

@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_tables_reemit_exactly(name):
    assert tables.emit_table(name) == tables.read_text(name)


def test_bundled_tables_cover_all_regions():
    for table in (tables.abatement_params(), tables.damage_params(), tables.tfp_params(),
                  tables.initial_conditions(), tables.baseline_cap_table()):
        assert tuple(table) == tables.REGIONS
    kp = tables.key_params()
    assert kp["beta"] == 0.985 and kp["gamma"] == 1.45 and kp["zeta"] == 0.0021


def test_parse_csv_reports_row_and_column():
    with pytest.raises(tables.SchemaError, match="missing column"):
        tables.parse_csv("a,b\n1,2\n", ("a", "c"))
    with pytest.raises(tables.SchemaError, match="row 3, column 'b'"):
        tables.parse_csv("a,b\n1,2\n3,\n", ("a", "b"))
    assert tables.parse_csv("a,b\n1,\n", ("a", "b"), optional=("b",)) == [{"a": "1", "b": ""}]


# --- synthetic dataset ----------------------------------------------------------------

def test_generator_reproduces_bundled_dataset(tmp_path):
    fixtures.make_synthetic_dataset(tmp_path)
    for fname, _ in dataset.DATASET_FILES.values():
        assert (tmp_path / fname).read_bytes() == (SYNTH / fname).read_bytes(), fname


def test_missing_input_is_named(synth_copy):
    (synth_copy / "rcp.csv").unlink()
    with pytest.raises(FileNotFoundError, match="rcp.csv"):
        load_dataset(synth_copy)


def test_schema_version_checked(synth_copy):
    path = synth_copy / "gdp.csv"
    path.write_text(path.read_text().replace("schema_version=1", "schema_version=9", 1))
    with pytest.raises(tables.SchemaError, match="gdp.csv"):
        load_dataset(synth_copy)


def test_bad_cell_reported_with_row_and_column(synth_copy):
    path = synth_copy / "rcp.csv"
    lines = path.read_text().splitlines()
    cells = lines[3].split(",")
    cells[2] = "-1.0"
    lines[3] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(tables.SchemaError, match="row 3, column 'emissions_gtc'"):
        load_dataset(synth_copy)


def test_gap_in_annual_grid_rejected(synth_copy):
    path = synth_copy / "population.csv"
    lines = path.read_text().splitlines()
    del lines[10]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(tables.SchemaError, match="consecutive"):
        load_dataset(synth_copy)


def test_tcre_on_bundled_rcp():
    ds = load_dataset(SYNTH)
    assert dataset.fit_dataset_tcre(ds) == pytest.approx(0.0021, abs=2e-4)


def test_cap_pathways_follow_pledges():
    caps = dataset.cap_pathways(load_dataset(SYNTH))
    table = tables.baseline_cap_table()
    for r in tables.REGIONS:
        v = caps[r].values(2020, 101)
        assert v[10] == pytest.approx(table[r][2], rel=2e-3)
        if np.any(table[r] == 0.0):
            nz = 5 * int(np.argmax(table[r] == 0.0))
            assert np.all(v[nz:] == 0.0) and v[nz - 1] > 0
        else:
            assert np.all(v[50:] == 0.0) and v[49] > 0


def test_partial_fits_are_refused(synth_copy, tmp_path):
    path = synth_copy / "tax_scenarios.csv"
    kept = [ln for ln in path.read_text().splitlines() if not ln.startswith("zero,")]
    path.write_text("\n".join(kept) + "\n")
    out = tmp_path / "params.ini"
    with pytest.raises(CalibrationError, match="zero-tax"):
        calibrate_to_file(synth_copy, out, horizon=300)
    assert not out.exists()


# --- calibration round trip ------------------------------------------------------------

def test_calibration_recovers_generator(calibrated):
    fitted = read_params(calibrated)
    assert fitted.global_params["zeta"] == pytest.approx(0.0021, abs=2e-4)
    abat, tfp, dmg = tables.abatement_params(), tables.tfp_params(), tables.damage_params()
    for r in tables.REGIONS:
        got = fitted.regions[r]
        for k in ("b1", "b2", "b3", "b4"):
            assert got[k] == pytest.approx(abat[r][k], rel=1e-2), (r, k)
        for k in ("g0", "d"):
            assert got[k] == pytest.approx(tfp[r][k], rel=1e-3), (r, k)
        for k in ("pi1", "pi2"):
            assert got[k] == pytest.approx(dmg[r][k], rel=1e-3), (r, k)
        p1, p2 = fixtures.kahn_pi(r)
        assert got["pi1_kahn"] == pytest.approx(p1, abs=1e-6)
        assert got["pi2_kahn"] == pytest.approx(p2, abs=1e-6)
        assert got["sigma_growth"] == pytest.approx(fixtures.GENERATOR["sigma_growth"], rel=1e-9)


def test_params_file_round_trip(calibrated):
    text = calibrated.read_text()
    fitted = parse_params(text)
    assert fitted.cap_first_year == 2020
    assert set(fitted.regions) == set(tables.REGIONS)
    assert fitted.provenance["code_version"]
    assert all(f"sha256.{f}" in fitted.provenance for f, _ in dataset.DATASET_FILES.values())
    result = {"global": fitted.global_params, "regions": fitted.regions, "caps": fitted.caps,
              "flags": {r: [] for r in fitted.regions}}
    again = parse_params(dataset.params_to_text(result, fitted.provenance))
    for r in fitted.regions:
        assert again.regions[r] == fitted.regions[r]
        assert np.array_equal(again.caps[r], fitted.caps[r])


def test_params_file_checks():
    with pytest.raises(tables.SchemaError):
        parse_params("[meta]\nkind = scenario_config\nschema_version = 1\n")
    with pytest.raises(tables.SchemaError):
        parse_params("[meta]\nkind = fitted_params\nschema_version = 7\n")
    with pytest.raises(FileNotFoundError):
        read_params("/nonexistent/params.ini")
