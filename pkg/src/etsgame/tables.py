"""Access to the bundled parameter tables and synthetic fixtures.

CSV files may start with ``#`` comment lines; the one reading
``# schema_version=N`` declares the layout version.
"""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

import numpy as np

REGIONS = (
    "US", "EU", "Japan", "Russia", "Eurasia", "China",
    "India", "MidEast", "Africa", "LatAm", "OHI", "OthAs",
)

CAP_TABLE_YEARS = tuple(range(2020, 2075, 5))

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A CSV file does not match its documented layout."""


def data_path(name: str) -> Path:
    return Path(str(resources.files("etsgame") / "data" / name))


def read_text(name: str) -> str:
    return data_path(name).read_text()


def parse_csv(text: str, required: tuple = (), source: str = "<csv>", optional: tuple = ()) -> list[dict]:
    """Parse CSV text, skipping comment lines, and check required columns.

    Columns named in ``optional`` must be present but may hold empty cells.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise SchemaError(f"{source}: no header row")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        raise SchemaError(f"{source}: missing column(s) {', '.join(missing)}")
    rows = list(reader)
    for i, row in enumerate(rows, start=2):
        for col in required:
            if col not in optional and row.get(col) in (None, ""):
                raise SchemaError(f"{source}: row {i}, column '{col}' is empty")
    return rows


def read_csv(path, required: tuple = ()) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"required input {path.name} not found in {path.parent}")
    return parse_csv(path.read_text(), required, source=path.name)


def schema_version_of(text: str) -> int | None:
    for ln in text.splitlines():
        s = ln.strip()
        if s.startswith("#") and "schema_version=" in s:
            return int(s.split("schema_version=")[1].split()[0])
    return None


def _by_region(name: str, columns: tuple) -> dict:
    rows = parse_csv(read_text(name), ("region",) + columns, source=name)
    return {r["region"]: {c: float(r[c]) for c in columns} for r in rows}


def key_params() -> dict:
    rows = parse_csv(read_text("key_params.csv"), ("parameter", "value"), source="key_params.csv")
    return {r["parameter"]: float(r["value"]) for r in rows}


def abatement_params() -> dict:
    return _by_region("abatement_params.csv", ("b1", "b2", "b3", "b4"))


def damage_params() -> dict:
    return _by_region("damage_params.csv", ("pi1", "pi2"))


def tfp_params() -> dict:
    return _by_region("tfp_params.csv", ("g0", "d"))


def initial_conditions() -> dict:
    return _by_region(
        "region_initial.csv",
        ("gdp_2020_tusd", "pop_2020_bn", "pop_longrun_bn", "capital_output_ratio", "emissions_2020_gtc"),
    )


def baseline_cap_table() -> dict:
    """Five-yearly baseline caps (GtC) for 2020..2070 keyed by region."""
    cols = tuple(str(y) for y in CAP_TABLE_YEARS)
    rows = parse_csv(read_text("caps_baseline.csv"), ("region",) + cols, source="caps_baseline.csv")
    return {r["region"]: np.array([float(r[c]) for c in cols]) for r in rows}


def emit_table(name: str) -> str:
    """Re-emit a bundled table from its parsed values, preserving the source formatting."""
    text = read_text(name)
    rows = parse_csv(text, source=name)
    header = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")][0]
    fields = header.split(",")
    out = io.StringIO()
    for ln in text.splitlines():
        if ln.startswith("#"):
            out.write(ln + "\n")
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()
