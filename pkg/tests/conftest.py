import numpy as np
import pytest

from etsgame import diagnostics
from etsgame.nash import NashConfig, solve_nash
from etsgame.scenario import build_scenario

TOY_REGIONS = ("US", "China")
TOY_HORIZON = 20


def toy_scenario(**kw):
    kw.setdefault("regions", TOY_REGIONS)
    kw.setdefault("horizon", TOY_HORIZON)
    return build_scenario(**kw)


@pytest.fixture(scope="session")
def toy():
    return toy_scenario()


@pytest.fixture(scope="session")
def toy_eq(toy):
    return solve_nash(toy, NashConfig())


@pytest.fixture(scope="session")
def toy_welfare(toy):
    return diagnostics.welfare_workflow(toy, NashConfig())


@pytest.fixture(scope="session")
def full_baseline():
    return solve_nash(build_scenario("baseline"), NashConfig())


@pytest.fixture(scope="session")
def full_netzero():
    return {y: solve_nash(build_scenario(f"netzero{y}"), NashConfig()) for y in (2050, 2070, 2090)}


@pytest.fixture(scope="session")
def full_welfare():
    return diagnostics.welfare_workflow(build_scenario("baseline"), NashConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(20200101)


@pytest.fixture(scope="session")
def calibrated(tmp_path_factory):
    """Params file fitted from the bundled synthetic dataset."""
    from etsgame.dataset import calibrate_to_file
    from etsgame.tables import data_path
    out = tmp_path_factory.mktemp("calibrated") / "params.ini"
    return calibrate_to_file(data_path("synthetic"), out)
