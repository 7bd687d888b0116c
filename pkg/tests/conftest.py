import pytest

import fiberlink as fl


@pytest.fixture(scope="session")
def fig1_report(tmp_path_factory):
    """Paper-calibrated link preset, run once for the whole session."""
    scn = fl.load_scenario({"seed": 20260808, "preset": "fig1"})
    out = tmp_path_factory.mktemp("fig1")
    return fl.run(scn, out_dir=out), out


@pytest.fixture(scope="session")
def fig4_report(tmp_path_factory):
    scn = fl.load_scenario({"seed": 777, "preset": "fig4"})
    out = tmp_path_factory.mktemp("fig4")
    return fl.run(scn, out_dir=out), out


@pytest.fixture(scope="session")
def budget_report(tmp_path_factory):
    scn = fl.load_scenario({"seed": 4242, "preset": "budget"})
    out = tmp_path_factory.mktemp("budget")
    return fl.run(scn, out_dir=out), out
