import copy
import json

import pytest

from transfernet import data_path, load_scenario, load_scenario_file


def two_path_doc(q=1000.0, theta=0.5, t0=(10.0, 12.0), kappa=(400.0, 600.0)):
    """O->D over two parallel links of one mode; fixed demand."""
    return {
        "name": "two_path",
        "nodes": ["O", "D"],
        "subnetworks": [{"id": "road"}],
        "links": [
            {"id": "a", "from": "O", "to": "D", "subnetwork": "road",
             "cost": {"kind": "poly", "t0": t0[0], "alpha": 1, "kappa": kappa[0], "beta": 2}},
            {"id": "b", "from": "O", "to": "D", "subnetwork": "road",
             "cost": {"kind": "poly", "t0": t0[1], "alpha": 1, "kappa": kappa[1], "beta": 2}},
        ],
        "modes": [{"id": "road", "kind": "single", "legs": ["road"]}],
        "paths": [{"id": "1", "mode": "road", "nodes": ["O", "D"], "links": ["a"]},
                  {"id": "2", "mode": "road", "nodes": ["O", "D"], "links": ["b"]}],
        "demand": {"od": [{"origin": "O", "destination": "D", "q0": q}]},
        "behavior": {"theta": theta},
    }


def bundled_doc(name):
    with open(data_path(name), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def fig2():
    return load_scenario_file(data_path("fig2.json"))


@pytest.fixture(scope="session")
def fig2_elastic():
    return load_scenario_file(data_path("fig2_elastic.json"))


@pytest.fixture(scope="session")
def fig5():
    return load_scenario_file(data_path("fig5.json"))


@pytest.fixture
def fig2_doc():
    return copy.deepcopy(bundled_doc("fig2.json"))


@pytest.fixture
def fig5_doc():
    return copy.deepcopy(bundled_doc("fig5.json"))


@pytest.fixture
def two_path():
    return load_scenario(two_path_doc())


# one verdict line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
