import json

import numpy as np
import pytest
from scipy.integrate import quad

from transfernet.netmodel import (CostFn, Design, ScenarioError, ScenarioParseError, apply_design,
                                  dump_scenario, enumerate_paths, load_scenario, scenario_to_dict)

from conftest import two_path_doc


def test_fig5_counts(fig5):
    assert len(fig5.nodes) == 7
    assert len(fig5.links) == 12
    assert len(fig5.paths) == 9
    assert {t.node for t in fig5.transfers} == {"5", "7"}


def test_fig5_paths_carry_transfers(fig5):
    by_id = {p.id: p for p in fig5.paths}
    assert by_id["3"].transfers == ("bike_5",)
    assert by_id["4"].transfers == ("car_7",)
    assert by_id["9"].links == ("10", "11", "5")
    assert by_id["5"].transfers == ()


def test_fig2_dummy_transfer_link(fig2):
    p = [p for p in fig2.paths if p.mode == "pr"][0]
    assert p.links == ("1", "4")
    assert p.transfers == ("A_pr",)


@pytest.mark.parametrize("v", [0.0, 120.0, 850.5, 3000.0])
def test_cost_integral_matches_quadrature(v):
    fn = CostFn(43.0, 1.0, 1000.0, 4.0)
    ref, _ = quad(fn, 0.0, v)
    assert fn.integral(v) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_cost_rejects_bad_parameters():
    with pytest.raises(ScenarioError):
        CostFn(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ScenarioError):
        CostFn(1.0, 1.0, 100.0, 0.5)
    with pytest.raises(ScenarioError):
        CostFn.from_dict({"kind": "exp", "t0": 1})


def test_malformed_json():
    with pytest.raises(ScenarioParseError):
        load_scenario("{not json")


def _mutate(doc, fn):
    fn(doc)
    return doc


@pytest.mark.parametrize("change,needle", [
    (lambda d: d["links"][0].update({"to": "Z"}), "dangling"),
    (lambda d: d["demand"]["od"][0].update({"q0": -5}), "negative"),
    (lambda d: d["links"].append(dict(d["links"][0])), "duplicate"),
    (lambda d: d["behavior"].update({"theta": 0}), "theta"),
    (lambda d: d.update({"policy": "free"}), "policy"),
    (lambda d: d["paths"][0].update({"links": ["zz"]}), "bad link reference"),
])
def test_validation_errors(change, needle):
    doc = _mutate(two_path_doc(), change)
    with pytest.raises(ScenarioError, match=needle):
        load_scenario(doc)


def test_transfer_bounds_validated(fig5_doc):
    fig5_doc["transfers"][0]["c_min"] = 2000
    with pytest.raises(ScenarioError, match="c_min"):
        load_scenario(fig5_doc)


def test_fixed_mode_requires_split(fig2_doc):
    fig2_doc["policy"] = "fixed_mode"
    with pytest.raises(ScenarioError, match="q0_by_mode"):
        load_scenario(fig2_doc)


def test_roundtrip_dump(fig5):
    again = load_scenario(dump_scenario(fig5))
    assert scenario_to_dict(again) == scenario_to_dict(fig5)


def test_enumerated_paths_match_route_table(fig5_doc):
    del fig5_doc["paths"]
    scn = load_scenario(fig5_doc)
    got = {(p.mode, "-".join(p.nodes)) for p in scn.paths}
    expected = {("car", "1-7-4"), ("car", "6-7-4"), ("metro", "1-2-3-4"), ("metro", "6-3-4"),
                ("metro", "6-2-3-4"), ("br", "1-5-2-3-4"), ("br", "6-5-2-3-4"),
                ("pr", "1-7-3-4"), ("pr", "6-7-3-4")}
    assert expected <= got


def test_enumerate_paths_k_and_order(fig5_doc):
    del fig5_doc["paths"]
    scn = load_scenario(fig5_doc)
    one = enumerate_paths(scn, ("6", "4"), "metro", 1)
    two = enumerate_paths(scn, ("6", "4"), "metro", 2)
    assert len(one) == 1 and len(two) == 2
    assert one[0].nodes == ("6", "2", "3", "4")       # 12 + 3 + 21 beats 25 + 21
    assert two[1].nodes == ("6", "3", "4")
    assert enumerate_paths(scn, ("4", "1"), "metro", 3) == []
    with pytest.raises(ValueError):
        enumerate_paths(scn, ("6", "4"), "metro", 0)


def test_enumerate_explicit_returns_declared(fig5):
    got = enumerate_paths(fig5, ("1", "4"), "br", 5)
    assert [p.id for p in got] == ["3"]


def test_design_json_roundtrip():
    d = Design.from_dict({"x": 400.0, "y": 0.0})
    assert d.xi("x") == 1 and d.xi("y") == 0
    assert Design.from_json(json.loads(json.dumps(d.to_json()))) == d
    assert hash(d) == hash(Design.from_dict({"y": 0.0, "x": 400.0}))


def test_apply_design_drops_closed_paths(fig5):
    act = apply_design(fig5, Design.from_dict({"bike_5": 600.0, "car_7": 0.0}))
    modes = {p.mode for p in act.paths}
    assert "pr" not in modes and "br" in modes
    assert act.transfer_ids == ("bike_5",)
    np.testing.assert_allclose(act.tr_cap, [600.0])
    # groups are contiguous per OD, then per mode
    assert act.g_ptr[-1] == act.n_paths
    assert list(act.od_gptr) == sorted(act.od_gptr)


def test_apply_design_bounds(fig5):
    with pytest.raises(ScenarioError, match="outside"):
        apply_design(fig5, Design.from_dict({"bike_5": 100.0, "car_7": 400.0}))
    with pytest.raises(ScenarioError, match="unknown"):
        apply_design(fig5, Design.from_dict({"nope": 1.0}))


def test_arrays_read_only(two_path):
    act = apply_design(two_path, Design.from_dict({}))
    with pytest.raises(ValueError):
        act.lk_t0[0] = 1.0


def test_reference_block(fig2):
    ref = dict(fig2.reference)
    assert ref["before_flows"] == (755.0, 1245.0)
    assert ref["free_params"] == ("theta", "tau")


def test_reference_rejects_unknown_key():
    doc = two_path_doc()
    doc["reference"] = {"speed": 3}
    with pytest.raises(ScenarioError, match="reference"):
        load_scenario(doc)
