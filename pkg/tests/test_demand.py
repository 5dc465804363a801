import numpy as np
import pytest
from scipy.optimize import minimize

from transfernet.demand import _wexp, solve_generation


def objective(q, C, od_origin, od_dest, de_a, de_b, eta):
    o = np.bincount(od_origin, weights=q)
    d = np.bincount(od_dest, weights=q, minlength=len(de_a))
    qs = np.maximum(q, 1e-300)
    ent = np.sum(q * (np.log(qs) - np.log(np.maximum(o[od_origin], 1e-300)))) / eta
    return float(C @ q + ent - np.sum(de_a * d - 0.5 * de_b * d * d))


def reference(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b, eta):
    n = len(C)
    cons = [{"type": "ineq", "fun": lambda q, r=r: or_cap[r] - q[od_origin == r].sum()}
            for r in range(len(or_cap))]
    cons += [{"type": "ineq", "fun": lambda q, s=s: de_cap[s] - q[od_dest == s].sum()}
             for s in range(len(de_cap)) if np.isfinite(de_cap[s])]
    res = minimize(objective, np.full(n, 10.0), args=(C, od_origin, od_dest, de_a, de_b, eta),
                   bounds=[(1e-9, None)] * n, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 2000})
    return res.x


CASES = [
    # two origins sharing two destinations, loose caps
    dict(C=np.array([10.0, 14.0, 12.0, 9.0]), od_origin=np.array([0, 0, 1, 1]),
         od_dest=np.array([0, 1, 0, 1]), or_cap=np.array([2000.0, 2000.0]),
         de_cap=np.array([np.inf, np.inf]), de_a=np.array([40.0, 35.0]),
         de_b=np.array([0.02, 0.03]), eta=0.2),
    # binding origin bound
    dict(C=np.array([10.0, 14.0, 12.0, 9.0]), od_origin=np.array([0, 0, 1, 1]),
         od_dest=np.array([0, 1, 0, 1]), or_cap=np.array([300.0, 2000.0]),
         de_cap=np.array([np.inf, np.inf]), de_a=np.array([40.0, 35.0]),
         de_b=np.array([0.02, 0.03]), eta=0.2),
    # binding destination capacity coupling both origins
    dict(C=np.array([10.0, 14.0, 12.0, 9.0]), od_origin=np.array([0, 0, 1, 1]),
         od_dest=np.array([0, 1, 0, 1]), or_cap=np.array([2000.0, 2000.0]),
         de_cap=np.array([500.0, np.inf]), de_a=np.array([40.0, 35.0]),
         de_b=np.array([0.02, 0.03]), eta=0.2),
]


@pytest.mark.parametrize("case", CASES)
def test_generation_matches_generic_optimiser(case):
    q = solve_generation(**case)
    ref = reference(**case)
    fq = objective(q, case["C"], case["od_origin"], case["od_dest"], case["de_a"], case["de_b"],
                   case["eta"])
    fr = objective(ref, case["C"], case["od_origin"], case["od_dest"], case["de_a"],
                   case["de_b"], case["eta"])
    assert fq <= fr + 1e-7 * abs(fr)
    np.testing.assert_allclose(q, ref, rtol=1e-4, atol=1e-3)
    assert np.all(np.bincount(case["od_origin"], weights=q) <= case["or_cap"] + 1e-9)
    d = np.bincount(case["od_dest"], weights=q)
    assert np.all(d <= case["de_cap"] * (1 + 1e-12))


def test_single_destination_greedy():
    # cheaper origin fills first, up to where inverse demand meets its cost
    q = solve_generation(np.array([20.0, 25.0]), np.array([0, 1]), np.array([0, 0]),
                         np.array([1000.0, 1000.0]), np.array([np.inf]), np.array([40.0]),
                         np.array([0.01]), 0.5)
    np.testing.assert_allclose(q, [1000.0, 500.0])


def test_no_generation_when_uncapped_origins_are_closed():
    q = solve_generation(np.array([1.0, 2.0]), np.array([0, 0]), np.array([0, 1]),
                         np.array([0.0]), np.array([np.inf, np.inf]), np.array([50.0, 50.0]),
                         np.array([0.1, 0.1]), 1.0)
    np.testing.assert_array_equal(q, 0.0)


@pytest.mark.parametrize("z", [-40.0, -1.0, 0.0, 0.5, 3.0, 80.0, 700.0])
def test_lambert_w_of_exp(z):
    w = _wexp(z)
    assert np.log(w) + w == pytest.approx(z, rel=1e-13, abs=1e-13)
