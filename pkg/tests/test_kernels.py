import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transfernet import kernels as K
from transfernet.equilibrium import logit_split

costs = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=12)
scales = st.floats(1e-3, 20.0)


@given(costs, scales)
def test_logit_sums_to_one_and_positive(c, s):
    p = logit_split(c, s)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)


@given(costs, scales, st.floats(-500, 500))
def test_logit_shift_invariant(c, s, k):
    np.testing.assert_allclose(logit_split(c, s), logit_split(np.add(c, k), s), atol=1e-9)


@given(costs, scales)
def test_logit_cheaper_gets_more(c, s):
    p = logit_split(c, s)
    order = np.argsort(c, kind="stable")
    assert np.all(np.diff(p[order]) <= 1e-15)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=8), st.floats(0.01, 5.0))
def test_logit_scale_limit(c, s):
    """Large scale concentrates on the minimum, small scale spreads evenly."""
    p_hi = logit_split(c, 1e6)
    assert p_hi[int(np.argmin(c))] >= 1.0 / len(c)
    p_lo = logit_split(c, 1e-9)
    np.testing.assert_allclose(p_lo, 1.0 / len(c), rtol=1e-5)


def test_logit_rejects_bad_input():
    with pytest.raises(ValueError):
        logit_split([], 1.0)
    with pytest.raises(ValueError):
        logit_split([1.0], 0.0)


@pytest.fixture
def incidence():
    rng = np.random.default_rng(3)
    n_paths, n_links = 40, 15
    lens = rng.integers(1, 5, n_paths)
    ptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    idx = rng.integers(0, n_links, ptr[-1]).astype(np.int64)
    gptr = np.array([0, 3, 4, 10, 17, 25, 40], dtype=np.int64)
    return ptr, idx, gptr, rng.uniform(0, 50, n_paths), rng.uniform(0, 900, n_links), n_links


def test_loop_and_numpy_kernels_agree(incidence):
    ptr, idx, gptr, f, v, n_links = incidence
    np.testing.assert_allclose(K.scatter_rows_loop(ptr, idx, f, n_links),
                               K.scatter_rows_numpy(ptr, idx, f, n_links), rtol=1e-13)
    np.testing.assert_allclose(K.gather_rows_loop(ptr, idx, v),
                               K.gather_rows_numpy(ptr, idx, v), rtol=1e-13)
    for a, b in zip(K.group_logit_loop(gptr, f, 0.3), K.group_logit_numpy(gptr, f, 0.3)):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    np.testing.assert_allclose(K.group_sum_loop(gptr, f), K.group_sum_numpy(gptr, f), rtol=1e-13)
    t0, al = np.full(n_links, 5.0), np.linspace(0, 1, n_links)
    ka, be = np.full(n_links, 500.0), np.linspace(1, 4, n_links)
    for a, b in zip(K.cost_eval_loop(t0, al, ka, be, v), K.cost_eval_numpy(t0, al, ka, be, v)):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_group_logit_logsum(incidence):
    _, _, gptr, f, _, _ = incidence
    _, ls = K.group_logit(gptr, f, 0.7)
    for g in range(len(gptr) - 1):
        c = f[gptr[g]:gptr[g + 1]]
        assert ls[g] == pytest.approx(-np.log(np.exp(-0.7 * c).sum()) / 0.7, rel=1e-12)


def test_xlogy_zero_convention():
    np.testing.assert_array_equal(K.xlogy([0.0, 2.0], [0.0, 1.0]), [0.0, 0.0])


def test_numpy_fallback_selected_by_env():
    code = ("from transfernet import kernels as K; from transfernet._accel import backend;"
            "print(backend(), K.group_sum is K.group_sum_numpy)")
    env = dict(os.environ, TRANSFERNET_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["numpy", "True"]
