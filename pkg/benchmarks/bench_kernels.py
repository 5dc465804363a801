"""Numba loop kernels vs. numpy kernels.

Two parts:

* micro: each kernel on a synthetic incidence structure of growing size,
  compiled loop variant against the vectorised numpy variant;
* end to end: the fig6 share grid solved in a fresh interpreter with
  ``TRANSFERNET_NUMBA=1`` and ``TRANSFERNET_NUMBA=0``.

Run ``python3 benchmarks/bench_kernels.py [--quick]``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from transfernet import kernels as K
from transfernet._accel import HAS_NUMBA


def synthetic(n_paths, links_per_path, n_links, group_size, seed=0):
    rng = np.random.default_rng(seed)
    ptr = np.arange(0, (n_paths + 1) * links_per_path, links_per_path, dtype=np.int64)
    idx = rng.integers(0, n_links, n_paths * links_per_path).astype(np.int64)
    gptr = np.arange(0, n_paths + 1, group_size, dtype=np.int64)
    if gptr[-1] != n_paths:
        gptr = np.append(gptr, n_paths)
    return dict(
        ptr=ptr, idx=idx, gptr=gptr,
        f=rng.uniform(0, 100, n_paths), cost=rng.uniform(10, 60, n_paths),
        t0=rng.uniform(1, 30, n_links), alpha=np.ones(n_links),
        kappa=rng.uniform(300, 1500, n_links), beta=rng.choice([1.0, 2.0, 4.0], n_links),
        v=rng.uniform(0, 2000, n_links), n_links=n_links,
    )


def cases(d):
    return {
        "cost_eval": (lambda: K.cost_eval_loop(d["t0"], d["alpha"], d["kappa"], d["beta"], d["v"]),
                      lambda: K.cost_eval_numpy(d["t0"], d["alpha"], d["kappa"], d["beta"], d["v"])),
        "scatter_rows": (lambda: K.scatter_rows_loop(d["ptr"], d["idx"], d["f"], d["n_links"]),
                         lambda: K.scatter_rows_numpy(d["ptr"], d["idx"], d["f"], d["n_links"])),
        "gather_rows": (lambda: K.gather_rows_loop(d["ptr"], d["idx"], d["v"]),
                        lambda: K.gather_rows_numpy(d["ptr"], d["idx"], d["v"])),
        "group_logit": (lambda: K.group_logit_loop(d["gptr"], d["cost"], 0.5),
                        lambda: K.group_logit_numpy(d["gptr"], d["cost"], 0.5)),
        "group_sum": (lambda: K.group_sum_loop(d["gptr"], d["f"]),
                      lambda: K.group_sum_numpy(d["gptr"], d["f"])),
    }


def best_of(fn, repeat=5):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def micro(sizes):
    print(f"backend in this process: {'numba' if HAS_NUMBA else 'numpy (loops run as Python)'}")
    print(f"{'kernel':<14}{'paths':>9}{'loop us':>12}{'numpy us':>12}{'speedup':>9}")
    for n in sizes:
        d = synthetic(n, 6, max(10, n // 4), 3)
        for name, (loop, vec) in cases(d).items():
            a, b = loop(), vec()
            for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                assert np.allclose(x, y, rtol=1e-12, atol=1e-9), name
            tl, tv = best_of(loop), best_of(vec)
            print(f"{name:<14}{n:>9}{tl * 1e6:>12.1f}{tv * 1e6:>12.1f}{tv / tl:>9.2f}")


END_TO_END = r"""
import time, numpy as np
from transfernet import data_path, load_scenario_file
from transfernet.paradoxlab import transit_share_grid
from transfernet._accel import backend
scn = load_scenario_file(data_path("fig5.json"))
t = time.perf_counter()
transit_share_grid(scn, [900.0], [450.0])          # warm-up (JIT or cache load)
warm = time.perf_counter() - t
t = time.perf_counter()
transit_share_grid(scn, np.arange(300, 1501, 100.0), np.arange(400, 801, 100.0))
print(backend(), round(warm, 3), round(time.perf_counter() - t, 3))
"""


def end_to_end():
    print("\nfig6 grid (13 x 5 solves), fresh interpreter per backend")
    print(f"{'backend':<10}{'warm-up s':>11}{'grid s':>9}")
    env = dict(os.environ, TRANSFERNET_THREADS="1")
    for flag in ("1", "0"):
        env["TRANSFERNET_NUMBA"] = flag
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"{out[0]:<10}{float(out[1]):>11.3f}{float(out[2]):>9.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    micro([100, 10_000] if args.quick else [100, 10_000, 1_000_000])
    end_to_end()
