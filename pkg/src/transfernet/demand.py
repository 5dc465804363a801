"""Elastic trip generation and destination choice for fixed composite costs.

Given OD composite costs ``C_rs`` this solves

    min  sum C_rs q_rs + (1/eta) sum q_rs ln(q_rs / o_r) - sum_s int_0^{d_s} h_s
    s.t. o_r = sum_s q_rs <= U_r,  d_s = sum_r q_rs <= V_s,  q >= 0

with linear inverse demand ``h_s(x) = a_s - b_s x``.  Origins with a single
destination reduce to a greedy fill per destination.  The general case runs
block Gauss-Seidel over origins; each block is solved exactly through the
parametrisation ``d_s(w) = exp(eta (h_s(d_s) - C_rs - w))`` and two monotone
bisections (origin bound, zero logsum).  Destination capacities couple the
blocks non-smoothly, so they are priced out: an outer coordinate search finds
the price of each binding destination that makes its load hit the capacity.
"""
import math

import numpy as np
from scipy.optimize import brentq

from ._accel import njit


def solve_generation(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b, eta,
                     max_sweeps=500, tol=1e-13):
    n_od = C.shape[0]
    q = np.zeros(n_od)
    if n_od == 0 or not np.any(or_cap > 0):
        return q
    counts = np.bincount(od_origin, minlength=or_cap.shape[0])
    if np.all(counts[od_origin] == 1):
        return _greedy_single(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b)
    inf_cap = np.full(de_cap.shape[0], np.inf)
    de_a = np.asarray(de_a, dtype=float)
    q = _gauss_seidel(C, od_origin, od_dest, or_cap, inf_cap, de_a, de_b, eta,
                      max_sweeps, tol)
    capped = np.flatnonzero(np.isfinite(de_cap))
    if capped.size == 0:
        return q
    nu = np.zeros(de_cap.shape[0])
    n_dest = de_cap.shape[0]

    def load(s, price):
        trial = nu.copy()
        trial[s] = price
        x = _gauss_seidel(C, od_origin, od_dest, or_cap, inf_cap, de_a - trial, de_b, eta,
                          max_sweeps, tol)
        return np.bincount(od_dest, weights=x, minlength=n_dest)[s]

    for _ in range(200):
        moved = 0.0
        for s in capped:
            old = nu[s]
            if load(s, 0.0) <= de_cap[s]:
                nu[s] = 0.0
            else:
                hi = 1.0
                while load(s, hi) > de_cap[s]:
                    hi *= 2.0
                nu[s] = brentq(lambda p: load(s, p) - de_cap[s], 0.0, hi, xtol=1e-13, rtol=1e-14)
            moved = max(moved, abs(nu[s] - old))
        if moved <= 1e-11 * max(1.0, np.abs(nu).max()):
            break
    q = _gauss_seidel(C, od_origin, od_dest, or_cap, inf_cap, de_a - nu, de_b, eta,
                      max_sweeps, tol)
    d = np.bincount(od_dest, weights=q, minlength=n_dest)
    over = np.isfinite(de_cap) & (d > de_cap)
    if over.any():
        # brentq leaves the load a hair above capacity; trim proportionally
        scale = np.ones(n_dest)
        scale[over] = de_cap[over] / d[over]
        q = q * scale[od_dest]
    return q


def _greedy_single(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b):
    q = np.zeros(C.shape[0])
    for s in np.unique(od_dest):
        ods = np.flatnonzero(od_dest == s)
        ods = ods[np.lexsort((ods, C[ods]))]
        a, b, vcap = de_a[s], de_b[s], de_cap[s]
        D = 0.0
        for k in ods:
            room = min(or_cap[od_origin[k]], vcap - D)
            if room <= 0:
                continue
            if b > 0:
                add = min(max((a - C[k]) / b - D, 0.0), room)
            else:
                add = room if a > C[k] else 0.0
            q[k] = add
            D += add
    return q


@njit
def _wexp(z):
    """Lambert W of exp(z), for any real z, without forming exp(z)."""
    if z < 1.0:
        w = math.exp(z)
    else:
        w = z - math.log(z)
    for _ in range(60):
        step = w * (1.0 + z - math.log(w)) / (1.0 + w)
        w_new = step
        if w_new <= 0.0:
            w_new = w * 0.5
        if abs(w_new - w) <= 1e-15 * max(1.0, w):
            w = w_new
            break
        w = w_new
    return w


@njit
def _block_loads(w, ods, C, others, od_dest, room, de_a, de_b, eta, out):
    tot = 0.0
    for j in range(ods.shape[0]):
        k = ods[j]
        s = od_dest[k]
        ex = de_a[s] - de_b[s] * others[s] - C[k] - w
        if de_b[s] > 0.0:
            x = _wexp(math.log(eta * de_b[s]) + eta * ex) / (eta * de_b[s])
        else:
            x = math.exp(min(eta * ex, 700.0))
        if x > room[s]:
            x = room[s]
        if x < 0.0:
            x = 0.0
        out[j] = x
        tot += x
    return tot


@njit
def _solve_block(ods, C, others, od_dest, room, U, de_a, de_b, eta, out):
    if U <= 0.0:
        for j in range(ods.shape[0]):
            out[j] = 0.0
        return
    buf = np.empty(ods.shape[0])
    # origin bound: o(w) = U with o decreasing in w
    w_u = -np.inf
    lo, hi = -1.0, 1.0
    if _block_loads(-1e6, ods, C, others, od_dest, room, de_a, de_b, eta, buf) > U:
        for _ in range(200):
            if _block_loads(lo, ods, C, others, od_dest, room, de_a, de_b, eta, buf) > U:
                break
            lo *= 2.0
        for _ in range(200):
            if _block_loads(hi, ods, C, others, od_dest, room, de_a, de_b, eta, buf) <= U:
                break
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _block_loads(mid, ods, C, others, od_dest, room, de_a, de_b, eta, buf) > U:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(1.0, abs(mid)):
                break
        w_u = hi
    # zero logsum: L(w) = w + ln(o(w))/eta, nondecreasing, tends to the
    # zero-load logsum of net benefits as w -> inf
    top = -np.inf
    for j in range(ods.shape[0]):
        s = od_dest[ods[j]]
        if room[s] > 0.0:
            v = eta * (de_a[s] - de_b[s] * others[s] - C[ods[j]])
            if v > top:
                top = v
    if top == -np.inf:
        w_l = np.inf
    else:
        acc = 0.0
        for j in range(ods.shape[0]):
            s = od_dest[ods[j]]
            if room[s] > 0.0:
                acc += math.exp(eta * (de_a[s] - de_b[s] * others[s] - C[ods[j]]) - top)
        l_inf = (top + math.log(acc)) / eta
        if l_inf <= 0.0:
            w_l = np.inf
        else:
            lo, hi = -1.0, 1.0
            found_lo = False
            for _ in range(200):
                o = _block_loads(lo, ods, C, others, od_dest, room, de_a, de_b, eta, buf)
                if lo + math.log(o) / eta < 0.0:
                    found_lo = True
                    break
                lo *= 2.0
            for _ in range(200):
                o = _block_loads(hi, ods, C, others, od_dest, room, de_a, de_b, eta, buf)
                if o <= 0.0 or hi + math.log(o) / eta >= 0.0:
                    break
                hi *= 2.0
            if not found_lo:
                w_l = -np.inf
            else:
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    o = _block_loads(mid, ods, C, others, od_dest, room, de_a, de_b, eta, buf)
                    if o > 0.0 and mid + math.log(o) / eta < 0.0:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= 1e-15 * max(1.0, abs(mid)):
                        break
                w_l = hi
    w = max(w_u, w_l)
    if w == np.inf:
        for j in range(ods.shape[0]):
            out[j] = 0.0
        return
    _block_loads(w, ods, C, others, od_dest, room, de_a, de_b, eta, out)


@njit
def _gs_loop(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b, eta, max_sweeps, tol,
             order, optr, q):
    n_orig = or_cap.shape[0]
    n_dest = de_cap.shape[0]
    loads = np.zeros(n_dest)
    for k in range(q.shape[0]):
        loads[od_dest[k]] += q[k]
    out = np.empty(q.shape[0])
    for sweep in range(max_sweeps):
        change = 0.0
        scale = 1.0
        for r in range(n_orig):
            a = optr[r]
            b = optr[r + 1]
            if a == b:
                continue
            ods = order[a:b]
            others = loads.copy()
            for j in range(ods.shape[0]):
                others[od_dest[ods[j]]] -= q[ods[j]]
            room = np.maximum(de_cap - others, 0.0)
            _solve_block(ods, C, others, od_dest, room, or_cap[r], de_a, de_b, eta, out)
            for j in range(ods.shape[0]):
                k = ods[j]
                d = abs(out[j] - q[k])
                if d > change:
                    change = d
                loads[od_dest[k]] += out[j] - q[k]
                q[k] = out[j]
                if q[k] > scale:
                    scale = q[k]
        if change <= tol * scale:
            break
    return q


def _gauss_seidel(C, od_origin, od_dest, or_cap, de_cap, de_a, de_b, eta, max_sweeps, tol):
    order = np.argsort(od_origin, kind="stable").astype(np.int64)
    optr = np.zeros(or_cap.shape[0] + 1, dtype=np.int64)
    optr[1:] = np.cumsum(np.bincount(od_origin, minlength=or_cap.shape[0]))
    q = np.zeros(C.shape[0])
    return _gs_loop(np.ascontiguousarray(C, dtype=float), od_origin.astype(np.int64),
                    od_dest.astype(np.int64), or_cap.astype(float), de_cap.astype(float),
                    de_a.astype(float), de_b.astype(float), float(eta), int(max_sweeps),
                    float(tol), order, optr, q)
