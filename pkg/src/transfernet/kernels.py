"""Hot numeric kernels of the equilibrium loop.

Every kernel has a loop version compiled with numba and a vectorised numpy
version.  The module-level names point at one or the other depending on
``transfernet._accel.HAS_NUMBA``; both variants stay importable under the
``*_loop`` / ``*_numpy`` names so they can be cross-checked and benchmarked.

Incidence structures are CSR-like: ``ptr`` has one entry per row plus one,
``idx`` holds column indices.  Grouped arrays (paths per OD-mode group,
modes per OD pair) are contiguous with a ``gptr`` offset array; groups are
never empty.
"""
import numpy as np

from ._accel import HAS_NUMBA, njit

__all__ = [
    "cost_eval",
    "scatter_rows",
    "gather_rows",
    "group_logit",
    "group_sum",
    "xlogy",
    "HAS_NUMBA",
]


# --- link performance -------------------------------------------------------

def cost_eval_numpy(t0, alpha, kappa, beta, v):
    r = v / kappa
    rb = r**beta
    time = t0 + alpha * rb
    integral = t0 * v + alpha * kappa * rb * r / (beta + 1.0)
    return time, integral


@njit
def cost_eval_loop(t0, alpha, kappa, beta, v):
    n = v.shape[0]
    time = np.empty(n)
    integral = np.empty(n)
    for i in range(n):
        r = v[i] / kappa[i]
        if alpha[i] == 0.0:
            rb = 0.0
        else:
            rb = r ** beta[i]
        time[i] = t0[i] + alpha[i] * rb
        integral[i] = t0[i] * v[i] + alpha[i] * kappa[i] * rb * r / (beta[i] + 1.0)
    return time, integral


# --- incidence products -----------------------------------------------------

def scatter_rows_numpy(ptr, idx, w, n_out):
    """out[idx[j]] += w[row(j)]: path flows -> link flows."""
    counts = np.diff(ptr)
    return np.bincount(idx, weights=np.repeat(w, counts), minlength=n_out).astype(float)


@njit
def scatter_rows_loop(ptr, idx, w, n_out):
    out = np.zeros(n_out)
    for p in range(ptr.shape[0] - 1):
        wp = w[p]
        for j in range(ptr[p], ptr[p + 1]):
            out[idx[j]] += wp
    return out


def gather_rows_numpy(ptr, idx, vals):
    """out[row] = sum(vals[idx[ptr[row]:ptr[row+1]]]): link times -> path costs."""
    n = ptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(ptr))
    return np.bincount(rows, weights=vals[idx], minlength=n).astype(float)


@njit
def gather_rows_loop(ptr, idx, vals):
    n = ptr.shape[0] - 1
    out = np.zeros(n)
    for p in range(n):
        s = 0.0
        for j in range(ptr[p], ptr[p + 1]):
            s += vals[idx[j]]
        out[p] = s
    return out


# --- grouped logit ----------------------------------------------------------

def group_logit_numpy(gptr, cost, scale):
    """Softmax of ``-scale*cost`` within each group, plus the group logsum
    ``-(1/scale) * log(sum(exp(-scale*cost)))``."""
    starts = gptr[:-1]
    sizes = np.diff(gptr)
    cmin = np.minimum.reduceat(cost, starts)
    e = np.exp(-scale * (cost - np.repeat(cmin, sizes)))
    tot = np.add.reduceat(e, starts)
    shares = e / np.repeat(tot, sizes)
    logsum = cmin - np.log(tot) / scale
    return shares, logsum


@njit
def group_logit_loop(gptr, cost, scale):
    ng = gptr.shape[0] - 1
    shares = np.empty(cost.shape[0])
    logsum = np.empty(ng)
    for g in range(ng):
        a = gptr[g]
        b = gptr[g + 1]
        cmin = cost[a]
        for i in range(a + 1, b):
            if cost[i] < cmin:
                cmin = cost[i]
        tot = 0.0
        for i in range(a, b):
            e = np.exp(-scale * (cost[i] - cmin))
            shares[i] = e
            tot += e
        for i in range(a, b):
            shares[i] /= tot
        logsum[g] = cmin - np.log(tot) / scale
    return shares, logsum


def group_sum_numpy(gptr, x):
    return np.add.reduceat(x, gptr[:-1]) if x.shape[0] else np.zeros(gptr.shape[0] - 1)


@njit
def group_sum_loop(gptr, x):
    ng = gptr.shape[0] - 1
    out = np.zeros(ng)
    for g in range(ng):
        s = 0.0
        for i in range(gptr[g], gptr[g + 1]):
            s += x[i]
        out[g] = s
    return out


def xlogy(x, y):
    """x*log(y) with the 0*log(0) = 0 convention, elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    mask = np.broadcast_to(x > 0.0, out.shape)
    xb = np.broadcast_to(x, out.shape)
    yb = np.broadcast_to(y, out.shape)
    out[mask] = xb[mask] * np.log(yb[mask])
    return out


if HAS_NUMBA:
    cost_eval = cost_eval_loop
    scatter_rows = scatter_rows_loop
    gather_rows = gather_rows_loop
    group_logit = group_logit_loop
    group_sum = group_sum_loop
else:
    cost_eval = cost_eval_numpy
    scatter_rows = scatter_rows_numpy
    gather_rows = gather_rows_numpy
    group_logit = group_logit_numpy
    group_sum = group_sum_numpy
