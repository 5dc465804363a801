"""Paradox experiments: before/after comparisons, parameter sweeps, the
transit-share design landscape, and calibration of unstated parameters."""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import construction_cost, fitness
from .equilibrium import SolverOptions, solve_lower_level, total_travel_time, write_rows
from .netmodel import BehaviorParams, CostFn, Design, apply_design


def worker_count():
    env = os.environ.get("TRANSFERNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pmap(fn, items):
    """Order-preserving map, threaded when TRANSFERNET_THREADS allows it."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _solve(scenario, design, params=None, opts=None):
    if params is not None:
        scenario = scenario.replace(behavior=params)
    act = apply_design(scenario, design)
    st = solve_lower_level(act, opts=opts or SolverOptions.from_scenario(scenario))
    return act, st


def _only_transfer(scenario, transfer):
    if transfer is not None:
        return transfer
    if len(scenario.transfers) != 1:
        raise ValueError("scenario has several transfer candidates; name one")
    return scenario.transfers[0].id


def mode_flows(active, state):
    out = {m.id: 0.0 for m in active.scenario.modes}
    f = state.f
    for p, x in zip(active.paths, f):
        out[p.mode] += float(x)
    return out


def mode_shares(active, state):
    flows = mode_flows(active, state)
    tot = sum(flows.values())
    return {k: (v / tot if tot > 0 else 0.0) for k, v in flows.items()}


def experienced_costs(active, state):
    """Per-path travel time excluding capacity duals."""
    return state.path_cost - _dual_part(active, state)


def _dual_part(active, state):
    a = active.arrays
    out = np.zeros(active.n_paths)
    for i in range(active.n_paths):
        lo, hi = a["p_tptr"][i], a["p_tptr"][i + 1]
        out[i] = state.mu[a["p_tidx"][lo:hi]].sum()
    return out


# --- before / after -----------------------------------------------------------

@dataclass
class ParadoxReport:
    before_ttt: float
    after_ttt: float
    path_ids: tuple
    before_flows: np.ndarray       # aligned with path_ids, 0 for inactive paths
    after_flows: np.ndarray
    before_costs: np.ndarray       # nan for inactive paths
    after_costs: np.ndarray
    before_state: object = field(repr=False, default=None)
    after_state: object = field(repr=False, default=None)

    @property
    def magnitude(self):
        return self.after_ttt - self.before_ttt

    @property
    def flag(self):
        return self.magnitude > 0


def _align(scenario, active, values, fill):
    pos = {p.id: i for i, p in enumerate(active.paths)}
    return np.array([values[pos[p.id]] if p.id in pos else fill for p in scenario.paths])


def before_after(scenario, design, params=None, opts=None):
    if params is not None:
        scenario = scenario.replace(behavior=params)
    b_act, b_st = _solve(scenario, Design.closed(scenario), opts=opts)
    a_act, a_st = _solve(scenario, design, opts=opts)
    return ParadoxReport(
        before_ttt=total_travel_time(b_st, b_act),
        after_ttt=total_travel_time(a_st, a_act),
        path_ids=tuple(p.id for p in scenario.paths),
        before_flows=_align(scenario, b_act, b_st.f, 0.0),
        after_flows=_align(scenario, a_act, a_st.f, 0.0),
        before_costs=_align(scenario, b_act, experienced_costs(b_act, b_st), math.nan),
        after_costs=_align(scenario, a_act, experienced_costs(a_act, a_st), math.nan),
        before_state=b_st, after_state=a_st,
    )


def write_table1(report, path):
    header = ["scenario"] + [f"path_{p}" for p in report.path_ids] + ["TTT"]
    rows = [["before", *report.before_flows, report.before_ttt],
            ["after", *report.after_flows, report.after_ttt]]
    write_rows(path, header, rows)


# --- sweeps ----------------------------------------------------------------------

@dataclass
class SweepSeries:
    param: str
    values: np.ndarray
    metrics: dict                      # column name -> array aligned with values
    crossover: float | None = None
    regions: list = field(default_factory=list)   # [(lo, hi)] where after > before
    minimizer: float | None = None
    converged: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size > 1 and np.any(np.diff(v) <= 0):
            raise ValueError("sweep values must be strictly increasing")
        self.values = v

    def column(self, name):
        return self.metrics[name]

    def write_csv(self, path):
        cols = list(self.metrics)
        write_rows(path, [self.param] + cols,
                   ([x] + [self.metrics[c][i] for c in cols] for i, x in enumerate(self.values)))


def _crossings(x, d):
    """Points where ``d`` changes sign from <= 0 to > 0 (and back), by linear
    interpolation; returns the list of (start, end) intervals with d > 0."""
    regions = []
    start = x[0] if d[0] > 0 else None
    for i in range(1, len(x)):
        if d[i - 1] <= 0 < d[i]:
            start = x[i - 1] + (x[i] - x[i - 1]) * (-d[i - 1]) / (d[i] - d[i - 1])
        elif d[i - 1] > 0 >= d[i]:
            end = x[i - 1] + (x[i] - x[i - 1]) * d[i - 1] / (d[i - 1] - d[i])
            regions.append((float(start), float(end)))
            start = None
    if start is not None:
        regions.append((float(start), float(x[-1])))
    return regions


def sweep_theta(scenario, design, theta_values, opts=None):
    thetas = np.asarray(theta_values, dtype=float)
    if np.any(thetas <= 0):
        raise ValueError("theta values must be positive")

    def one(th):
        beh = BehaviorParams(th, scenario.behavior.gamma, scenario.behavior.eta)
        rep = before_after(scenario, design, beh, opts)
        return rep

    reps = pmap(one, thetas)
    metrics = {
        "ttt_before": np.array([r.before_ttt for r in reps]),
        "ttt_after": np.array([r.after_ttt for r in reps]),
    }
    for j, pid in enumerate(reps[0].path_ids):
        metrics[f"after_path_{pid}"] = np.array([r.after_flows[j] for r in reps])
    conv = np.array([r.before_state.converged and r.after_state.converged for r in reps])
    s = SweepSeries("theta", thetas, metrics, converged=conv)
    if len(thetas) > 1:
        s.regions = _crossings(thetas, metrics["ttt_after"] - metrics["ttt_before"])
        s.crossover = s.regions[0][0] if s.regions and s.regions[0][0] > thetas[0] else None
    return s


def _parabolic_min(x, y):
    i = int(np.argmin(y))
    if 0 < i < len(x) - 1:
        x0, x1, x2 = x[i - 1:i + 2]
        y0, y1, y2 = y[i - 1:i + 2]
        den = (x0 - x1) * (x0 - x2) * (x1 - x2)
        A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
        B = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
        if A > 0:
            return float(min(max(-B / (2 * A), x0), x2))
    return float(x[i])


def _design_with(scenario, caps, base=None):
    full = {t.id: (base.cap(t.id) if base is not None else 0.0) for t in scenario.transfers}
    full.update(caps)
    return Design.from_dict(full)


def sweep_capacity(scenario, capacity_values, theta=None, transfer=None, opts=None, base=None):
    """After-TTT per capacity of one candidate; other candidates keep their
    capacity in ``base`` (closed by default)."""
    caps = np.asarray(capacity_values, dtype=float)
    if np.any(caps < 0):
        raise ValueError("capacities must be non-negative")
    tid = _only_transfer(scenario, transfer)
    if theta is not None:
        scenario = scenario.replace(behavior=scenario.behavior.with_theta(theta))
    b_act, b_st = _solve(scenario, Design.closed(scenario), opts=opts)
    before = total_travel_time(b_st, b_act)

    def one(c):
        act, st = _solve(scenario, _design_with(scenario, {tid: c}, base), opts=opts)
        k = act.transfer_ids.index(tid) if tid in act.transfer_ids else None
        return (total_travel_time(st, act), _align(scenario, act, st.f, 0.0),
                st.transfer_flow[k] if k is not None else 0.0,
                st.mu[k] if k is not None else 0.0, st.converged)

    res = pmap(one, caps)
    metrics = {"ttt_before": np.full(len(caps), before),
               "ttt_after": np.array([r[0] for r in res])}
    for j, p in enumerate(scenario.paths):
        metrics[f"after_path_{p.id}"] = np.array([r[1][j] for r in res])
    metrics["transfer_flow"] = np.array([r[2] for r in res])
    metrics["mu"] = np.array([r[3] for r in res])
    s = SweepSeries("capacity", caps, metrics, converged=np.array([r[4] for r in res]))
    if len(caps) > 1:
        s.regions = _crossings(caps, metrics["ttt_after"] - before)
        s.minimizer = _parabolic_min(caps, metrics["ttt_after"])
    return s


def share_sweep(scenario, capacity_values, params=None, transfer=None, opts=None):
    """Modal shares, representative experienced path costs and generated
    demand per capacity of one transfer candidate."""
    caps = np.asarray(capacity_values, dtype=float)
    if params is not None:
        scenario = scenario.replace(behavior=params)
    tid = _only_transfer(scenario, transfer)

    def one(c):
        act, st = _solve(scenario, _design_with(scenario, {tid: c}), opts=opts)
        shares = mode_shares(act, st)
        ec = experienced_costs(act, st)
        f = st.f
        cost = {}
        for m in scenario.modes:
            idx = [i for i, p in enumerate(act.paths) if p.mode == m.id]
            if not idx:
                cost[m.id] = math.nan
            elif f[idx].sum() > 0:
                cost[m.id] = float(np.dot(f[idx], ec[idx]) / f[idx].sum())
            else:
                cost[m.id] = float(ec[idx].min())
        return shares, cost, st.generated, float(f.sum()), st.converged

    res = pmap(one, caps)
    metrics = {}
    for m in scenario.modes:
        metrics[f"share_{m.id}"] = np.array([r[0][m.id] for r in res])
    for m in scenario.modes:
        metrics[f"cost_{m.id}"] = np.array([r[1][m.id] for r in res])
    metrics["generated"] = np.array([r[2] for r in res])
    metrics["total_demand"] = np.array([r[3] for r in res])
    return SweepSeries("capacity", caps, metrics, converged=np.array([r[4] for r in res]))


# --- design landscape ----------------------------------------------------------

@dataclass
class ShareGrid:
    bike_caps: np.ndarray
    car_caps: np.ndarray
    share: np.ndarray          # [bike, car]
    feasible: np.ndarray
    fitness: np.ndarray
    cost: np.ndarray

    def optimum_set(self, rel_tol=1e-3):
        """Budget-feasible cells whose fitness is within ``rel_tol`` of the
        best feasible fitness."""
        fit = np.where(self.feasible, self.fitness, -np.inf)
        best = fit.max()
        if not np.isfinite(best):
            return []
        thr = best - rel_tol * abs(best)
        ii, jj = np.nonzero(fit >= thr)
        return [(float(self.bike_caps[i]), float(self.car_caps[j]), float(fit[i, j]))
                for i, j in zip(ii, jj)]

    def write_csv(self, path):
        rows = []
        for i, b in enumerate(self.bike_caps):
            for j, c in enumerate(self.car_caps):
                rows.append([b, c, self.share[i, j], int(self.feasible[i, j]), self.fitness[i, j]])
        write_rows(path, ["bike_cap", "car_cap", "share", "feasible", "fitness"], rows)


def transit_modes(scenario):
    auto = {s.id for s in scenario.subnetworks if s.auto}
    return [m.id for m in scenario.modes if not all(leg in auto for leg in m.legs)]


def _bike_car_ids(scenario, bike, car):
    if bike is not None and car is not None:
        return bike, car
    if len(scenario.transfers) != 2:
        raise ValueError("need exactly two transfer candidates or explicit ids")
    auto = {s.id for s in scenario.subnetworks if s.auto}
    car_like = [t.id for t in scenario.transfers if scenario.mode(t.mode).legs[0] in auto]
    other = [t.id for t in scenario.transfers if t.id not in car_like]
    if len(car_like) != 1:
        raise ValueError("cannot tell the bike and car transfer candidates apart")
    return bike or other[0], car or car_like[0]


def transit_share_grid(scenario, bike_caps, car_caps, bike=None, car=None, opts=None):
    bike, car = _bike_car_ids(scenario, bike, car)
    bcaps = np.asarray(bike_caps, dtype=float)
    ccaps = np.asarray(car_caps, dtype=float)
    tmodes = set(transit_modes(scenario))
    cells = list(itertools.product(range(len(bcaps)), range(len(ccaps))))

    def one(ij):
        i, j = ij
        des = _design_with(scenario, {bike: bcaps[i], car: ccaps[j]})
        fit, st, act = fitness(des, scenario, opts, return_active=True)
        flows = mode_flows(act, st)
        tot = sum(flows.values())
        share = sum(v for k, v in flows.items() if k in tmodes) / tot if tot > 0 else 0.0
        return share, fit, construction_cost(des, scenario)

    res = pmap(one, cells)
    shape = (len(bcaps), len(ccaps))
    share = np.zeros(shape)
    fit = np.zeros(shape)
    cost = np.zeros(shape)
    for (i, j), (s, f, g) in zip(cells, res):
        share[i, j], fit[i, j], cost[i, j] = s, f, g
    feasible = cost <= scenario.budget * (1 + 1e-12)
    return ShareGrid(bcaps, ccaps, share, feasible, fit, cost)


# --- calibration -------------------------------------------------------------------

@dataclass
class CalibrationResult:
    params: dict
    residual: float
    outputs: dict
    scenario: object = field(repr=False, default=None)
    threshold: float = 1e-4

    @property
    def poor(self):
        return self.residual > self.threshold


PARAM_BOUNDS = {"theta": (0.01, 5.0), "tau": (0.0, 60.0), "occupancy": (1.0, 4.0)}


def apply_params(scenario, params, transfer=None):
    """Scenario with calibration parameters substituted."""
    scn = scenario
    if "theta" in params:
        scn = scn.replace(behavior=scn.behavior.with_theta(float(params["theta"])))
    if "tau" in params:
        tid = _only_transfer(scn, transfer)
        scn = scn.with_transfer_time(tid, CostFn.constant(float(params["tau"])))
    if "occupancy" in params:
        auto = {s.id for s in scn.subnetworks if s.auto}
        links = tuple(l if l.subnetwork not in auto else
                      type(l)(l.id, l.from_node, l.to_node, l.subnetwork, l.cost, l.capacity,
                              float(params["occupancy"])) for l in scn.links)
        scn = scn.replace(links=links)
    return scn


def model_outputs(scenario, design, opts=None):
    rep = before_after(scenario, design, opts=opts)
    return {"before_flows": _active_flows(rep, "before"),
            "after_flows": _active_flows(rep, "after"),
            "before_ttt": rep.before_ttt, "after_ttt": rep.after_ttt,
            "delta_ttt": rep.magnitude}


def _active_flows(rep, which):
    flows = getattr(rep, f"{which}_flows")
    costs = getattr(rep, f"{which}_costs")
    return flows[~np.isnan(costs)]


def _residual(out, targets):
    r = 0.0
    for k, tgt in targets.items():
        v = np.atleast_1d(np.asarray(out[k], dtype=float))
        t = np.atleast_1d(np.asarray(tgt, dtype=float))
        if v.shape != t.shape:
            raise ValueError(f"target {k!r} has shape {t.shape}, model gives {v.shape}")
        r += float(np.sum(((v - t) / np.maximum(np.abs(t), 1.0)) ** 2))
    return r


def calibrate(scenario, targets, free_params, design=None, bounds=None, grid=9, rounds=4,
              transfer=None, opts=None, threshold=1e-4):
    """Fit ``free_params`` (subset of theta, tau, occupancy) so that solved
    outputs match ``targets``.

    Targets may name ``before_flows``, ``after_flows`` (active paths in
    declaration order), ``before_ttt``, ``after_ttt`` or ``delta_ttt``.  The
    search is coordinate-wise on a bounded grid, then repeatedly shrinks the
    grid around the incumbent; it is deterministic.
    """
    design = design or Design.full(scenario)
    free = [p for p in ("theta", "tau", "occupancy") if p in set(free_params)]
    unknown = set(free_params) - set(PARAM_BOUNDS)
    if unknown:
        raise ValueError(f"unknown calibration parameters {sorted(unknown)}")
    bnds = dict(PARAM_BOUNDS)
    bnds.update(bounds or {})

    cache = {}

    def evaluate(params):
        key = tuple(round(params[p], 12) for p in free)
        if key not in cache:
            scn = apply_params(scenario, params, transfer)
            out = model_outputs(scn, design, opts)
            cache[key] = (_residual(out, targets), out)
        return cache[key]

    cur = {}
    for p in free:
        if p == "theta":
            cur[p] = scenario.behavior.theta
        elif p == "tau":
            cur[p] = scenario.transfer(_only_transfer(scenario, transfer)).transfer_time.t0
        else:
            auto = {s.id for s in scenario.subnetworks if s.auto}
            occ = [l.occupancy for l in scenario.links if l.subnetwork in auto]
            cur[p] = occ[0] if occ else 1.0
        lo, hi = bnds[p]
        cur[p] = min(max(cur[p], lo), hi)
    best, out = evaluate(cur)
    if free:
        width = {p: bnds[p][1] - bnds[p][0] for p in free}
        for rnd in range(rounds + 1):
            for p in free:
                lo, hi = bnds[p]
                if rnd == 0:
                    pts = np.linspace(lo, hi, grid)
                else:
                    half = width[p] / 2
                    pts = np.linspace(max(lo, cur[p] - half), min(hi, cur[p] + half), grid)
                for x in pts:
                    trial = dict(cur, **{p: float(x)})
                    r, o = evaluate(trial)
                    # roundoff-level gains are ties; keep the incumbent
                    if r < best * (1 - 1e-9) - 1e-15:
                        best, out, cur = r, o, trial
                width[p] = width[p] * 2.0 / (grid - 1) if rnd else (hi - lo) * 2.0 / (grid - 1)
    return CalibrationResult(dict(cur), best, out, apply_params(scenario, cur, transfer),
                             threshold)


def fit_tau_for_crossover(scenario, design, theta_star, lo=0.0, hi=30.0, transfer=None,
                          opts=None, xtol=1e-9):
    """Transfer time at which after- and before-TTT coincide at ``theta_star``.

    Uses bisection on the TTT difference, which decreases in the transfer time
    when the after network attracts more traffic the cheaper the transfer is.
    """
    from scipy.optimize import brentq

    base = scenario.replace(behavior=scenario.behavior.with_theta(theta_star))

    def gap(tau):
        scn = apply_params(base, {"tau": tau}, transfer)
        return before_after(scn, design, opts=opts).magnitude

    return brentq(gap, lo, hi, xtol=xtol)
