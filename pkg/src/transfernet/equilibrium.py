"""Lower-level combined distribution / mode / route logit equilibrium.

The program is solved in total path flows ``f`` (existing plus generated
travellers on each path).  Generated demand is implied by the OD totals,
``q+ = sum(f over the OD) - q0``, so a convex combination of two feasible
points stays feasible and the inner loop can work on ``f`` alone.

Inner loop: partial linearisation.  Link and transfer integrals (and the
capacity penalty) are linearised at the current flows; the minimiser of the
remaining entropy program is the top-down logit loading of
``auxiliary_demand``.  The step toward it is chosen by a line search on the
merit function (or 1/k for ``msa``).

Outer loop: augmented Lagrangian on the hard transfer capacities.  The
penalty price ``max(0, mu + rho (V - cap))`` is added to the cost of every
path through a transfer; after each inner solve ``mu`` takes that value.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .demand import solve_generation
from .netmodel import ActiveNetwork, CostFn, ScenarioError

EPS = 1e-12


class InfeasibleCapacity(ScenarioError):
    """Fixed existing flows alone exceed an installed transfer capacity."""


@dataclass(frozen=True)
class SolverOptions:
    max_outer: int = 60
    max_inner: int = 20000
    tol: float = 1e-10
    cap_tol: float = 1e-8
    rho0: float | None = None      # None: scale from theta and capacities
    growth: float = 4.0
    step_rule: str = "armijo"
    eps: float = EPS

    def __post_init__(self):
        if not self.tol > 0 or not self.cap_tol > 0:
            raise ValueError("tolerances must be positive")
        if not self.growth > 1:
            raise ValueError("penalty growth factor must exceed 1")
        if self.step_rule not in ("msa", "armijo"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration budgets must be >= 1")
        if self.rho0 is not None and not self.rho0 > 0:
            raise ValueError("rho0 must be positive")

    @classmethod
    def from_scenario(cls, scenario, **overrides):
        known = set(cls.__dataclass_fields__)
        kw = {k: v for k, v in scenario.solver if k in known}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class EquilibriumState:
    path_ids: tuple
    f0: np.ndarray             # existing travellers per path
    fplus: np.ndarray          # generated travellers per path
    q_plus: np.ndarray         # generated demand per active OD
    q_mode_plus: np.ndarray    # generated demand per OD-mode group
    link_flow: np.ndarray      # passengers per scenario link
    link_time: np.ndarray
    transfer_ids: tuple
    transfer_flow: np.ndarray
    transfer_cap: np.ndarray
    mu: np.ndarray
    path_cost: np.ndarray
    Z: float
    z: tuple                   # (z1, z2, z3, z4, z5)
    iterations: int
    outer_iterations: int
    gap: float
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def f(self):
        return self.f0 + self.fplus

    @property
    def generated(self):
        return float(self.q_plus.sum())


@dataclass(frozen=True)
class KktReport:
    route: float
    mode: float
    destination: float
    conservation: float
    capacity: float
    complementarity: float
    tol: float

    @property
    def ok(self):
        return (max(self.route, self.mode, self.destination) < self.tol
                and self.conservation < 1e-9
                and self.capacity <= self.tol
                and self.complementarity <= self.tol)

    def as_dict(self):
        return {"route": self.route, "mode": self.mode, "destination": self.destination,
                "conservation": self.conservation, "capacity": self.capacity,
                "complementarity": self.complementarity, "tol": self.tol, "ok": self.ok}


# --- small public helpers ---------------------------------------------------------

def link_time(fn: CostFn, flow: float) -> float:
    if flow < 0:
        raise ValueError("flow must be non-negative")
    return fn(flow)


def logit_split(costs, scale):
    c = np.asarray(costs, dtype=float)
    if c.size == 0:
        raise ValueError("logit_split needs at least one alternative")
    if not scale > 0:
        raise ValueError("scale must be positive")
    e = np.exp(-scale * (c - c.min()))
    return e / e.sum()


def path_cost(active: ActiveNetwork, path_index: int, link_times, transfer_prices):
    """Sum of link times on the path plus transfer time and dual at each of its
    transfer nodes; ``transfer_prices`` is ``t_bar + mu`` per open transfer."""
    a = active.arrays
    lo, hi = a["p_lptr"][path_index], a["p_lptr"][path_index + 1]
    c = float(np.sum(np.asarray(link_times)[a["p_lidx"][lo:hi]]))
    lo, hi = a["p_tptr"][path_index], a["p_tptr"][path_index + 1]
    return c + float(np.sum(np.asarray(transfer_prices)[a["p_tidx"][lo:hi]]))


# --- the program ----------------------------------------------------------------------

class _Program:
    """Merit, gradient and auxiliary loading for one active network."""

    def __init__(self, active, params, eps):
        self.net = active
        self.a = a = active.arrays
        self.theta = params.theta
        self.gamma = params.mode_scale
        self.eta = params.dest_scale
        self.fixed_mode = active.scenario.policy == "fixed_mode"
        self.eps = eps
        self.n_links = a["lk_t0"].shape[0]
        self.n_tr = a["tr_t0"].shape[0]
        self.n_od = a["od_q0"].shape[0]
        self.n_orig = a["or_cap"].shape[0]
        self.n_dest = a["de_cap"].shape[0]
        self.group_od = a["g_od"]
        self.path_od = a["g_od"][a["path_group"]] if active.n_paths else np.zeros(0, np.int64)
        self.mu = np.zeros(self.n_tr)
        self.rho = 1.0

    # flows -> everything
    def evaluate(self, f, grad=True):
        a, eps = self.a, self.eps
        F = K.scatter_rows(a["p_lptr"], a["p_lidx"], f, self.n_links)
        occ = a["lk_occ"]
        t, integ = K.cost_eval(a["lk_t0"], a["lk_alpha"], a["lk_kappa"], a["lk_beta"], F / occ)
        V = K.scatter_rows(a["p_tptr"], a["p_tidx"], f, self.n_tr)
        tt, tinteg = K.cost_eval(a["tr_t0"], a["tr_alpha"], a["tr_kappa"], a["tr_beta"], V)
        price = np.maximum(0.0, self.mu + self.rho * (V - a["tr_cap"]))
        pen = float(np.sum(price**2 - self.mu**2) / (2.0 * self.rho))
        c = K.gather_rows(a["p_lptr"], a["p_lidx"], t) + K.gather_rows(a["p_tptr"], a["p_tidx"], tt + price)

        Qm = K.group_sum(a["g_ptr"], f)
        Qrs = K.group_sum(a["od_gptr"], Qm)
        qp = np.maximum(Qrs - a["od_q0"], 0.0)
        op = np.bincount(a["od_origin"], weights=qp, minlength=self.n_orig)
        dd = np.bincount(a["od_dest"], weights=qp, minlength=self.n_dest)
        th, ga, et = self.theta, self.gamma, self.eta

        lf = np.log(np.maximum(f, eps))
        lQm = np.log(np.maximum(Qm, eps))
        lQrs = np.log(np.maximum(Qrs, eps))
        z1 = float(np.sum(f * lf - f)) / th + float(np.sum(occ * integ))
        z2 = float(np.sum(tinteg))
        if self.fixed_mode:
            qm = np.maximum(Qm - a["g_q0"], 0.0)
            lqm = np.log(np.maximum(qm, eps))
            lqp = np.log(np.maximum(qp, eps))
            z3 = float(np.sum(qm * (lqm - lqp[self.group_od]))) / ga
        else:
            z3 = float(np.sum(Qm * (lQm - lQrs[self.group_od]))) / ga
        z3 -= float(np.sum(Qm * lQm - Qm)) / th
        lqp = np.log(np.maximum(qp, eps))
        lop = np.log(np.maximum(op, eps))
        z4 = float(np.sum(qp * (lqp - lop[a["od_origin"]]))) / et
        z5 = -float(np.sum(a["de_a"] * dd - 0.5 * a["de_b"] * dd * dd))
        Z = z1 + z2 + z3 + z4 + z5
        out = {"F": F, "t": t, "V": V, "tt": tt, "price": price, "c": c, "Qm": Qm,
               "Qrs": Qrs, "qp": qp, "z": (z1, z2, z3, z4, z5), "Z": Z, "merit": Z + pen}
        if grad:
            pg = a["path_group"]
            g = (lf - lQm[pg]) / th + c
            if self.fixed_mode:
                g += (lqm[pg] - lqp[self.path_od]) / ga
            else:
                g += (lQm[pg] - lQrs[self.path_od]) / ga
            if np.any(a["or_cap"] > 0):
                dz = (lqp - lop[a["od_origin"]]) / et - (a["de_a"] - a["de_b"] * dd)[a["od_dest"]]
                g += dz[self.path_od]
            out["g"] = g
        return out

    def directional(self, d):
        """Return g -> g.d evaluated with a per-OD shift of g.

        Near equilibrium g is almost constant inside each OD and d almost sums
        to zero there; shifting removes the cancellation that would otherwise
        swamp the second-order quantity being measured."""
        a = self.a
        dsum = K.group_sum(a["od_gptr"], K.group_sum(a["g_ptr"], d)) if d.size else d
        first = a["g_ptr"][a["od_gptr"][:-1]]
        pod = self.path_od
        # OD totals that cannot move only drift by roundoff
        dsum = np.where(a["or_cap"][a["od_origin"]] > 0, dsum, 0.0)

        def dot(g):
            gbar = g[first]
            return float(np.dot(g - gbar[pod], d) + np.dot(gbar, dsum))
        return dot

    def auxiliary(self, c):
        """Exact minimiser of the program with the cost integrals linearised at
        path costs ``c``; returns (f, q_plus, mode logsums, OD composite costs)."""
        a = self.a
        route_share, Cm = K.group_logit(a["g_ptr"], c, self.theta)
        mode_share, Crs = K.group_logit(a["od_gptr"], Cm, self.gamma)
        qp = solve_generation(Crs, a["od_origin"], a["od_dest"], a["or_cap"], a["de_cap"],
                              a["de_a"], a["de_b"], self.eta)
        if self.fixed_mode:
            Qm = a["g_q0"] + qp[self.group_od] * mode_share
        else:
            Qm = (a["od_q0"] + qp)[self.group_od] * mode_share
        f = Qm[a["path_group"]] * route_share
        return f, qp, Cm, Crs

    def split(self, f, Qm, Qrs):
        """Existing / generated parts of the total path flows."""
        a = self.a
        pg = a["path_group"]
        if self.fixed_mode:
            share = np.where(Qm > 0, a["g_q0"] / np.where(Qm > 0, Qm, 1.0), 0.0)
            f0 = f * share[pg]
        else:
            share = np.where(Qrs > 0, a["od_q0"] / np.where(Qrs > 0, Qrs, 1.0), 0.0)
            f0 = f * share[self.path_od]
        f0 = np.minimum(f0, f)
        return f0, f - f0


def _line_search(prog, f, d, ev0, alpha_prev):
    """Step on [0, 1] minimising the merit along ``d``.

    Illinois regula falsi on the directional derivative, then an Armijo
    sufficient-decrease check on merit values with halving as a safeguard.
    Near convergence merit differences drown in roundoff; the derivative
    sign is then the only reliable signal and is used alone.
    """
    dot = prog.directional(d)
    d0 = dot(ev0["g"])
    if d0 >= 0.0:
        return 0.0, ev0
    ev1 = prog.evaluate(f + d)
    d1 = dot(ev1["g"])
    if d1 <= 0.0:
        alpha, ev = 1.0, ev1
    else:
        lo, hi, dlo, dhi = 0.0, 1.0, d0, d1
        alpha = min(max(alpha_prev, 1e-6), 0.5)
        side = 0
        ev = None
        for _ in range(60):
            ev = prog.evaluate(f + alpha * d)
            da = dot(ev["g"])
            if abs(da) <= 1e-6 * abs(d0) or hi - lo <= 1e-14:
                break
            if da < 0.0:
                lo, dlo = alpha, da
                if side == -1:
                    dhi *= 0.5
                side = -1
            else:
                hi, dhi = alpha, da
                if side == 1:
                    dlo *= 0.5
                side = 1
            alpha = lo - dlo * (hi - lo) / (dhi - dlo)
            if not lo < alpha < hi:
                alpha = 0.5 * (lo + hi)
    m0 = ev0["merit"]
    # merit is a sum of terms much larger than itself; roundoff scales with them
    noise = 1e-12 * (float(np.abs(ev0["z"]).sum()) + abs(m0) + 1.0)
    for _ in range(50):
        if ev["merit"] <= m0 + 1e-4 * alpha * d0 or ev["merit"] - m0 <= noise:
            break
        alpha *= 0.5
        ev = prog.evaluate(f + alpha * d)
    return alpha, ev


def _check_fixed_capacity(prog):
    """Existing flows of a fixed mode whose every path crosses a transfer must
    fit through it."""
    if not prog.fixed_mode or prog.n_tr == 0:
        return
    a, net = prog.a, prog.net
    need = np.zeros(prog.n_tr)
    for gi in range(a["g_ptr"].shape[0] - 1):
        lo, hi = a["g_ptr"][gi], a["g_ptr"][gi + 1]
        common = None
        for p in range(lo, hi):
            s = set(a["p_tidx"][a["p_tptr"][p]:a["p_tptr"][p + 1]].tolist())
            common = s if common is None else common & s
        for n in common or ():
            need[n] += a["g_q0"][gi]
    bad = np.flatnonzero(need > a["tr_cap"] * (1 + 1e-12))
    if bad.size:
        n = bad[0]
        raise InfeasibleCapacity(
            f"transfer {net.transfer_ids[n]}: existing fixed flow {need[n]:g} exceeds "
            f"capacity {a['tr_cap'][n]:g}")


def _initial_rho(prog):
    caps = prog.a["tr_cap"]
    if caps.size == 0:
        return 1.0
    return 1.0 / (prog.theta * float(caps.max()))


def solve_lower_level(active: ActiveNetwork, spec=None, params=None, opts=None,
                      f_init=None) -> EquilibriumState:
    """Solve the lower-level program on ``active``.

    ``spec`` must be the scenario's demand (it is baked into ``active``);
    ``params`` defaults to the scenario behaviour.  Returns a state flagged
    ``converged=False`` when an iteration budget runs out.
    """
    scn = active.scenario
    if spec is not None and spec != scn.demand:
        raise ValueError("demand spec differs from the one the active network was built with")
    params = params or scn.behavior
    opts = opts or SolverOptions.from_scenario(scn)
    prog = _Program(active, params, opts.eps)
    _check_fixed_capacity(prog)
    a = prog.a

    prog.rho = opts.rho0 if opts.rho0 is not None else _initial_rho(prog)
    if f_init is None:
        ev = prog.evaluate(np.zeros(active.n_paths), grad=False)
        f = prog.auxiliary(ev["c"])[0]
    else:
        f = np.asarray(f_init, dtype=float).copy()

    history = []
    total_iter = 0
    gap = math.inf
    converged = False
    prev_viol = math.inf
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        alpha = 0.5
        inner_ok = False
        ev = prog.evaluate(f)
        for k in range(1, opts.max_inner + 1):
            y = prog.auxiliary(ev["c"])[0]
            d = y - f
            scale = float(np.abs(f).sum())
            gap = float(np.abs(d).sum()) / scale if scale > 0 else float(np.abs(d).sum())
            history.append((outer, k, ev["merit"], ev["Z"], gap))
            total_iter += 1
            if gap <= opts.tol:
                inner_ok = True
                break
            if opts.step_rule == "msa":
                alpha = 1.0 / k
                f = f + alpha * d
                ev = prog.evaluate(f)
            else:
                alpha, ev_new = _line_search(prog, f, d, ev, alpha)
                if alpha * float(np.abs(d).max()) <= 1e-15 * max(1.0, float(np.abs(f).max())):
                    # no descent left along the auxiliary direction
                    inner_ok = gap <= 1e3 * opts.tol
                    break
                f = f + alpha * d
                ev = ev_new
        V = ev["V"]
        cap = a["tr_cap"]
        new_mu = ev["price"]
        viol = float(np.max(np.maximum(V - cap, 0.0) / cap)) if cap.size else 0.0
        comp = float(np.max(np.where(new_mu > 0, np.abs(V - cap) / cap, 0.0))) if cap.size else 0.0
        prog.mu = new_mu
        worst = max(viol, comp)
        if inner_ok and worst <= opts.cap_tol:
            converged = True
            break
        if inner_ok and worst > 0.25 * prev_viol:
            prog.rho *= opts.growth
        prev_viol = worst
        if not inner_ok:
            break
        if cap.size == 0:
            break

    # the last inner pass priced transfers with the updated mu, so the final
    # evaluation is consistent with state.mu
    final = prog.evaluate(f, grad=False)
    f0, fp = prog.split(f, final["Qm"], final["Qrs"])
    if prog.fixed_mode:
        qmp = np.maximum(final["Qm"] - a["g_q0"], 0.0)
    else:
        Qrs_g = final["Qrs"][prog.group_od]
        qmp = np.where(Qrs_g > 0, final["Qm"] * final["qp"][prog.group_od]
                       / np.where(Qrs_g > 0, Qrs_g, 1.0), 0.0)
    tr_time_mu = final["tt"] + prog.mu
    costs = K.gather_rows(a["p_lptr"], a["p_lidx"], final["t"]) + \
        K.gather_rows(a["p_tptr"], a["p_tidx"], tr_time_mu)
    return EquilibriumState(
        path_ids=tuple(p.id for p in active.paths),
        f0=f0, fplus=fp, q_plus=final["qp"], q_mode_plus=qmp,
        link_flow=final["F"], link_time=final["t"],
        transfer_ids=active.transfer_ids, transfer_flow=final["V"],
        transfer_cap=a["tr_cap"].copy(), mu=prog.mu.copy(), path_cost=costs,
        Z=final["Z"], z=final["z"], iterations=total_iter, outer_iterations=outer,
        gap=gap, converged=converged, history=history,
    )


# --- evaluation of a given state ---------------------------------------------------

def _program_at(state, active, params):
    prog = _Program(active, params or active.scenario.behavior, EPS)
    prog.mu = np.asarray(state.mu, dtype=float)
    prog.rho = 1.0
    return prog


def objective_value(state, active, spec=None, params=None):
    """(Z, z1, z2, z3, z4, z5) at the state's flows, without penalty terms."""
    ev = _program_at(state, active, params).evaluate(state.f, grad=False)
    return (ev["Z"],) + tuple(ev["z"])


def objective_gradient(f, active, params=None, mu=None):
    """Analytic gradient of Z (plus ``mu`` on transfers) w.r.t. total path flows."""
    prog = _Program(active, params or active.scenario.behavior, EPS)
    prog.rho = 1e300        # price = mu exactly below capacity
    prog.mu = np.zeros(prog.n_tr) if mu is None else np.asarray(mu, dtype=float)
    ev = prog.evaluate(np.asarray(f, dtype=float))
    return ev["g"]


def objective_at(f, active, params=None):
    prog = _Program(active, params or active.scenario.behavior, EPS)
    return prog.evaluate(np.asarray(f, dtype=float), grad=False)["Z"]


def auxiliary_demand(active, costs, spec=None, params=None):
    """Logit-consistent loading at fixed path costs.

    Returns a dict with ``q_plus`` (per active OD), ``q_mode_plus`` (per
    OD-mode group), ``fplus`` and ``f0`` (per path), plus the mode logsums
    ``C_mode`` and OD composite costs ``C_od``.
    """
    if active.n_paths == 0:
        raise ScenarioError("no active path for any OD pair")
    a = active.arrays
    for k, od_i in enumerate(active.od_index):
        od = active.scenario.demand.od[od_i]
        if od.q0 > 0 and a["od_gptr"][k + 1] == a["od_gptr"][k]:
            raise ScenarioError(f"demand od {od.origin}->{od.destination}: no active path")
    covered = set(active.od_index)
    for i, od in enumerate(active.scenario.demand.od):
        if od.q0 > 0 and i not in covered:
            raise ScenarioError(f"demand od {od.origin}->{od.destination}: no active path")
    prog = _Program(active, params or active.scenario.behavior, EPS)
    c = np.asarray(costs, dtype=float)
    f, qp, Cm, Crs = prog.auxiliary(c)
    Qm = K.group_sum(a["g_ptr"], f)
    Qrs = K.group_sum(a["od_gptr"], Qm)
    f0, fp = prog.split(f, Qm, Qrs)
    if prog.fixed_mode:
        qmp = np.maximum(Qm - a["g_q0"], 0.0)
    else:
        Qrs_g = Qrs[prog.group_od]
        qmp = np.where(Qrs_g > 0, Qm * qp[prog.group_od] / np.where(Qrs_g > 0, Qrs_g, 1.0), 0.0)
    return {"q_plus": qp, "q_mode_plus": qmp, "fplus": fp, "f0": f0, "C_mode": Cm, "C_od": Crs}


def kkt_check(state, active, spec=None, params=None, tol=1e-6) -> KktReport:
    """Residuals of the logit optimality conditions at ``state``."""
    params = params or active.scenario.behavior
    a = active.arrays
    prog = _Program(active, params, EPS)
    f = state.f
    n = active.n_paths

    # costs are recomputed from the flows, not taken from the state
    F = K.scatter_rows(a["p_lptr"], a["p_lidx"], f, prog.n_links)
    t, _ = K.cost_eval(a["lk_t0"], a["lk_alpha"], a["lk_kappa"], a["lk_beta"], F / a["lk_occ"])
    V = K.scatter_rows(a["p_tptr"], a["p_tidx"], f, prog.n_tr)
    tt, _ = K.cost_eval(a["tr_t0"], a["tr_alpha"], a["tr_kappa"], a["tr_beta"], V)
    c = K.gather_rows(a["p_lptr"], a["p_lidx"], t) + \
        K.gather_rows(a["p_tptr"], a["p_tidx"], tt + state.mu)

    route = mode = dest = 0.0
    if n:
        share, Cm = K.group_logit(a["g_ptr"], c, prog.theta)
        Qm = K.group_sum(a["g_ptr"], f)
        pg = a["path_group"]
        live = Qm[pg] > 0
        if live.any():
            route = float(np.max(np.abs(f[live] / Qm[pg][live] - share[live])))
        mshare, Crs = K.group_logit(a["od_gptr"], Cm, prog.gamma)
        Qrs = K.group_sum(a["od_gptr"], Qm)
        if prog.fixed_mode:
            qm = np.maximum(Qm - a["g_q0"], 0.0)
            tot = K.group_sum(a["od_gptr"], qm)
        else:
            qm, tot = Qm, Qrs
        live = tot[prog.group_od] > 0
        if live.any():
            mode = float(np.max(np.abs(qm[live] / tot[prog.group_od][live] - mshare[live])))
        qp_star = solve_generation(Crs, a["od_origin"], a["od_dest"], a["or_cap"],
                                   a["de_cap"], a["de_a"], a["de_b"], prog.eta)
        qp = np.maximum(Qrs - a["od_q0"], 0.0)
        if qp.size:
            dest = float(np.max(np.abs(qp - qp_star))) / max(1.0, float(np.max(qp_star)))

    cons = []
    Qm = K.group_sum(a["g_ptr"], f) if n else np.zeros(0)
    Qrs = K.group_sum(a["od_gptr"], Qm) if n else np.zeros(0)
    rel = lambda x, y: abs(x - y) / max(1.0, abs(y))
    if n:
        f0g = K.group_sum(a["g_ptr"], state.f0)
        fpg = K.group_sum(a["g_ptr"], state.fplus)
        if prog.fixed_mode:
            cons.append(max((rel(u, v) for u, v in zip(f0g, a["g_q0"])), default=0.0))
        else:
            cons.append(max((rel(u, v) for u, v in zip(K.group_sum(a["od_gptr"], f0g), a["od_q0"])),
                            default=0.0))
        cons.append(max((rel(u, v) for u, v in zip(fpg, state.q_mode_plus)), default=0.0))
        cons.append(max((rel(u, v) for u, v in zip(K.group_sum(a["od_gptr"], state.q_mode_plus),
                                                   state.q_plus)), default=0.0))
        cons.append(max((rel(u, v) for u, v in zip(state.link_flow, F)), default=0.0))
        cons.append(max((rel(u, v) for u, v in zip(state.transfer_flow, V)), default=0.0))
        neg = float(-min(0.0, state.f0.min(), state.fplus.min()))
        cons.append(neg)
    cap = a["tr_cap"]
    capv = float(np.max(np.maximum(V - cap, 0.0) / cap)) if cap.size else 0.0
    comp = 0.0
    if cap.size:
        if np.any(state.mu < 0):
            comp = float(-state.mu.min())
        act = state.mu > tol
        if act.any():
            comp = max(comp, float(np.max(np.abs(V[act] - cap[act]) / cap[act])))
    return KktReport(route, mode, dest, max(cons, default=0.0), capv, comp, tol)


def total_travel_time(state, active) -> float:
    """Experienced passenger-minutes; capacity duals are not included."""
    a = active.arrays
    t_tr, _ = K.cost_eval(a["tr_t0"], a["tr_alpha"], a["tr_kappa"], a["tr_beta"],
                          state.transfer_flow)
    return float(state.link_flow @ state.link_time + state.transfer_flow @ t_tr)


# --- CSV bundle -----------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(float(x))
    return str(x)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_state(state, active, outdir):
    os.makedirs(outdir, exist_ok=True)
    modes = [p.mode for p in active.paths]
    write_rows(os.path.join(outdir, "path_flows.csv"), ["path", "mode", "f0", "fplus"],
               zip(state.path_ids, modes, state.f0, state.fplus))
    write_rows(os.path.join(outdir, "link_flows.csv"), ["link", "flow", "time"],
               zip([l.id for l in active.scenario.links], state.link_flow, state.link_time))
    nodes = [active.scenario.transfer(t).node for t in state.transfer_ids]
    write_rows(os.path.join(outdir, "transfers.csv"), ["node", "transfer", "flow", "capacity", "mu"],
               zip(nodes, state.transfer_ids, state.transfer_flow, state.transfer_cap, state.mu))
    z = state.z
    write_rows(os.path.join(outdir, "summary.csv"),
               ["Z", "z1", "z2", "z3", "z4", "z5", "TTT", "gap", "iterations", "converged"],
               [[state.Z, *z, total_travel_time(state, active), state.gap, state.iterations,
                 int(state.converged)]])
