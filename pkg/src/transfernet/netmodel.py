"""Multimodal supernetwork data model.

A scenario is a layered graph: each subnetwork (car, metro, bike, ...) carries
its own links, walk-type *access* subnetworks may be used by any mode, and
combined modes (P+R, B+R) switch subnetworks at capacitated transfer nodes.
Scenarios are read from a JSON document (see ``load_scenario``), designs open
transfer candidates, and ``apply_design`` freezes everything the equilibrium
solver needs into flat numpy arrays.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

POLICIES = ("fixed_total", "fixed_mode")


class ScenarioError(ValueError):
    """A scenario or design failed validation."""


class ScenarioParseError(ScenarioError):
    """The scenario document is not well-formed."""


# --- elementary types ---------------------------------------------------------

@dataclass(frozen=True)
class CostFn:
    """Separable travel-time function ``t0 + alpha * (v / kappa) ** beta``.

    A constant cost is the special case ``alpha = 0``.
    """

    t0: float
    alpha: float = 0.0
    kappa: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        vals = (self.t0, self.alpha, self.kappa, self.beta)
        if not all(math.isfinite(x) for x in vals):
            raise ScenarioError(f"cost function has non-finite parameter {vals}")
        if self.t0 < 0 or self.alpha < 0:
            raise ScenarioError(f"cost function needs t0 >= 0 and alpha >= 0, got {vals}")
        if self.kappa <= 0:
            raise ScenarioError(f"cost function needs kappa > 0, got {self.kappa}")
        if self.beta < 1:
            raise ScenarioError(f"cost function needs beta >= 1, got {self.beta}")

    @classmethod
    def constant(cls, t0):
        return cls(float(t0))

    @property
    def is_constant(self):
        return self.alpha == 0.0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = self.t0 + self.alpha * (v / self.kappa) ** self.beta
        return float(out) if out.ndim == 0 else out

    def integral(self, v):
        """Closed-form ``int_0^v t(x) dx``."""
        v = np.asarray(v, dtype=float)
        r = v / self.kappa
        out = self.t0 * v + self.alpha * self.kappa / (self.beta + 1.0) * r ** (self.beta + 1.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        if self.is_constant:
            return {"kind": "constant", "t0": self.t0}
        return {"kind": "poly", "t0": self.t0, "alpha": self.alpha,
                "kappa": self.kappa, "beta": self.beta}

    @classmethod
    def from_dict(cls, d, where="cost"):
        if not isinstance(d, dict) or "kind" not in d:
            raise ScenarioError(f"{where}: cost function must be an object with 'kind'")
        kind = d["kind"]
        try:
            if kind == "constant":
                return cls(float(d["t0"]))
            if kind == "poly":
                return cls(float(d["t0"]), float(d.get("alpha", 1.0)),
                           float(d["kappa"]), float(d.get("beta", 1.0)))
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing cost parameter {exc}") from None
        except ScenarioError as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        raise ScenarioError(f"{where}: unknown cost kind {kind!r}")


@dataclass(frozen=True)
class Subnetwork:
    id: str
    auto: bool = False      # flows are vehicles: passenger flow / occupancy
    access: bool = False    # walk-like links usable inside any mode's legs


@dataclass(frozen=True)
class Mode:
    id: str
    kind: str               # "single" or "combined"
    legs: tuple


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    subnetwork: str
    cost: CostFn
    capacity: Optional[float] = None   # soft, informational
    occupancy: float = 1.0


@dataclass(frozen=True)
class TransferCandidate:
    id: str
    node: str
    mode: str
    c_min: float
    c_max: float
    fixed_cost: float = 0.0
    unit_cost: float = 0.0
    transfer_time: CostFn = field(default_factory=lambda: CostFn(0.0))
    to_node: Optional[str] = None      # dummy transfer link node -> to_node


@dataclass(frozen=True)
class Path:
    id: str
    origin: str
    destination: str
    mode: str
    nodes: tuple
    links: tuple            # real link ids in travel order
    transfers: tuple = ()   # transfer candidate ids crossed


@dataclass(frozen=True)
class ODDemand:
    origin: str
    destination: str
    q0: float
    q0_by_mode: Optional[tuple] = None   # ((mode id, flow), ...)

    def mode_split(self):
        return dict(self.q0_by_mode or ())


@dataclass(frozen=True)
class OriginSpec:
    o0: float
    omax: float


@dataclass(frozen=True)
class DestinationSpec:
    d0: float
    dmax: float
    a: float = 0.0   # inverse demand h(x) = a - b x, minutes
    b: float = 0.0


@dataclass(frozen=True)
class DemandSpec:
    od: tuple                 # of ODDemand
    origins: tuple            # ((id, OriginSpec), ...)
    destinations: tuple       # ((id, DestinationSpec), ...)

    def origin(self, r):
        return dict(self.origins)[r]

    def destination(self, s):
        return dict(self.destinations)[s]


@dataclass(frozen=True)
class BehaviorParams:
    """Logit scales; ``gamma``/``eta`` left as None follow ``theta``."""

    theta: float
    gamma: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        for name in ("theta", "gamma", "eta"):
            v = getattr(self, name)
            if v is None and name != "theta":
                continue
            if v is None or not math.isfinite(v) or v <= 0:
                raise ScenarioError(f"behavior.{name} must be positive and finite, got {v}")

    @property
    def mode_scale(self):
        return self.theta if self.gamma is None else self.gamma

    @property
    def dest_scale(self):
        return self.theta if self.eta is None else self.eta

    def with_theta(self, theta):
        return BehaviorParams(theta, self.gamma, self.eta)


@dataclass(frozen=True)
class Design:
    """Upper-level decision: open flag and capacity per transfer candidate."""

    open: tuple        # ((candidate id, 0/1), ...)
    capacity: tuple    # ((candidate id, spaces), ...)

    @classmethod
    def from_dict(cls, caps, opened=None):
        """``caps`` maps candidate id -> capacity; open unless capacity is 0
        or ``opened`` says otherwise."""
        ids = sorted(caps)
        if opened is None:
            opened = {k: int(caps[k] > 0) for k in ids}
        return cls(tuple((k, int(opened[k])) for k in ids),
                   tuple((k, float(caps[k]) if opened[k] else 0.0) for k in ids))

    @classmethod
    def closed(cls, scenario):
        return cls.from_dict({t.id: 0.0 for t in scenario.transfers})

    @classmethod
    def full(cls, scenario):
        return cls.from_dict({t.id: t.c_max for t in scenario.transfers})

    def xi(self, cid):
        return dict(self.open).get(cid, 0)

    def cap(self, cid):
        return dict(self.capacity).get(cid, 0.0)

    def to_json(self):
        return {"transfers": [{"id": k, "open": self.xi(k), "capacity": self.cap(k)}
                              for k, _ in self.open]}

    @classmethod
    def from_json(cls, obj):
        items = obj["transfers"] if isinstance(obj, dict) else obj
        caps = {str(it["id"]): float(it.get("capacity", 0.0)) for it in items}
        opened = {str(it["id"]): int(it.get("open", caps[str(it["id"])] > 0)) for it in items}
        return cls.from_dict(caps, opened)


@dataclass(frozen=True)
class Scenario:
    name: str
    nodes: tuple
    subnetworks: tuple
    links: tuple
    modes: tuple
    transfers: tuple
    paths: tuple
    paths_explicit: bool
    demand: DemandSpec
    behavior: BehaviorParams
    budget: float
    policy: str
    solver: tuple = ()      # ((key, value), ...) solver option defaults
    notes: tuple = ()
    reference: tuple = ()   # ((key, value), ...) observed outputs to calibrate against

    def link(self, lid):
        return self._index("links")[lid]

    def mode(self, mid):
        return self._index("modes")[mid]

    def transfer(self, cid):
        return self._index("transfers")[cid]

    def subnetwork(self, sid):
        return self._index("subnetworks")[sid]

    def _index(self, attr):
        cache = self.__dict__.setdefault("_idx", {})
        if attr not in cache:
            cache[attr] = {x.id: x for x in getattr(self, attr)}
        return cache[attr]

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)

    def with_transfer_time(self, cid, fn):
        ts = tuple(t if t.id != cid else _replace(t, transfer_time=fn) for t in self.transfers)
        return self.replace(transfers=ts)


def _replace(obj, **kw):
    from dataclasses import replace
    return replace(obj, **kw)


# --- loading --------------------------------------------------------------------

def load_scenario(text):
    """Parse and validate a scenario document (JSON text or a parsed dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioParseError(f"malformed scenario document: {exc}") from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    try:
        return _build(doc)
    except (KeyError, TypeError) as exc:
        raise ScenarioParseError(f"malformed scenario document: missing or bad field {exc}") from None


def load_scenario_file(path):
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def _num(x, where):
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a number, got {x!r}") from None
    if not math.isfinite(v):
        raise ScenarioError(f"{where}: expected a finite number, got {x!r}")
    return v


def _build(doc):
    nodes = tuple(str(n) for n in doc.get("nodes", ()))
    if len(set(nodes)) != len(nodes):
        raise ScenarioError("nodes: duplicate node id")
    node_set = set(nodes)

    links_doc = doc.get("links") or []
    if not links_doc:
        raise ScenarioError("no links")

    sub_doc = doc.get("subnetworks")
    if sub_doc is None:
        sub_ids = sorted({str(l["subnetwork"]) for l in links_doc})
        subs = tuple(Subnetwork(s) for s in sub_ids)
    else:
        subs = tuple(Subnetwork(str(s["id"]), bool(s.get("auto", False)),
                                bool(s.get("access", False))) for s in sub_doc)
    sub_ix = {s.id: s for s in subs}
    if len(sub_ix) != len(subs):
        raise ScenarioError("subnetworks: duplicate id")

    links = []
    for l in links_doc:
        lid = str(l["id"])
        u, v, sn = str(l["from"]), str(l["to"]), str(l["subnetwork"])
        where = f"link {lid}"
        if u not in node_set or v not in node_set:
            raise ScenarioError(f"{where}: dangling node reference {u}->{v}")
        if u == v:
            raise ScenarioError(f"{where}: self loop at node {u}")
        if sn not in sub_ix:
            raise ScenarioError(f"{where}: unknown subnetwork {sn!r}")
        occ = _num(l.get("occupancy", 1.0), where + " occupancy")
        if occ < 1:
            raise ScenarioError(f"{where}: occupancy must be >= 1, got {occ}")
        if occ != 1.0 and not sub_ix[sn].auto:
            raise ScenarioError(f"{where}: occupancy must be 1 on non-auto links")
        cap = l.get("capacity")
        if cap is not None:
            cap = _num(cap, where + " capacity")
            if cap < 0:
                raise ScenarioError(f"{where}: negative capacity {cap}")
        links.append(Link(lid, u, v, sn, CostFn.from_dict(l["cost"], where), cap, occ))
    if len({l.id for l in links}) != len(links):
        raise ScenarioError("links: duplicate link id")

    modes = []
    for m in doc.get("modes") or []:
        mid = str(m["id"])
        kind = str(m.get("kind", "single"))
        legs = tuple(str(x) for x in m.get("legs", [mid]))
        if kind not in ("single", "combined"):
            raise ScenarioError(f"mode {mid}: kind must be single or combined")
        if kind == "single" and len(legs) != 1:
            raise ScenarioError(f"mode {mid}: single mode needs exactly one leg")
        if kind == "combined" and len(legs) < 2:
            raise ScenarioError(f"mode {mid}: combined mode needs at least two legs")
        for leg in legs:
            if leg not in sub_ix:
                raise ScenarioError(f"mode {mid}: leg references unknown subnetwork {leg!r}")
        modes.append(Mode(mid, kind, legs))
    if not modes:
        raise ScenarioError("no modes")
    mode_ix = {m.id: m for m in modes}
    if len(mode_ix) != len(modes):
        raise ScenarioError("modes: duplicate id")

    transfers = []
    for t in doc.get("transfers") or []:
        cid = str(t["id"])
        where = f"transfer {cid}"
        node, mode = str(t["node"]), str(t["mode"])
        if node not in node_set:
            raise ScenarioError(f"{where}: dangling node reference {node}")
        if mode not in mode_ix or mode_ix[mode].kind != "combined":
            raise ScenarioError(f"{where}: mode {mode!r} is not a declared combined mode")
        c_min = _num(t.get("c_min", 0.0), where + " c_min")
        c_max = _num(t["c_max"], where + " c_max")
        if c_min < 0 or c_max < 0:
            raise ScenarioError(f"{where}: negative capacity")
        if c_min > c_max:
            raise ScenarioError(f"{where}: c_min {c_min} exceeds c_max {c_max}")
        fixed = _num(t.get("fixed_cost", 0.0), where + " fixed_cost")
        unit = _num(t.get("unit_cost", 0.0), where + " unit_cost")
        if fixed < 0 or unit < 0:
            raise ScenarioError(f"{where}: negative construction cost")
        tt = CostFn.from_dict(t.get("transfer_time", {"kind": "constant", "t0": 0.0}), where)
        to_node = t.get("to_node")
        if to_node is not None:
            to_node = str(to_node)
            if to_node not in node_set or to_node == node:
                raise ScenarioError(f"{where}: bad dummy link target {to_node}")
        transfers.append(TransferCandidate(cid, node, mode, c_min, c_max, fixed, unit, tt, to_node))
    if len({t.id for t in transfers}) != len(transfers):
        raise ScenarioError("transfers: duplicate id")
    if len({(t.node, t.mode) for t in transfers}) != len(transfers):
        raise ScenarioError("transfers: more than one candidate for the same node and mode")

    demand = _build_demand(doc["demand"], node_set, mode_ix, doc.get("policy", "fixed_total"))

    beh = doc.get("behavior", {})
    behavior = BehaviorParams(
        _num(beh["theta"], "behavior.theta"),
        None if beh.get("gamma") is None else _num(beh["gamma"], "behavior.gamma"),
        None if beh.get("eta") is None else _num(beh["eta"], "behavior.eta"),
    )
    budget = _num(doc.get("budget", 0.0), "budget")
    if budget < 0:
        raise ScenarioError("budget: negative")
    policy = str(doc.get("policy", "fixed_total"))
    if policy not in POLICIES:
        raise ScenarioError(f"policy must be one of {POLICIES}, got {policy!r}")

    scn = Scenario(
        name=str(doc.get("name", "scenario")),
        nodes=nodes, subnetworks=subs, links=tuple(links), modes=tuple(modes),
        transfers=tuple(transfers), paths=(), paths_explicit=False,
        demand=demand, behavior=behavior, budget=budget, policy=policy,
        solver=tuple(sorted((doc.get("solver") or {}).items())),
        notes=tuple(str(x) for x in doc.get("notes", ())),
        reference=_reference(doc.get("reference")),
    )

    if doc.get("paths"):
        paths = tuple(_resolve_path(scn, p) for p in doc["paths"])
        if len({p.id for p in paths}) != len(paths):
            raise ScenarioError("paths: duplicate id")
        scn = scn.replace(paths=paths, paths_explicit=True)
    else:
        k = int(dict(scn.solver).get("k_paths", 3))
        gen = []
        for od in demand.od:
            for m in modes:
                gen.extend(enumerate_paths(scn, (od.origin, od.destination), m, k))
        scn = scn.replace(paths=tuple(gen), paths_explicit=False)

    _check_coverage(scn)
    return scn


def _build_demand(d, node_set, mode_ix, policy):
    ods = []
    for e in d.get("od", []):
        r, s = str(e["origin"]), str(e["destination"])
        where = f"demand od {r}->{s}"
        if r not in node_set or s not in node_set:
            raise ScenarioError(f"{where}: dangling node reference")
        q0 = _num(e.get("q0", 0.0), where + " q0")
        if q0 < 0:
            raise ScenarioError(f"{where}: negative existing demand")
        split = None
        if e.get("q0_by_mode") is not None:
            split = []
            for mid, val in e["q0_by_mode"].items():
                if mid not in mode_ix:
                    raise ScenarioError(f"{where}: unknown mode {mid!r} in q0_by_mode")
                v = _num(val, where + " q0_by_mode")
                if v < 0:
                    raise ScenarioError(f"{where}: negative per-mode demand")
                split.append((str(mid), v))
            split = tuple(sorted(split))
            if not math.isclose(sum(v for _, v in split), q0, rel_tol=1e-9, abs_tol=1e-9):
                raise ScenarioError(f"{where}: q0_by_mode does not sum to q0")
        elif policy == "fixed_mode" and q0 > 0:
            raise ScenarioError(f"{where}: fixed_mode policy needs q0_by_mode")
        ods.append(ODDemand(r, s, q0, split))
    if not ods:
        raise ScenarioError("demand: no OD pairs")
    if len({(o.origin, o.destination) for o in ods}) != len(ods):
        raise ScenarioError("demand: duplicate OD pair")

    o_sum, d_sum = {}, {}
    for o in ods:
        o_sum[o.origin] = o_sum.get(o.origin, 0.0) + o.q0
        d_sum[o.destination] = d_sum.get(o.destination, 0.0) + o.q0

    origins = []
    odoc = d.get("origins", {})
    for r in sorted(o_sum, key=_natural):
        e = odoc.get(r, {})
        o0 = _num(e.get("o0", o_sum[r]), f"origin {r} o0")
        omax = _num(e.get("omax", o0), f"origin {r} omax")
        if not 0 <= o0 <= omax:
            raise ScenarioError(f"origin {r}: need 0 <= o0 <= omax, got o0={o0} omax={omax}")
        if not math.isclose(o0, o_sum[r], rel_tol=1e-9, abs_tol=1e-9):
            raise ScenarioError(f"origin {r}: o0={o0} differs from summed OD demand {o_sum[r]}")
        origins.append((r, OriginSpec(o0, omax)))
    for r in odoc:
        if r not in o_sum:
            raise ScenarioError(f"origin {r}: not the origin of any OD pair")

    dests = []
    ddoc = d.get("destinations", {})
    for s in sorted(d_sum, key=_natural):
        e = ddoc.get(s, {})
        d0 = _num(e.get("d0", d_sum[s]), f"destination {s} d0")
        dmax = math.inf if e.get("dmax") is None else _num(e["dmax"], f"destination {s} dmax")
        if not 0 <= d0 <= dmax:
            raise ScenarioError(f"destination {s}: need 0 <= d0 <= dmax")
        if not math.isclose(d0, d_sum[s], rel_tol=1e-9, abs_tol=1e-9):
            raise ScenarioError(f"destination {s}: d0={d0} differs from summed OD demand {d_sum[s]}")
        a = _num(e.get("a", 0.0), f"destination {s} a")
        b = _num(e.get("b", 0.0), f"destination {s} b")
        if b < 0:
            raise ScenarioError(f"destination {s}: inverse demand slope b must be >= 0")
        dests.append((s, DestinationSpec(d0, dmax, a, b)))
    for s in ddoc:
        if s not in d_sum:
            raise ScenarioError(f"destination {s}: not the destination of any OD pair")
    return DemandSpec(tuple(ods), tuple(origins), tuple(dests))


def _natural(s):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def _allowed_subnets(scn, mode):
    access = {s.id for s in scn.subnetworks if s.access}
    return set(mode.legs) | access, access


def _resolve_path(scn, p):
    pid = str(p["id"])
    where = f"path {pid}"
    mid = str(p["mode"])
    if mid not in scn._index("modes"):
        raise ScenarioError(f"{where}: unknown mode {mid!r}")
    mode = scn.mode(mid)
    nodes = tuple(str(n) for n in p["nodes"])
    for n in nodes:
        if n not in set(scn.nodes):
            raise ScenarioError(f"{where}: dangling node reference {n}")
    origin = str(p.get("origin", nodes[0]))
    dest = str(p.get("destination", nodes[-1]))
    if nodes[0] != origin or nodes[-1] != dest:
        raise ScenarioError(f"{where}: node sequence does not run {origin}->{dest}")
    explicit = p.get("links")
    hops = _resolve_hops(scn, mode, nodes, explicit and [str(x) for x in explicit], where)
    return _make_path(scn, pid, mode, nodes, hops, where)


def _resolve_hops(scn, mode, nodes, explicit, where):
    """One entry per hop: ("link", link id) or ("transfer", candidate id)."""
    allowed, _ = _allowed_subnets(scn, mode)
    dummies = {(t.node, t.to_node): t.id for t in scn.transfers
               if t.mode == mode.id and t.to_node is not None}
    hops = []
    for i, (u, v) in enumerate(zip(nodes[:-1], nodes[1:])):
        if explicit is not None:
            tok = explicit[i] if i < len(explicit) else None
            if tok in scn._index("links"):
                l = scn.link(tok)
                if (l.from_node, l.to_node) != (u, v) or l.subnetwork not in allowed:
                    raise ScenarioError(f"{where}: link {tok} does not join {u}->{v} in mode {mode.id}")
                hops.append(("link", tok))
                continue
            if tok in scn._index("transfers") and dummies.get((u, v)) == tok:
                hops.append(("transfer", tok))
                continue
            raise ScenarioError(f"{where}: bad link reference {tok!r} for hop {u}->{v}")
        cands = [l.id for l in scn.links
                 if l.from_node == u and l.to_node == v and l.subnetwork in allowed]
        if (u, v) in dummies:
            cands.append(None)
        if not cands:
            raise ScenarioError(f"{where}: no link joins {u}->{v} in mode {mode.id}")
        if len(cands) > 1:
            raise ScenarioError(f"{where}: ambiguous link for hop {u}->{v}; list 'links' explicitly")
        hops.append(("link", cands[0]) if cands[0] is not None else ("transfer", dummies[(u, v)]))
    return hops


def _make_path(scn, pid, mode, nodes, hops, where):
    if len(set(nodes)) != len(nodes):
        raise ScenarioError(f"{where}: node sequence repeats a node")
    _, access = _allowed_subnets(scn, mode)
    legs, transfer_nodes = [], []
    last_end = pending = None
    for (kind, ref), (u, v) in zip(hops, zip(nodes[:-1], nodes[1:])):
        if kind == "transfer":
            if not legs or pending is not None:
                raise ScenarioError(f"{where}: misplaced dummy transfer link {ref}")
            pending = scn.transfer(ref).node
            continue
        sn = scn.link(ref).subnetwork
        if sn in access:
            continue
        if legs and legs[-1] != sn:
            transfer_nodes.append(pending if pending is not None else last_end)
        elif pending is not None:
            raise ScenarioError(f"{where}: dummy transfer without a change of subnetwork")
        if not legs or legs[-1] != sn:
            legs.append(sn)
        pending = None
        last_end = v
    if pending is not None:
        raise ScenarioError(f"{where}: path ends on a dummy transfer link")
    if tuple(legs) != mode.legs:
        raise ScenarioError(
            f"{where}: leg sequence {legs} does not match mode {mode.id} {list(mode.legs)}")
    by_node = {t.node: t.id for t in scn.transfers if t.mode == mode.id}
    tids = []
    for n in transfer_nodes:
        if n not in by_node:
            raise ScenarioError(f"{where}: transfer at node {n} has no {mode.id} candidate")
        tids.append(by_node[n])
    if mode.kind == "combined" and len(tids) != len(mode.legs) - 1:
        raise ScenarioError(f"{where}: expected {len(mode.legs) - 1} transfer(s), found {len(tids)}")
    links = tuple(ref for kind, ref in hops if kind == "link")
    return Path(pid, nodes[0], nodes[-1], mode.id, nodes, links, tuple(tids))


def _check_coverage(scn):
    single = {m.id for m in scn.modes if m.kind == "single"}
    for od in scn.demand.od:
        if od.q0 <= 0:
            continue
        ok = any(p.origin == od.origin and p.destination == od.destination and p.mode in single
                 for p in scn.paths)
        if not ok:
            raise ScenarioError(
                f"demand od {od.origin}->{od.destination}: positive demand but no single-mode path")
        for mid, v in od.mode_split().items():
            if v > 0 and scn.mode(mid).kind == "single" and not any(
                    p.origin == od.origin and p.destination == od.destination and p.mode == mid
                    for p in scn.paths):
                raise ScenarioError(
                    f"demand od {od.origin}->{od.destination}: existing {mid} demand has no path")


# --- path generation ------------------------------------------------------------

def path_free_cost(scn, path):
    c = sum(scn.link(l).cost(0.0) for l in path.links)
    return c + sum(scn.transfer(t).transfer_time(0.0) for t in path.transfers)


def enumerate_paths(scn, od, mode, k):
    """Explicit paths when the scenario declares them, otherwise up to ``k``
    loop-free least free-flow-cost paths that follow the mode's legs.

    Output order: free-flow cost, then node sequence.
    """
    if isinstance(mode, str):
        mode = scn.mode(mode)
    r, s = od
    if scn.paths_explicit:
        return [p for p in scn.paths if p.origin == r and p.destination == s and p.mode == mode.id]
    if k < 1:
        raise ValueError("k must be >= 1")

    allowed, access = _allowed_subnets(scn, mode)
    nlegs = len(mode.legs)
    g = nx.DiGraph()
    edge_hop = {}
    for layer, leg in enumerate(mode.legs):
        best = {}
        for l in scn.links:
            if l.subnetwork != leg and l.subnetwork not in access:
                continue
            key = (l.from_node, l.to_node)
            w = l.cost(0.0)
            if key not in best or (w, l.id) < best[key][:2]:
                best[key] = (w, l.id)
        for (u, v), (w, lid) in best.items():
            g.add_edge((u, layer), (v, layer), weight=w)
            edge_hop[((u, layer), (v, layer))] = ("link", lid)
    for t in scn.transfers:
        if t.mode != mode.id:
            continue
        for layer in range(nlegs - 1):
            head = (t.to_node or t.node, layer + 1)
            g.add_edge((t.node, layer), head, weight=t.transfer_time(0.0))
            edge_hop[((t.node, layer), head)] = ("transfer", t.id)

    src, dst = (r, 0), (s, nlegs - 1)
    if src not in g or dst not in g:
        return []
    found = []
    kth = None
    try:
        gen = nx.shortest_simple_paths(g, src, dst, weight="weight")
        for count, lp in enumerate(gen):
            if count > 20000:
                break
            hops = [edge_hop[(a, b)] for a, b in zip(lp[:-1], lp[1:])]
            nodes = []
            path_hops = []
            for (a, b), hop in zip(zip(lp[:-1], lp[1:]), hops):
                if not nodes:
                    nodes.append(a[0])
                if a[0] == b[0]:     # in-place transfer at a node
                    continue
                nodes.append(b[0])
                path_hops.append(hop)
            if len(set(nodes)) != len(nodes):
                continue
            try:
                p = _make_path(scn, "tmp", mode, tuple(nodes), path_hops, "generated path")
            except ScenarioError:
                continue
            cost = path_free_cost(scn, p)
            if kth is not None and cost > kth + 1e-12:
                break
            found.append((cost, p.nodes, p))
            if len(found) >= k and kth is None:
                kth = sorted(found, key=lambda x: (x[0], x[1]))[k - 1][0]
    except nx.NetworkXNoPath:
        return []
    found.sort(key=lambda x: (x[0], x[1]))
    out = []
    for rank, (_, _, p) in enumerate(found[:k]):
        out.append(Path(f"{r}-{s}-{mode.id}-{rank + 1}", p.origin, p.destination, p.mode,
                        p.nodes, p.links, p.transfers))
    return out


# --- serialisation -------------------------------------------------------------

def scenario_to_dict(scn):
    def clean(x):
        return None if x is None or (isinstance(x, float) and math.isinf(x)) else x

    doc = {
        "name": scn.name,
        "nodes": list(scn.nodes),
        "subnetworks": [{"id": s.id, "auto": s.auto, "access": s.access} for s in scn.subnetworks],
        "links": [],
        "modes": [{"id": m.id, "kind": m.kind, "legs": list(m.legs)} for m in scn.modes],
        "transfers": [],
        "paths": [],
        "demand": {
            "od": [],
            "origins": {r: {"o0": o.o0, "omax": o.omax} for r, o in scn.demand.origins},
            "destinations": {s: {"d0": d.d0, "dmax": clean(d.dmax), "a": d.a, "b": d.b}
                             for s, d in scn.demand.destinations},
        },
        "behavior": {"theta": scn.behavior.theta, "gamma": scn.behavior.gamma,
                     "eta": scn.behavior.eta},
        "budget": scn.budget,
        "policy": scn.policy,
    }
    for l in scn.links:
        e = {"id": l.id, "from": l.from_node, "to": l.to_node, "subnetwork": l.subnetwork,
             "cost": l.cost.to_dict()}
        if l.capacity is not None:
            e["capacity"] = l.capacity
        if l.occupancy != 1.0:
            e["occupancy"] = l.occupancy
        doc["links"].append(e)
    for t in scn.transfers:
        e = {"id": t.id, "node": t.node, "mode": t.mode, "c_min": t.c_min, "c_max": t.c_max,
             "fixed_cost": t.fixed_cost, "unit_cost": t.unit_cost,
             "transfer_time": t.transfer_time.to_dict()}
        if t.to_node is not None:
            e["to_node"] = t.to_node
        doc["transfers"].append(e)
    if scn.paths_explicit:
        for p in scn.paths:
            hops = _hops_of(scn, p)
            doc["paths"].append({"id": p.id, "origin": p.origin, "destination": p.destination,
                                 "mode": p.mode, "nodes": list(p.nodes), "links": hops})
    else:
        del doc["paths"]
    for od in scn.demand.od:
        e = {"origin": od.origin, "destination": od.destination, "q0": od.q0}
        if od.q0_by_mode is not None:
            e["q0_by_mode"] = dict(od.q0_by_mode)
        doc["demand"]["od"].append(e)
    if scn.solver:
        doc["solver"] = dict(scn.solver)
    if scn.notes:
        doc["notes"] = list(scn.notes)
    if scn.reference:
        doc["reference"] = {k: list(v) if isinstance(v, tuple) else v for k, v in scn.reference}
    return doc


REFERENCE_KEYS = ("before_flows", "after_flows", "before_ttt", "after_ttt", "delta_ttt",
                  "free_params")


def _reference(obj):
    if not obj:
        return ()
    if not isinstance(obj, dict):
        raise ScenarioError("reference must be an object")
    out = []
    for k, v in sorted(obj.items()):
        if k not in REFERENCE_KEYS:
            raise ScenarioError(f"reference: unknown key {k!r}")
        if k == "free_params":
            out.append((k, tuple(str(x) for x in v)))
        elif isinstance(v, list):
            out.append((k, tuple(_num(x, f"reference.{k}") for x in v)))
        else:
            out.append((k, _num(v, f"reference.{k}")))
    return tuple(out)


def _hops_of(scn, p):
    """Link/dummy-transfer token per hop of ``p``."""
    out, li = [], 0
    dummies = {(t.node, t.to_node): t.id for t in scn.transfers if t.to_node is not None}
    for u, v in zip(p.nodes[:-1], p.nodes[1:]):
        if li < len(p.links):
            l = scn.link(p.links[li])
            if (l.from_node, l.to_node) == (u, v):
                out.append(l.id)
                li += 1
                continue
        out.append(dummies[(u, v)])
    return out


def dump_scenario(scn):
    return json.dumps(scenario_to_dict(scn), indent=2, sort_keys=False)


# --- design application ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ActiveNetwork:
    """Scenario with a design applied, flattened to arrays.

    Paths are ordered by OD pair (scenario order), then mode (scenario order),
    then declaration order, so OD-mode groups and OD blocks are contiguous.
    """

    scenario: Scenario
    design: Design
    paths: tuple
    transfer_ids: tuple
    od_index: tuple            # indices into scenario.demand.od with >= 1 active path
    origin_ids: tuple
    dest_ids: tuple
    arrays: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["arrays"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def behavior(self):
        return self.scenario.behavior

    @property
    def n_paths(self):
        return len(self.paths)

    def with_behavior(self, behavior):
        return apply_design(self.scenario.replace(behavior=behavior), self.design)


def check_design_refs(scn, design):
    known = {t.id for t in scn.transfers}
    for cid, _ in design.open:
        if cid not in known:
            raise ScenarioError(f"design references unknown transfer candidate {cid!r}")


def apply_design(scn, design):
    """Open the designed transfer nodes and drop paths through closed ones."""
    check_design_refs(scn, design)
    open_caps = {}
    for t in scn.transfers:
        xi = design.xi(t.id)
        cap = design.cap(t.id)
        if xi not in (0, 1):
            raise ScenarioError(f"transfer {t.id}: open flag must be 0 or 1")
        if xi == 1:
            if not (t.c_min - 1e-9 <= cap <= t.c_max + 1e-9):
                raise ScenarioError(
                    f"transfer {t.id}: capacity {cap} outside [{t.c_min}, {t.c_max}]")
            if cap > 0:
                open_caps[t.id] = cap
    paths = [p for p in scn.paths if all(tid in open_caps for tid in p.transfers)]

    od_list = scn.demand.od
    mode_order = {m.id: i for i, m in enumerate(scn.modes)}
    od_pos = {(o.origin, o.destination): i for i, o in enumerate(od_list)}
    decl = {p.id: i for i, p in enumerate(paths)}
    paths.sort(key=lambda p: (od_pos.get((p.origin, p.destination), len(od_list)),
                              mode_order[p.mode], decl[p.id]))
    paths = [p for p in paths if (p.origin, p.destination) in od_pos]

    origin_ids = tuple(r for r, _ in scn.demand.origins)
    dest_ids = tuple(s for s, _ in scn.demand.destinations)
    link_pos = {l.id: i for i, l in enumerate(scn.links)}
    transfer_ids = tuple(t.id for t in scn.transfers if t.id in open_caps)
    tr_pos = {t: i for i, t in enumerate(transfer_ids)}

    g_ptr, g_od, g_mode, od_gptr, od_index = [0], [], [], [0], []
    for i, p in enumerate(paths):
        key = (od_pos[(p.origin, p.destination)], p.mode)
        if i == 0 or key != prev:
            if i > 0:
                g_ptr.append(i)
            g_od.append(key[0])
            g_mode.append(key[1])
            if not od_index or od_index[-1] != key[0]:
                if od_index:
                    od_gptr.append(len(g_od) - 1)
                od_index.append(key[0])
        prev = key
    if paths:
        g_ptr.append(len(paths))
        od_gptr.append(len(g_od))
    else:
        g_ptr = [0]
        od_gptr = [0]

    # remap group od indices to active-od positions
    act_pos = {k: i for i, k in enumerate(od_index)}
    g_od_act = [act_pos[k] for k in g_od]

    lk = scn.links
    tr = [scn.transfer(t) for t in transfer_ids]
    auto = {s.id for s in scn.subnetworks if s.auto}

    def csr(rows):
        ptr = np.zeros(len(rows) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(r) for r in rows])
        idx = np.array([x for r in rows for x in r], dtype=np.int64)
        return ptr, idx

    p_lptr, p_lidx = csr([[link_pos[l] for l in p.links] for p in paths])
    p_tptr, p_tidx = csr([[tr_pos[t] for t in p.transfers] for p in paths])

    od_acts = [od_list[k] for k in od_index]
    orig_pos = {r: i for i, r in enumerate(origin_ids)}
    dest_pos = {s: i for i, s in enumerate(dest_ids)}
    g_q0 = []
    for gi, mid in enumerate(g_mode):
        split = od_acts[g_od_act[gi]].mode_split()
        g_q0.append(split.get(mid, 0.0))

    origins = dict(scn.demand.origins)
    dests = dict(scn.demand.destinations)
    arrays = dict(
        lk_t0=np.array([l.cost.t0 for l in lk]),
        lk_alpha=np.array([l.cost.alpha for l in lk]),
        lk_kappa=np.array([l.cost.kappa for l in lk]),
        lk_beta=np.array([l.cost.beta for l in lk]),
        lk_occ=np.array([l.occupancy if l.subnetwork in auto else 1.0 for l in lk]),
        tr_t0=np.array([t.transfer_time.t0 for t in tr]),
        tr_alpha=np.array([t.transfer_time.alpha for t in tr]),
        tr_kappa=np.array([t.transfer_time.kappa for t in tr]),
        tr_beta=np.array([t.transfer_time.beta for t in tr]),
        tr_cap=np.array([open_caps[t.id] for t in tr]),
        p_lptr=p_lptr, p_lidx=p_lidx, p_tptr=p_tptr, p_tidx=p_tidx,
        g_ptr=np.array(g_ptr, dtype=np.int64),
        g_od=np.array(g_od_act, dtype=np.int64),
        g_q0=np.array(g_q0, dtype=float),
        od_gptr=np.array(od_gptr, dtype=np.int64),
        od_origin=np.array([orig_pos[o.origin] for o in od_acts], dtype=np.int64),
        od_dest=np.array([dest_pos[o.destination] for o in od_acts], dtype=np.int64),
        od_q0=np.array([o.q0 for o in od_acts], dtype=float),
        or_cap=np.array([origins[r].omax - origins[r].o0 for r in origin_ids]),
        de_cap=np.array([dests[s].dmax - dests[s].d0 for s in dest_ids]),
        de_a=np.array([dests[s].a for s in dest_ids]),
        de_b=np.array([dests[s].b for s in dest_ids]),
    )
    arrays["g_mode"] = tuple(g_mode)
    arrays["path_group"] = np.repeat(np.arange(len(g_mode)), np.diff(arrays["g_ptr"])) \
        if g_mode else np.zeros(0, dtype=np.int64)
    for v in arrays.values():
        if isinstance(v, np.ndarray):
            v.setflags(write=False)
    return ActiveNetwork(scn, design, tuple(paths), transfer_ids, tuple(od_index),
                         origin_ids, dest_ids, arrays)
