"""Upper level: budget-feasible choice of transfer locations and capacities.

A chromosome holds one open bit and one capacity gene per transfer
candidate.  Capacity genes are integers counting discretisation steps above
``c_min``.  Fitness is the total generated demand of the lower-level
equilibrium, cached per distinct design so repeated chromosomes are free.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import SolverOptions, solve_lower_level, write_rows
from .netmodel import Design, ScenarioError, apply_design


def construction_cost(design: Design, scenario) -> float:
    g = 0.0
    for t in scenario.transfers:
        if design.xi(t.id):
            g += t.fixed_cost + t.unit_cost * design.cap(t.id)
    return g


def check_feasible(design: Design, scenario) -> list:
    """Violated upper-level constraints as readable strings; empty if none."""
    out = []
    known = {t.id for t in scenario.transfers}
    for cid, _ in design.open:
        if cid not in known:
            out.append(f"unknown transfer candidate {cid}")
    for t in scenario.transfers:
        xi, cap = design.xi(t.id), design.cap(t.id)
        if xi not in (0, 1):
            out.append(f"binary: open flag of {t.id} is {xi}")
            continue
        if xi == 1 and not (t.c_min - 1e-9 <= cap <= t.c_max + 1e-9):
            out.append(f"capacity bounds: {t.id} capacity {cap:g} outside [{t.c_min:g}, {t.c_max:g}]")
        if xi == 0 and cap != 0:
            out.append(f"capacity bounds: {t.id} is closed but has capacity {cap:g}")
    g = construction_cost(design, scenario)
    if g > scenario.budget * (1 + 1e-12) + 1e-9:
        out.append(f"budget: cost {g:.6g} exceeds budget {scenario.budget:.6g}")
    return out


def fitness(design: Design, scenario, opts=None, return_active=False):
    """Total generated trips of the lower-level equilibrium under ``design``;
    ``-inf`` when the solve does not converge."""
    act = apply_design(scenario, design)
    st = solve_lower_level(act, opts=opts or SolverOptions.from_scenario(scenario))
    fit = st.generated if st.converged else -math.inf
    return (fit, st, act) if return_active else (fit, st)


@dataclass(frozen=True)
class GaParams:
    population: int = 30
    generations: int = 100
    crossover: float = 0.8
    mutation: float = 0.1
    tournament: int = 3
    elitism: int = 2
    step: float = 50.0
    seed: int = 42
    infeasible: str = "repair"     # or "penalty"
    penalty: float = 1e-3          # fitness units per currency unit over budget

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not (0 <= self.crossover <= 1 and 0 <= self.mutation <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if not self.step > 0:
            raise ValueError("capacity step must be positive")
        if self.infeasible not in ("repair", "penalty"):
            raise ValueError("infeasible handling must be repair or penalty")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must lie in [0, population]")
        if self.tournament < 1 or self.generations < 0:
            raise ValueError("bad tournament size or generation count")


@dataclass
class GaResult:
    best_design: Design
    best_fitness: float
    history: list            # (generation, best, mean, evaluations)
    evaluations: int
    best_state: object = field(repr=False, default=None)
    best_cost: float = 0.0

    def write(self, outdir, scenario):
        import os
        os.makedirs(outdir, exist_ok=True)
        write_rows(os.path.join(outdir, "ga_history.csv"), ["generation", "best", "mean", "evals"],
                   self.history)
        doc = {"transfers": [{"id": t.id, "open": self.best_design.xi(t.id),
                              "capacity": self.best_design.cap(t.id)} for t in scenario.transfers],
               "G": self.best_cost, "fitness": self.best_fitness}
        with open(os.path.join(outdir, "best_design.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


class Encoding:
    """Chromosome layout: [open bits..., capacity step indices...]."""

    def __init__(self, scenario, step):
        self.cands = scenario.transfers
        self.step = step
        self.levels = np.array([int(math.floor((t.c_max - t.c_min) / step + 1e-9)) + 1
                                for t in self.cands])

    def capacity(self, i, gene):
        t = self.cands[i]
        return min(t.c_min + gene * self.step, t.c_max)

    def decode(self, chrom):
        n = len(self.cands)
        caps, opened = {}, {}
        for i, t in enumerate(self.cands):
            opened[t.id] = int(chrom[i])
            caps[t.id] = self.capacity(i, int(chrom[n + i])) if chrom[i] else 0.0
        # an open candidate at zero capacity is the same design as a closed one
        for k in caps:
            if opened[k] and caps[k] == 0:
                opened[k] = 0
        return Design.from_dict(caps, opened)

    def encode(self, design):
        n = len(self.cands)
        chrom = np.zeros(2 * n, dtype=np.int64)
        for i, t in enumerate(self.cands):
            xi = design.xi(t.id)
            chrom[i] = xi
            if xi:
                g = int(round((design.cap(t.id) - t.c_min) / self.step))
                if not 0 <= g < self.levels[i] or abs(self.capacity(i, g) - design.cap(t.id)) > 1e-9:
                    raise ValueError(f"capacity of {t.id} is not on the discretisation grid")
                chrom[n + i] = g
        return chrom

    def random(self, rng):
        n = len(self.cands)
        bits = rng.integers(0, 2, n)
        genes = np.array([rng.integers(0, lv) for lv in self.levels], dtype=np.int64)
        return np.concatenate([bits, genes])


def _repair(chrom, enc, scenario):
    """Shrink open capacities proportionally (on the grid) until within budget;
    close the most expensive candidate if even minimum capacities do not fit."""
    n = len(enc.cands)
    chrom = chrom.copy()
    for _ in range(10 * n + 100):
        des = enc.decode(chrom)
        g = construction_cost(des, scenario)
        if g <= scenario.budget * (1 + 1e-12):
            return chrom
        open_idx = [i for i in range(n) if chrom[i]]
        var = sum(enc.cands[i].unit_cost * (enc.capacity(i, chrom[n + i]) - enc.cands[i].c_min)
                  for i in open_idx)
        fixed = g - var
        if var <= 0 or fixed > scenario.budget:
            worst = max(open_idx, key=lambda i: (enc.cands[i].fixed_cost
                                                 + enc.cands[i].unit_cost * enc.capacity(i, chrom[n + i]), -i))
            chrom[worst] = 0
            continue
        ratio = max(0.0, (scenario.budget - fixed) / var)
        for i in open_idx:
            chrom[n + i] = int(math.floor(chrom[n + i] * ratio + 1e-9))
        # floor may still leave a hair over budget on ties; one step down fixes it
        if construction_cost(enc.decode(chrom), scenario) > scenario.budget * (1 + 1e-12):
            j = max(open_idx, key=lambda i: (chrom[n + i], -i))
            chrom[n + j] = max(0, chrom[n + j] - 1)
    return np.zeros_like(chrom)


def ga_solve(scenario, params: GaParams = GaParams(), opts=None, evaluator=None) -> GaResult:
    """Genetic search over designs; deterministic for a given seed.

    ``evaluator`` maps a list of designs to fitness values (it may run them in
    parallel); by default designs are solved one after another.
    """
    if not scenario.transfers:
        raise ScenarioError("scenario has no transfer candidates")
    rng = np.random.default_rng(params.seed)
    enc = Encoding(scenario, params.step)
    n = len(enc.cands)
    opts = opts or SolverOptions.from_scenario(scenario)
    cache = {}
    states = {}

    def solve_many(designs):
        todo = []
        for d in designs:
            if d not in cache and d not in todo:
                todo.append(d)
        if todo:
            if evaluator is not None:
                vals = evaluator(todo)
                for d, v in zip(todo, vals):
                    cache[d] = v
            else:
                for d in todo:
                    fit, st = fitness(d, scenario, opts)
                    cache[d] = fit
                    states[d] = st
        return [cache[d] for d in designs]

    def score(chroms):
        designs = [enc.decode(c) for c in chroms]
        vals = np.array(solve_many(designs), dtype=float)
        if params.infeasible == "penalty":
            over = np.array([max(0.0, construction_cost(d, scenario) - scenario.budget)
                             for d in designs])
            vals = vals - params.penalty * over
        return vals

    def fix(c):
        return _repair(c, enc, scenario) if params.infeasible == "repair" else c

    pop = [np.zeros(2 * n, dtype=np.int64)]          # the empty design is always feasible
    while len(pop) < params.population:
        pop.append(fix(enc.random(rng)))
    fit = score(pop)
    history = []
    best_i = int(np.argmax(fit))
    best_c, best_f = pop[best_i].copy(), float(fit[best_i])
    history.append((0, best_f, float(np.mean(fit[np.isfinite(fit)])) if np.isfinite(fit).any()
                    else -math.inf, len(cache)))

    def tournament():
        idx = rng.integers(0, len(pop), params.tournament)
        return pop[int(idx[np.argmax(fit[idx])])]

    for gen in range(1, params.generations + 1):
        order = np.argsort(-fit, kind="stable")
        children = [pop[i].copy() for i in order[:params.elitism]]
        while len(children) < params.population:
            a, b = tournament(), tournament()
            if rng.random() < params.crossover:
                mask = rng.random(2 * n) < 0.5
                c1 = np.where(mask, a, b)
                c2 = np.where(mask, b, a)
            else:
                c1, c2 = a.copy(), b.copy()
            for c in (c1, c2):
                for i in range(n):
                    if rng.random() < params.mutation:
                        c[i] = 1 - c[i]
                    if rng.random() < params.mutation:
                        # local move most of the time, occasional jump
                        if rng.random() < 0.5:
                            c[n + i] = int(np.clip(c[n + i] + rng.choice((-1, 1)), 0,
                                                   enc.levels[i] - 1))
                        else:
                            c[n + i] = int(rng.integers(0, enc.levels[i]))
                children.append(fix(c))
        pop = children[:params.population]
        fit = score(pop)
        i = int(np.argmax(fit))
        if fit[i] > best_f:
            best_c, best_f = pop[i].copy(), float(fit[i])
        finite = fit[np.isfinite(fit)]
        history.append((gen, best_f, float(finite.mean()) if finite.size else -math.inf, len(cache)))

    best_d = enc.decode(best_c)
    st = states.get(best_d)
    if st is None:
        _, st = fitness(best_d, scenario, opts)
    return GaResult(best_d, best_f, history, len(cache), st, construction_cost(best_d, scenario))


def grid_designs(scenario, step):
    """Every design on the discretisation grid (all open/closed combinations)."""
    enc = Encoding(scenario, step)
    per = []
    for i, t in enumerate(enc.cands):
        opts = [(t.id, 0, 0.0)]
        opts += [(t.id, 1, enc.capacity(i, g)) for g in range(enc.levels[i])]
        per.append(opts)
    import itertools
    out = []
    for combo in itertools.product(*per):
        caps = {cid: cap for cid, _, cap in combo}
        opened = {cid: xi for cid, xi, _ in combo}
        d = Design.from_dict(caps, opened)
        if opened and any(opened[k] and caps[k] == 0 for k in caps):
            continue
        out.append(d)
    return out
