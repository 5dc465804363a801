"""Command-line entry point.

    transfernet validate SCENARIO
    transfernet solve SCENARIO [--design FILE]
    transfernet design SCENARIO [--seed N] [GA flags]
    transfernet sweep SCENARIO --param {theta,capacity} --from A --to B --step H
    transfernet experiment SCENARIO --name {table1,fig3a,fig3b,fig4,fig6}

Exit codes: 0 success, 1 invalid scenario or inputs, 2 solver did not
converge, 3 bad usage.  Every failure prints one ``error: <kind>: <reason>``
line on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from . import paradoxlab as lab
from ._accel import backend
from .design import GaParams, construction_cost, fitness, ga_solve
from .equilibrium import SolverOptions, solve_lower_level, write_state
from .netmodel import BehaviorParams, Design, ScenarioError, apply_design, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_USAGE = 0, 1, 2, 3
EXPERIMENTS = ("table1", "fig3a", "fig3b", "fig4", "fig6")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="transfernet", description="Multimodal transfer-capacity design solver.")
    p.add_argument("--version", action="version", version=f"transfernet {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("scenario")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--theta", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--eta", type=float)
        sp.add_argument("--budget", type=float)
        sp.add_argument("--cap", action="append", default=[], metavar="ID=VALUE",
                        help="capacity of a transfer candidate (repeatable)")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-outer", type=int)
        sp.add_argument("--max-inner", type=int)
        sp.add_argument("--step-rule", choices=("armijo", "msa"))

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")

    s = sub.add_parser("solve", help="solve the lower level for one design")
    common(s)
    s.add_argument("--design", help="design JSON file; default opens every candidate at c_max")

    d = sub.add_parser("design", help="genetic search for the best design")
    common(d)
    for f in dataclasses.fields(GaParams):
        if f.name == "seed":
            continue
        kind = str if f.name == "infeasible" else type(f.default)
        d.add_argument("--" + f.name.replace("_", "-"), type=kind, default=f.default)

    w = sub.add_parser("sweep", help="theta or capacity sweep")
    common(w)
    w.add_argument("--param", required=True, choices=("theta", "capacity"))
    w.add_argument("--from", dest="start", type=float, required=True)
    w.add_argument("--to", dest="stop", type=float, required=True)
    w.add_argument("--step", type=float, required=True)
    w.add_argument("--transfer", help="candidate swept by a capacity sweep")

    e = sub.add_parser("experiment", help="reproduce a named experiment")
    common(e)
    e.add_argument("--name", required=True, choices=EXPERIMENTS)
    e.add_argument("--from", dest="start", type=float)
    e.add_argument("--to", dest="stop", type=float)
    e.add_argument("--step", type=float)
    return p


def grid(start, stop, step):
    """Inclusive arithmetic grid, robust to decimal steps."""
    if not step > 0:
        raise UsageError("--step must be positive")
    if stop < start:
        raise UsageError("--to must not be below --from")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 10)


# --- helpers ------------------------------------------------------------------------

def _load(path, args):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror or exc}") from None
    scn = load_scenario(raw.decode("utf-8"))
    if getattr(args, "theta", None) is not None or getattr(args, "gamma", None) is not None \
            or getattr(args, "eta", None) is not None:
        b = scn.behavior
        scn = scn.replace(behavior=BehaviorParams(
            args.theta if args.theta is not None else b.theta,
            args.gamma if args.gamma is not None else b.gamma,
            args.eta if args.eta is not None else b.eta))
    if getattr(args, "budget", None) is not None:
        if args.budget < 0:
            raise ScenarioError("budget must be non-negative")
        scn = scn.replace(budget=float(args.budget))
    return scn, hashlib.sha256(raw).hexdigest()


def _opts(scn, args):
    return SolverOptions.from_scenario(scn, tol=args.tol, max_outer=args.max_outer,
                                       max_inner=args.max_inner, step_rule=args.step_rule)


def _caps(scn, args, base):
    caps = {t.id: base.cap(t.id) for t in scn.transfers}
    for item in args.cap:
        if "=" not in item:
            raise UsageError(f"--cap expects ID=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        if k not in caps:
            raise ScenarioError(f"unknown transfer candidate {k}")
        try:
            caps[k] = float(v)
        except ValueError:
            raise UsageError(f"--cap value for {k} is not a number") from None
    return Design.from_dict(caps)


def _behavior_dict(b):
    return {"theta": b.theta, "gamma": b.mode_scale, "eta": b.dest_scale}


def _design_dict(d):
    return {k: {"open": d.xi(k), "capacity": d.cap(k)} for k, _ in d.open}


def _meta(args, scn, digest, opts, extra, t0):
    meta = {
        "command": args.command,
        "scenario": os.path.abspath(args.scenario),
        "scenario_sha256": digest,
        "seed": args.seed,
        "behavior": _behavior_dict(scn.behavior),
        "budget": scn.budget,
        "policy": scn.policy,
        "solver": dataclasses.asdict(opts),
        "threads": lab.worker_count(),
        "versions": {"transfernet": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "backend": backend()},
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    try:
        import scipy
        meta["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    if backend() == "numba":
        import numba
        meta["versions"]["numba"] = numba.__version__
    meta.update(extra)
    return meta


def _write_meta(outdir, meta):
    with open(os.path.join(outdir, "run_meta.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# --- subcommands -----------------------------------------------------------------------

def cmd_validate(args):
    scn, _ = _load(args.scenario, args)
    print(f"ok nodes={len(scn.nodes)} links={len(scn.links)} paths={len(scn.paths)} "
          f"transfers={len(scn.transfers)} ods={len(scn.demand.od)}")
    return EXIT_OK, None


def cmd_solve(args, scn, opts):
    if args.design:
        try:
            with open(args.design, encoding="utf-8") as fh:
                base = Design.from_json(json.load(fh))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ScenarioError(f"bad design file: {exc}") from None
    else:
        base = Design.full(scn)
    design = _caps(scn, args, base)
    act = apply_design(scn, design)
    st = solve_lower_level(act, opts=opts)
    write_state(st, act, args.out)
    extra = {"design": _design_dict(design), "converged": st.converged, "iterations": st.iterations,
             "gap": st.gap, "generated": st.generated}
    return (EXIT_OK if st.converged else EXIT_NOCONV), extra


def cmd_design(args, scn, opts):
    kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(GaParams) if f.name != "seed"}
    params = GaParams(seed=args.seed, **kw)
    res = ga_solve(scn, params, opts, evaluator=lambda ds: [
        v[0] for v in lab.pmap(lambda d: fitness(d, scn, opts), ds)])
    res.write(args.out, scn)
    extra = {"ga": dataclasses.asdict(params), "best_design": _design_dict(res.best_design),
             "best_fitness": res.best_fitness, "construction_cost": res.best_cost,
             "evaluations": res.evaluations}
    ok = math.isfinite(res.best_fitness)
    return (EXIT_OK if ok else EXIT_NOCONV), extra


def _series_extra(s):
    return {"values": s.values, "crossover": s.crossover, "regions": s.regions,
            "minimizer": s.minimizer, "all_converged": bool(np.all(s.converged))}


def _sweep(args, scn, opts, param, values, fname):
    design = _caps(scn, args, Design.full(scn))
    if param == "theta":
        s = lab.sweep_theta(scn, design, values, opts=opts)
    else:
        tid = args.transfer or lab._only_transfer(scn, None)
        s = lab.sweep_capacity(scn, values, transfer=tid, opts=opts, base=design)
    s.write_csv(os.path.join(args.out, fname))
    extra = {"param": param, "design": _design_dict(design), **_series_extra(s)}
    return (EXIT_OK if np.all(s.converged) else EXIT_NOCONV), extra


def cmd_sweep(args, scn, opts):
    values = grid(args.start, args.stop, args.step)
    if args.param == "theta" and values[0] <= 0:
        raise UsageError("theta values must be positive")
    fname = "fig3a.csv" if args.param == "theta" else "fig3b.csv"
    return _sweep(args, scn, opts, args.param, values, fname)


def _range(args, start, stop, step):
    return grid(args.start if args.start is not None else start,
                args.stop if args.stop is not None else stop,
                args.step if args.step is not None else step)


def _compare_after(rep, ref):
    """Relative gaps of the predicted after-row to the reference one; flows
    are compared against max(reference, 1) so a zero reference stays finite."""
    out = {}
    if "after_flows" in ref:
        r = np.asarray(ref["after_flows"], dtype=float)
        m = rep.after_flows[:len(r)]
        out["flows"] = m
        out["reference_flows"] = r
        out["flow_rel_gap"] = np.abs(m - r) / np.maximum(np.abs(r), 1.0)
    if "after_ttt" in ref:
        out["ttt_rel_gap"] = abs(rep.after_ttt - ref["after_ttt"]) / abs(ref["after_ttt"])
    gaps = list(out.get("flow_rel_gap", [])) + [out.get("ttt_rel_gap", 0.0)]
    out["within_10pct"] = bool(max(gaps) <= 0.1)
    if not out["within_10pct"]:
        off = [pid for pid, g in zip(rep.path_ids, out.get("flow_rel_gap", [])) if g > 0.1]
        out["note"] = (f"after flows on paths {off} differ from the reference by more than 10%; "
                       "logit keeps every open path positive, so a zero reference flow is "
                       "unreachable, and the other gaps are prediction error of the model "
                       "calibrated to the before-row")
    return out


def cmd_experiment(args, scn, opts):
    name = args.name
    out = args.out
    if name == "table1":
        design = _caps(scn, args, Design.full(scn))
        ref = dict(scn.reference)
        cal_extra = None
        if any(k in ref for k in ("before_flows", "before_ttt")):
            targets = {k: ref[k] for k in ("before_flows", "before_ttt") if k in ref}
            cal = lab.calibrate(scn, targets, ref.get("free_params", ("theta", "tau")),
                                design=design, opts=opts)
            scn = cal.scenario
            cal_extra = {"params": cal.params, "residual": cal.residual, "poor": cal.poor,
                         "targets": targets}
        rep = lab.before_after(scn, design, opts=opts)
        lab.write_table1(rep, os.path.join(out, "table1.csv"))
        ok = rep.before_state.converged and rep.after_state.converged
        extra = {"design": _design_dict(design), "before_ttt": rep.before_ttt,
                 "after_ttt": rep.after_ttt, "delta_ttt": rep.magnitude, "paradox": rep.flag,
                 "before_flows": rep.before_flows, "after_flows": rep.after_flows,
                 "all_converged": ok}
        if cal_extra is not None:
            extra["calibration"] = cal_extra
        if "after_flows" in ref or "after_ttt" in ref:
            extra["after_vs_reference"] = _compare_after(rep, ref)
        return (EXIT_OK if ok else EXIT_NOCONV), extra
    if name == "fig3a":
        return _sweep(args, scn, opts, "theta", _range(args, 0.1, 0.9, 0.01), "fig3a.csv")
    if name == "fig3b":
        args.transfer = lab._only_transfer(scn, None)
        hi = scn.transfer(args.transfer).c_max
        return _sweep(args, scn, opts, "capacity", _range(args, 100.0, hi, 50.0), "fig3b.csv")
    if name == "fig4":
        tid = lab._only_transfer(scn, None)
        caps = _range(args, 100.0, scn.transfer(tid).c_max, 50.0)
        s = lab.share_sweep(scn, caps, transfer=tid, opts=opts)
        s.write_csv(os.path.join(out, "fig4.csv"))
        return (EXIT_OK if np.all(s.converged) else EXIT_NOCONV), _series_extra(s)
    # fig6
    bike, car = lab._bike_car_ids(scn, None, None)
    step = args.step if args.step is not None else 50.0
    tb, tc = scn.transfer(bike), scn.transfer(car)
    g = lab.transit_share_grid(scn, grid(tb.c_min, tb.c_max, step), grid(tc.c_min, tc.c_max, step),
                               bike, car, opts=opts)
    g.write_csv(os.path.join(out, "fig6.csv"))
    best = g.optimum_set()
    extra = {"bike": bike, "car": car, "step": step,
             "plateau_share": float(g.share[-1, -1]),
             "optimum_set": [{"bike_cap": b, "car_cap": c, "fitness": f,
                              "cost": construction_cost(lab._design_with(scn, {bike: b, car: c}), scn)}
                             for b, c, f in best],
             "all_converged": bool(np.all(np.isfinite(g.fitness)))}
    return (EXIT_OK if extra["all_converged"] else EXIT_NOCONV), extra


COMMANDS = {"solve": cmd_solve, "design": cmd_design, "sweep": cmd_sweep,
            "experiment": cmd_experiment}


def run(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if args.command == "validate":
            return cmd_validate(args)[0]
        scn, digest = _load(args.scenario, args)
        opts = _opts(scn, args)
        os.makedirs(args.out, exist_ok=True)
        code, extra = COMMANDS[args.command](args, scn, opts)
        _write_meta(args.out, _meta(args, scn, digest, opts, extra, t0))
        if code == EXIT_NOCONV:
            print("error: nonconvergence: at least one lower-level solve hit its iteration limit",
                  file=sys.stderr)
        return code
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, ValueError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
