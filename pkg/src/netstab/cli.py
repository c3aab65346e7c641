"""Command-line interface.

Subcommands: validate, analyze, solve-uep, synthesize, simulate,
gridlock-demo, reproduce-paper.  All print JSON to stdout.  Exit codes:
0 = all checks passed, 1 = a certificate or acceptance check failed,
2 = input error (bad file, bad flags, out-of-domain data).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .control import controller_from_dict, load_controller, save_controller
from .diagrams import audit_demand_curve, audit_supply_margin, load_diagrams
from .equilibrium import solve_uep
from .errors import DimensionError, DomainError, MisuseError
from .harness import (ControlSpec, DisturbanceSpec, ScenarioConfig,
                      estimate_decay, export_csv, gridlock_demo,
                      mass_balance_residuals, reproduce_suite, run_scenario)
from .network import find_cycle, load_network, validate_spec
from .presets import (reference_diagrams, reference_network, reference_vstar,
                      three_cell_cycle)
from .stability import certify, contraction_check


class _InputError(Exception):
    """Anything wrong with the user's files or flags (exit code 2)."""


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _emit(doc: dict) -> None:
    print(json.dumps(_jsonable(doc), indent=2))


def _load_pair(args):
    """Network and diagrams from --network/--diagrams, defaulting to the benchmark."""
    try:
        spec = load_network(args.network) if args.network else reference_network()
        ds = load_diagrams(args.diagrams) if args.diagrams else reference_diagrams()
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise _InputError(str(exc)) from exc
    if ds.n != spec.n:
        raise _InputError(
            f"network has {spec.n} cells but diagrams describe {ds.n}")
    return spec, ds


def _load_ctrl(args):
    if not getattr(args, "controller", None):
        return None
    try:
        return load_controller(args.controller)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise _InputError(str(exc)) from exc


def _parse_vstar(args, spec):
    if getattr(args, "vstar", None):
        try:
            v = np.array([float(tok) for tok in args.vstar.split(",")])
        except ValueError as exc:
            raise _InputError(f"--vstar must be comma-separated floats: {exc}")
        if v.shape != (spec.n,):
            raise _InputError(f"--vstar needs {spec.n} entries, got {len(v)}")
        return v
    if args.network:
        raise _InputError("a custom network needs --vstar (equilibrium inflows)")
    return reference_vstar()


def cmd_validate(args) -> int:
    spec, ds = _load_pair(args)
    violations = validate_spec(spec)
    cycle = find_cycle(spec.P)
    doc = {
        "violations": [
            {"constraint": v.constraint, "cell": v.index + 1,
             "residual": v.residual, "message": v.message}
            for v in violations
        ],
        "cycle": [i + 1 for i in cycle],
        "acyclic": not cycle,
        "ok": not violations and not cycle,
    }
    _emit(doc)
    return 0 if doc["ok"] else 1


def cmd_solve_uep(args) -> int:
    spec, ds = _load_pair(args)
    vstar = _parse_vstar(args, spec)
    eq = solve_uep(spec, ds, vstar)
    _emit({"xstar": eq.xstar, "vstar": eq.vstar, "flows": eq.flows})
    return 0


def cmd_synthesize(args) -> int:
    spec, ds = _load_pair(args)
    vstar = _parse_vstar(args, spec)
    eq = solve_uep(spec, ds, vstar)
    cert = certify(spec, ds, eq, seed=args.seed)
    cfg = cert.controller
    doc = {"xstar": cfg.xstar, "vstar": cfg.vstar, "b": cfg.b, "K": cfg.K,
           "tau": cfg.tau}
    _emit(doc)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        save_controller(cfg, os.path.join(args.out, "controller.json"))
    return 0


def cmd_analyze(args) -> int:
    spec, ds = _load_pair(args)
    vstar = _parse_vstar(args, spec)
    eq = solve_uep(spec, ds, vstar)
    controller = _load_ctrl(args)
    cert = certify(spec, ds, eq, controller=controller, seed=args.seed)

    demand_audits = [audit_demand_curve(fd, seed=args.seed) for fd in ds.demands]
    supply_audit = audit_supply_margin(spec, ds, seed=args.seed)
    contraction = contraction_check(spec, ds, cert.controller, cert,
                                    n_samples=2000, seed=args.seed)
    checks = {
        "demand_audits_ok": all(a.passed for a in demand_audits),
        "supply_margin_ok": supply_audit.passed,
        "contraction_ok": contraction.passed,
        "floor_budget_ok": cert.floor_budget_ok,
        "rho_below_one": cert.rho < 1.0,
    }
    doc = {
        "equilibrium": {"xstar": eq.xstar, "vstar": eq.vstar, "flows": eq.flows},
        "weights": {"r": cert.r, "xi": cert.xi},
        "invariant_box": {"epsstar": cert.epsstar, "beta": cert.beta},
        "drain": {
            "Qconst": cert.core.Qconst, "theta": cert.core.theta,
            "Theta": cert.core.Theta, "gamma": cert.core.gamma,
            "C": cert.C, "samples": cert.core.drain.n_evaluated,
        },
        "comparison": {"rho": cert.rho},
        "controller": {
            "b": cert.controller.b, "K": cert.controller.K,
            "tau": cert.controller.tau, "synthesized": controller is None,
            "floor_fraction": cert.floor_fraction,
        },
        "trapping_steps": cert.m,
        "audits": {
            "demand": [
                {"cell": i + 1, "passed": a.passed, "L_hat": a.L_hat,
                 "G_hat": a.G_hat, "fmin_hat": a.fmin_hat}
                for i, a in enumerate(demand_audits)
            ],
            "supply_margin": {"min_slack": supply_audit.min_slack,
                              "passed": supply_audit.passed},
            "contraction_max_violation": contraction.max_violation,
        },
        "checks": checks,
        "ok": all(checks.values()),
    }
    _emit(doc)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "certificate.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, indent=2)
            fh.write("\n")
    return 0 if doc["ok"] else 1


def _scenario_from_file(args, spec) -> ScenarioConfig:
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _InputError(str(exc)) from exc
    try:
        return _scenario_from_doc(doc, args)
    except (ValueError, KeyError, TypeError) as exc:
        raise _InputError(f"{args.scenario}: {exc}") from exc


def _scenario_from_doc(doc: dict, args) -> ScenarioConfig:
    allowed = {"x0", "horizon", "disturbance", "control", "step_seconds",
               "reference"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown scenario field(s) {sorted(unknown)}")
    dist_doc = dict(doc["disturbance"])
    kind = dist_doc.pop("kind")
    if kind == "constant":
        dist = DisturbanceSpec(kind="constant", d=dist_doc.pop("d"))
    else:
        dist = DisturbanceSpec(kind=kind,
                               seed=int(dist_doc.pop("seed", args.seed)))
    if dist_doc:
        raise ValueError(f"unknown disturbance field(s) {sorted(dist_doc)}")

    ctl_doc = dict(doc["control"])
    kind = ctl_doc.pop("kind")
    if kind == "open-loop":
        ctl = ControlSpec(kind="open-loop", v=ctl_doc.pop("v"))
    elif kind == "closed-loop":
        inline = ctl_doc.pop("controller", None)
        controller = (controller_from_dict(inline) if inline is not None
                      else _load_ctrl(args))
        if controller is None:
            raise ValueError(
                "closed-loop scenario needs an inline controller or --controller")
        ctl = ControlSpec(kind="closed-loop", controller=controller)
    else:
        ctl = ControlSpec(kind=kind)  # raises with the standard message
    if ctl_doc:
        raise ValueError(f"unknown control field(s) {sorted(ctl_doc)}")

    return ScenarioConfig(
        x0=doc["x0"], horizon=int(doc["horizon"]), disturbance=dist,
        control=ctl, step_seconds=float(doc.get("step_seconds", 15.0)),
        reference=doc.get("reference"),
    )


def cmd_simulate(args) -> int:
    spec, ds = _load_pair(args)
    cfg = _scenario_from_file(args, spec)
    record = run_scenario(spec, ds, cfg)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, Path(args.scenario).stem + ".csv")
    export_csv(record, csv_path)
    fit = estimate_decay(record, burn_in=min(50, cfg.horizon // 2))
    _emit({
        "csv": csv_path,
        "horizon": cfg.horizon,
        "terminal_deviation": record.deviation[-1],
        "sigma_hat": fit.sigma_hat,
        "M_hat": fit.M_hat,
        "converged_immediately": fit.converged_immediately,
        "max_mass_balance_error": float(mass_balance_residuals(record).max()),
    })
    return 0


def cmd_gridlock_demo(args) -> int:
    if args.network:
        spec, ds = _load_pair(args)
    else:
        spec, ds = three_cell_cycle()
    report = gridlock_demo(spec, ds, horizon=args.horizon, seed=args.seed)
    _emit({
        "cycle": [i + 1 for i in report.cycle],
        "horizon": report.horizon,
        "max_drift": report.max_drift,
        "final_state": report.final_state,
        "locked": report.max_drift == 0.0,
    })
    return 0 if report.max_drift == 0.0 else 1


def cmd_reproduce(args) -> int:
    outdir = args.out or "benchmark_out"
    summary = reproduce_suite(outdir, seed=args.seed)
    _emit(summary)
    closed = [v for k, v in summary["scenarios"].items()
              if k.startswith("closed_loop")]
    ok = all(s["terminal_deviation"] < 1.0 for s in closed)
    return 0 if ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netstab",
        description="Simulator and stability-certificate toolkit for "
                    "uncertain acyclic traffic networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False, horizon=None):
        p.add_argument("--network", help="network JSON (default: built-in benchmark)")
        p.add_argument("--diagrams", help="diagram JSON (default: built-in benchmark)")
        p.add_argument("--controller", help="controller JSON")
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")
        if horizon is not None:
            p.add_argument("--horizon", type=int, default=horizon)

    p = sub.add_parser("validate", help="structural checks on a network")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve-uep", help="solve the uncongested equilibrium")
    common(p)
    p.add_argument("--vstar", help="comma-separated equilibrium inflows")
    p.set_defaults(func=cmd_solve_uep)

    p = sub.add_parser("synthesize", help="derive a certified controller")
    common(p)
    p.add_argument("--vstar", help="comma-separated equilibrium inflows")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("analyze", help="full stability certificate with audits")
    common(p)
    p.add_argument("--vstar", help="comma-separated equilibrium inflows")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run one scenario and export CSV")
    common(p, scenario=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gridlock-demo",
                       help="jam a cyclic network and verify it never unlocks")
    common(p, horizon=1000)
    p.set_defaults(func=cmd_gridlock_demo)

    p = sub.add_parser("reproduce-paper",
                       help="run the full benchmark suite and write CSVs "
                            "plus a summary report")
    common(p)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, DimensionError, MisuseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
