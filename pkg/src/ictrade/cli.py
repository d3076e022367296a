"""Command line entry point: simulate, ablate, validate-relaxation, emit-plots, generate."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import yaml

from . import sim
from .model import ParkModel, ScenarioError, load_scenario, save_scenario
from .relax_check import validate_corpus
from .synth import synthetic_park

SUMMARY_FILE = "summary.json"


def _model(args) -> ParkModel:
    if args.config:
        return load_scenario(args.config)
    return synthetic_park(horizon=args.horizon or 24 * 7, seed=args.seed)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=float) + "\n")


def parse_toggle(text: str) -> tuple[str, list]:
    """``name=v1,v2`` with each value read as YAML (``true``, ``2``, ``null``)."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"toggle {text!r} must look like name=v1,v2")
    name, vals = text.split("=", 1)
    if name not in sim.TOGGLES:
        raise argparse.ArgumentTypeError(f"unknown toggle {name!r}; choose from {sorted(sim.TOGGLES)}")
    values = [yaml.safe_load(v) for v in vals.split(",") if v.strip()]
    if not values:
        raise argparse.ArgumentTypeError(f"toggle {name!r} has no values")
    return name, values


def cmd_simulate(args) -> dict:
    model = _model(args)
    trace = sim.run_simulation(model, args.policy, args.horizon, args.seed)
    out = Path(args.out)
    trace.write_csv(out)
    summary = trace.summary()
    _write_json(out / SUMMARY_FILE, summary)
    return summary


def cmd_ablate(args) -> dict:
    model = _model(args)
    toggles = dict(args.toggle or [("cctcc", [True, False])])
    res = sim.run_ablation(model, toggles, args.policy, args.horizon, args.seed)
    out = Path(args.out)
    sim.emit_plots(None, out, res)
    return {"combinations": len(res.table), "table": res.table}


def cmd_validate_relaxation(args) -> dict:
    rep = validate_corpus(args.instances, seed=args.seed, delta=args.delta, max_iter=args.max_iter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "relaxation.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rep.rows[0]) if rep.rows else ["instance"])
        w.writeheader()
        w.writerows(rep.rows)
    summary = {"instances": rep.instances, "relaxed_feasible": rep.relaxed_feasible,
               "converged": rep.converged, "converged_share": rep.converged_share}
    _write_json(out / SUMMARY_FILE, summary)
    return summary


def cmd_emit_plots(args) -> dict:
    model = _model(args)
    trace = sim.run_simulation(model, args.policy, args.horizon, args.seed)
    paths = sim.emit_plots(trace, args.out)
    return {"files": [str(p) for p in paths]}


def cmd_generate(args) -> dict:
    model = synthetic_park(horizon=args.horizon or 24 * 7, seed=args.seed, n_ics=args.n_ics)
    path = save_scenario(model, args.out)
    return {"config": str(path)}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ictrade", description="Industrial cluster energy trading simulator")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, policy=True):
        p.add_argument("--config", help="scenario YAML (default: seeded synthetic four-cluster park)")
        p.add_argument("--horizon", type=int, default=None, help="number of hourly slots")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        if policy:
            p.add_argument("--policy", choices=sim.POLICIES, default="lyapunov")

    p = sub.add_parser("simulate", help="run one simulation and write trace CSVs")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", help="run every toggle combination and write a totals table")
    common(p)
    p.add_argument("--toggle", type=parse_toggle, action="append",
                   help="name=v1,v2 (repeatable); names: " + ", ".join(sorted(sim.TOGGLES)))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("validate-relaxation", help="check the pipeline relaxation on random gas trees")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=12)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_validate_relaxation)

    p = sub.add_parser("emit-plots", help="simulate and write plot-data CSVs")
    common(p)
    p.set_defaults(func=cmd_emit_plots)

    p = sub.add_parser("generate", help="write a seeded synthetic scenario (YAML plus series CSV)")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-ics", type=int, default=4)
    p.add_argument("--out", default="scenario")
    p.set_defaults(func=cmd_generate)
    return ap


def error_record(exc: BaseException) -> dict:
    if isinstance(exc, sim.SlotInfeasibleError):
        return exc.record()
    kind = "scenario" if isinstance(exc, ScenarioError) else "simulation" if isinstance(
        exc, sim.SimulationError) else "internal"
    return {"error": kind, "type": type(exc).__name__, "message": str(exc)}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:  # every failure leaves a machine-readable record
        print(json.dumps(error_record(exc)), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
