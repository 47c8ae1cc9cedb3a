"""Command-line entry point: ``lagrangian-lwr <command> ...``.

Exit codes: 0 success, 1 error, 2 incompatible conditions under ``--strict``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .conditions import dump_manifest, load_manifest
from .errors import LagrangianLWRError
from .fundamental_diagram import TriangularDiagram, mobile_century_diagram
from .ingestion import build_conditions, load_config, read_detector, read_probes
from .reconstruction import (
    compatibility_audit,
    extract_trajectory,
    travel_time,
    velocity_field,
    write_audit_json,
    write_trajectories_csv,
    write_velocity_csv,
)
from .solver import SolutionField, evaluate_grid, grid_summary, write_grid_csv, write_matrix_csv
from .synthetic import SCENARIOS, SyntheticSpec, estimate_from_dataset, generate_synthetic, holdout_report, write_dataset
from .upwind import integrate_positions, oracle_diff, reference_scenarios, simulate

log = logging.getLogger("lagrangian_lwr")

EXIT_OK, EXIT_ERROR, EXIT_INCOMPATIBLE = 0, 1, 2


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def field_from_manifest(path) -> SolutionField:
    """Rebuild a field from a condition manifest carrying ``diagram`` and ``domain``."""
    conds, extra = load_manifest(path)
    try:
        d = TriangularDiagram.from_dict(extra["diagram"])
        dom = extra["domain"]
    except KeyError as exc:
        raise LagrangianLWRError(f"{path}: manifest lacks {exc}") from exc
    return SolutionField(d, conds, dom["T"], dom["N1"], dom["N2"], extra.get("tau_dom", 1e-6))


def _run_manifest(args, command: str, inputs: dict, outputs: dict, summary: dict, config_hash=None, tolerances=None) -> dict:
    return {
        "command": command,
        "version": __version__,
        "argv": sys.argv[1:],
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in sorted(inputs.items()) if v is not None},
        "config_hash": config_hash,
        "tolerances": tolerances or {},
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
        "summary": summary,
    }


# -- commands --------------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    probes = read_probes(args.probes, cfg.units, cfg.origin_postmile)
    detector = read_detector(args.detector, cfg.detector_position)
    conds, labels, used = build_conditions(cfg, probes, detector)
    if args.conditions:
        extra, _ = load_manifest(args.conditions)
        conds = conds + list(extra)
    field = SolutionField(cfg.diagram, conds, cfg.T, cfg.N1, cfg.N2, cfg.tau_dom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    grid = evaluate_grid(field, cfg.nt, cfg.nn, workers=cfg.workers)
    files = {
        "grid": out / "grid.csv",
        "conditions": out / "conditions.json",
        "labels": out / "labels.json",
        "trajectories": out / "trajectories.csv",
        "velocity": out / "velocity.csv",
        "audit": out / "audit.json",
        "manifest": out / "manifest.json",
    }
    write_grid_csv(grid, files["grid"])
    dump_manifest(
        conds,
        files["conditions"],
        diagram=cfg.diagram.to_dict(),
        domain={"T": cfg.T, "N1": cfg.N1, "N2": cfg.N2},
        tau_dom=cfg.tau_dom,
    )
    _write_json({"labels": labels, "used_as_conditions": used}, files["labels"])

    t_samples = grid.t
    trajs = []
    for vid, n in labels.items():
        try:
            trajs.append(extract_trajectory(field, n, t_samples))
        except LagrangianLWRError as exc:
            log.warning("no trajectory for %s: %s", vid, exc)
    write_trajectories_csv(trajs, files["trajectories"])
    vf = velocity_field(field, t=grid.t, n=grid.n, workers=cfg.workers)
    write_velocity_csv(vf, files["velocity"])
    audit = compatibility_audit(field, tau_compat=cfg.tau_compat)
    audit["velocity_field"] = vf.metadata()
    write_audit_json(audit, files["audit"])

    summary = {
        "grid": grid_summary(grid),
        "n_conditions": len(conds),
        "n_probes": len(probes),
        "n_probe_conditions": len(used),
        "compatible": audit["compatible"],
        "max_gap_m": audit["max_gap"],
        "seconds": time.perf_counter() - t0,
    }
    manifest = _run_manifest(
        args,
        "estimate",
        {"config": args.config, "probes": args.probes, "detector": args.detector, "conditions": args.conditions},
        {k: v for k, v in files.items() if k != "manifest"},
        summary,
        config_hash=cfg.digest(),
        tolerances={"tau_dom": cfg.tau_dom, "tau_compat": cfg.tau_compat, "delta": cfg.delta, "clamp_eps": cfg.clamp_eps},
    )
    _write_json(manifest, files["manifest"])
    print(json.dumps(summary, indent=2))
    if args.strict and not audit["compatible"]:
        log.error("incompatible conditions: %s", audit["incompatible_conditions"])
        return EXIT_INCOMPATIBLE
    return EXIT_OK


def cmd_travel_time(args) -> int:
    field = field_from_manifest(args.field)
    tt = travel_time(field, args.label, args.x_from, args.x_to, dt=args.dt)
    result = {"label": args.label, "x_from": args.x_from, "x_to": args.x_to, "travel_time_s": tt}
    print(json.dumps(result))
    if args.out:
        _write_json(result, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    overrides = {"seed": args.seed}
    if args.n_probes is not None:
        overrides["n_probes"] = args.n_probes
    if args.penetration is not None:
        overrides["penetration"] = args.penetration
    if args.sampling_interval is not None:
        overrides["sampling_interval"] = args.sampling_interval
    spec = SyntheticSpec.default(args.scenario, **overrides)
    t0 = time.perf_counter()
    ds = generate_synthetic(spec)
    files = write_dataset(ds, args.out)
    out = Path(args.out)
    truth_grid = evaluate_grid(ds.field, args.nt, args.nn)
    write_grid_csv(truth_grid, out / "truth_grid.csv")
    files["truth_grid"] = str(out / "truth_grid.csv")
    summary = {
        "scenario": spec.scenario,
        "n_probes": len(ds.probes),
        "n_training": len(ds.training_ids),
        "n_holdout": len(ds.holdout_ids),
        "final_count": float(ds.detector.cumulative_count[-1]),
        "slow_vehicles": ds.slow_vehicle_queues,
    }
    if args.evaluate:
        est, labels, _ = estimate_from_dataset(ds)
        report = holdout_report(ds, est, labels)
        _write_json(report, out / "holdout_report.json")
        files["holdout_report"] = str(out / "holdout_report.json")
        summary["holdout_pass_fraction"] = report["pass_fraction"]
    summary["seconds"] = time.perf_counter() - t0
    manifest = _run_manifest(args, "synth", {}, files, summary, config_hash=ds.config.digest())
    _write_json(manifest, out / "manifest.json")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    field = field_from_manifest(args.field)
    audit = compatibility_audit(field, samples_per_piece=args.samples, tau_compat=args.tau_compat)
    if args.out:
        write_audit_json(audit, args.out)
    print(json.dumps({k: audit[k] for k in ("compatible", "max_gap", "min_gap", "incompatible_conditions")}))
    if args.strict and not audit["compatible"]:
        return EXIT_INCOMPATIBLE
    return EXIT_OK


def cmd_oracle_diff(args) -> int:
    d = mobile_century_diagram()
    scenarios = reference_scenarios(d, T=args.T, N2=args.N2)
    names = list(scenarios) if args.scenario == "all" else [args.scenario]
    report = {}
    for name in names:
        if name not in scenarios:
            raise LagrangianLWRError(f"unknown oracle scenario {name!r}; choose from {sorted(scenarios)}")
        ic, up = scenarios[name]
        report[name] = oracle_diff(d, ic, up, args.T, 0.0, args.N2, dns=tuple(args.dn), cfl=args.cfl)
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            hist = simulate(d, ic, up, args.T, 0.0, args.N2, min(args.dn), cfl=args.cfl)
            write_matrix_csv(hist.t, hist.labels, integrate_positions(hist), out / f"{name}_upwind.csv")
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagrangian-lwr", description="Lagrangian traffic state estimation from probes and detectors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="config + probes + detector -> grid, trajectories, velocity field, audit")
    e.add_argument("--config", required=True)
    e.add_argument("--probes", required=True)
    e.add_argument("--detector", required=True)
    e.add_argument("--conditions", help="extra condition manifest (JSON) to fuse in")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--workers", type=int, default=0, help="override grid.workers")
    e.add_argument("--strict", action="store_true", help="exit 2 if any condition is incompatible")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("travel-time", help="travel time of one label between two positions")
    t.add_argument("--field", required=True, help="condition manifest written by estimate")
    t.add_argument("--label", type=float, required=True)
    t.add_argument("--x-from", type=float, required=True)
    t.add_argument("--x-to", type=float, required=True)
    t.add_argument("--dt", type=float, default=1.0, help="trajectory sampling step (s)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_travel_time)

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    s.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIOS)}")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-probes", type=int)
    s.add_argument("--penetration", type=float, help="probe fraction of all vehicles; overrides --n-probes")
    s.add_argument("--sampling-interval", type=float)
    s.add_argument("--nt", type=int, default=121)
    s.add_argument("--nn", type=int, default=201)
    s.add_argument("--evaluate", action="store_true", help="also run the hold-out experiment")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("validate", help="compatibility audit of a condition manifest")
    v.add_argument("--field", required=True)
    v.add_argument("--tau-compat", type=float, default=0.5)
    v.add_argument("--samples", type=int, default=25, help="samples per condition piece")
    v.add_argument("--out")
    v.add_argument("--strict", action="store_true")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle-diff", help="closed form vs upwind refinement study")
    o.add_argument("--scenario", default="all")
    o.add_argument("--dn", type=float, nargs="+", default=[2.0, 1.0, 0.5, 0.25])
    o.add_argument("--cfl", type=float, default=0.5)
    o.add_argument("--T", type=float, default=60.0)
    o.add_argument("--N2", type=float, default=200.0)
    o.add_argument("--out")
    o.add_argument("--out-dir", help="write the finest upwind grid per scenario here")
    o.set_defaults(func=cmd_oracle_diff)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (LagrangianLWRError, OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
