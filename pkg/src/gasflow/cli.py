"""Command-line surface: simulate, step, project, validate, report.

Every failure path emits a machine-readable JSON object on stderr and a
nonzero exit code.  The environment variable ``GASFLOW_THREADS`` caps the
thread pools of the numerical backends (best effort; applied at startup).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np


def _apply_thread_cap() -> None:
    cap = os.environ.get("GASFLOW_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, cap)


_apply_thread_cap()

from . import io as gio  # noqa: E402  (thread cap must precede numpy-heavy work)
from . import polytropic, pressureless, timeloop  # noqa: E402
from .core import GasLaw  # noqa: E402
from .projection import ProjectionError, ProjectionProblem, project  # noqa: E402


def _fail(kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload), file=sys.stderr)
    return 1


def _load(args):
    cfg, values = gio.load_run(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
        values["seed"] = args.seed
    if getattr(args, "frames_every", None) is not None:
        cfg = replace(cfg, frames_every=args.frames_every)
        values["frames_every"] = args.frames_every
    if getattr(args, "mode_override", None):
        law = GasLaw(gamma=cfg.law.gamma, kappa=cfg.law.kappa,
                     mode=args.mode_override)
        cfg = replace(cfg, law=law)
        values["mode"] = args.mode_override
    state, warnings = gio.ingest_initial(values["initial"], n=values["n"],
                                         zero_momentum=values["zero_momentum"])
    return cfg, values, state, warnings


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg, values, state, warnings = _load(args)
    traj = timeloop.simulate(state, cfg)
    os.makedirs(args.out, exist_ok=True)
    gio.write_frames(os.path.join(args.out, "frames.jsonl"), traj, cfg.law)
    gio.write_manifest(os.path.join(args.out, "manifest.json"), cfg, values,
                       state, traj, warnings, time.perf_counter() - t0)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(traj.frames)} frames ({len(traj.maps)} steps) to {args.out}")
    return 0


def cmd_step(args) -> int:
    cfg, values, state, warnings = _load(args)
    if cfg.law.mode == "pressureless":
        _, _, report = pressureless.step(state, cfg.step_config())
    else:
        disc = polytropic.discretize(state)
        _, report = polytropic.minimize_step(disc, state, cfg.tau, cfg.law,
                                             cfg.solver_config())
    payload = gio.report_to_dict(report)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _read_projection_input(path):
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return (np.asarray(data["m"], float), np.asarray(data["x"], float),
                np.asarray(data["y"], float))
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = [f.strip() for f in (reader.fieldnames or [])]
        rows = list(reader)
    if not rows:
        raise gio.IngestError(f"no rows in {path}")
    xcols = sorted(n for n in names if n.startswith("x"))
    ycols = sorted(n for n in names if n.startswith("y"))
    m = np.array([float(r["m"]) for r in rows])
    x = np.array([[float(r[c]) for c in xcols] for r in rows])
    y = np.array([[float(r[c]) for c in ycols] for r in rows])
    return m, x, y


def cmd_project(args) -> int:
    m, x, y = _read_projection_input(args.input)
    res = project(ProjectionProblem(
        base_points=x, weights=m, targets=y,
        tol_feas=args.tol_feas, max_sweeps=args.max_sweeps))
    payload = {
        "projected": res.projected.tolist(),
        "sweeps_used": res.sweeps_used,
        "max_violation": res.max_violation,
        "dual_trace": res.dual_trace,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_validate(args) -> int:
    frames = args.frames or os.path.join(args.dump, "frames.jsonl")
    manifest = args.manifest or (os.path.join(args.dump, "manifest.json")
                                 if args.dump else None)
    violations = gio.validate_dump(frames, manifest)
    if violations:
        name = violations[0].split(":", 1)[0]
        print(json.dumps({"error": "invariant-violation", "invariant": name,
                          "violations": violations}, indent=2))
        return 1
    print(json.dumps({"ok": True, "frames": frames}))
    return 0


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.refine:
        return _report_refine(args)
    if args.cluster_scan:
        return _report_cluster(args)
    if not args.dump:
        return _fail("usage", "report requires --dump (or --refine/--cluster-scan)")
    frames = gio.read_frames(os.path.join(args.dump, "frames.jsonl"))
    _write_csv(os.path.join(args.out, "energy.csv"),
               ["t", "kinetic", "internal", "total"],
               [(d["t"], d["energies"]["kinetic"], d["energies"]["internal"],
                 d["energies"]["total"])
                for d in gio.read_frame_dicts(os.path.join(args.dump, "frames.jsonl"))])
    step_rows = []
    for f in frames:
        if f.report is not None:
            step_rows.append((f.t, f.report.acc_cost_sq, f.report.stress_trace,
                              f.report.dissipation, f.report.el_residual))
    _write_csv(os.path.join(args.out, "steps.csv"),
               ["t", "acc_cost_sq", "stress_trace", "dissipation", "el_residual"],
               step_rows)
    if frames[0].state.dim == 1:
        w2_rows = []
        for a, b in zip(frames, frames[1:]):
            w2_rows.append((a.t, b.t, timeloop.wasserstein2_1d(a.state, b.state)))
        _write_csv(os.path.join(args.out, "w2.csv"),
                   ["t_from", "t_to", "w2"], w2_rows)
    print(f"wrote report tables to {args.out}")
    return 0


def _report_refine(args) -> int:
    """Empirical timestep-refinement study: distance between trajectories
    computed at tau and tau/2, sampled at the coarse frame times."""
    if not args.config:
        return _fail("usage", "report --refine requires --config")
    cfg, values = gio.load_run(args.config)
    state, _ = gio.ingest_initial(values["initial"], n=values["n"],
                                  zero_momentum=values["zero_momentum"])
    if state.dim != 1:
        return _fail("unsupported", "refinement report requires 1D data")
    rows = []
    tau = cfg.tau
    prev = None
    for level in range(args.levels + 1):
        run_cfg = replace(cfg, tau=tau, frames_every=1)
        traj = timeloop.simulate(state, run_cfg)
        by_time = {round(f.t / cfg.tau, 9): f.state for f in traj.frames}
        if prev is not None:
            common = sorted(set(prev) & set(by_time))
            sup = max(timeloop.wasserstein2_1d(prev[t], by_time[t])
                      for t in common if t > 0)
            rows.append((2 * tau, tau, sup))
        prev = by_time
        tau *= 0.5
    _write_csv(os.path.join(args.out, "refine.csv"),
               ["tau_coarse", "tau_fine", "sup_w2"], rows)
    print(f"wrote refinement table to {args.out}")
    return 0


def _report_cluster(args) -> int:
    """Pooled-block position of the concentrated-cluster scenario vs the
    sample count, against the closed-form prediction."""
    tau = args.tau
    analytic = 2.0 * (np.sqrt(1.0 + tau) - 1.0)
    rows = []
    for n in [int(v) for v in args.cluster_scan.split(",")]:
        state, _ = gio.ingest_initial("paper-cluster", n=n)
        merged, _, _ = pressureless.step(
            state, pressureless.PressurelessStep(tau=tau))
        pooled = float(merged.positions[np.argmax(merged.masses), 0])
        rows.append((n, tau, pooled, analytic, abs(pooled - analytic)))
    _write_csv(os.path.join(args.out, "cluster.csv"),
               ["n", "tau", "pooled_position", "analytic", "abs_error"], rows)
    print(f"wrote cluster table to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasflow",
        description="Lagrangian particle solver for compressible gas dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a trajectory and dump frames")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--frames-every", type=int, dest="frames_every")
    p_sim.add_argument("--mode-override", choices=("pressureless", "polytropic"),
                       dest="mode_override")
    p_sim.set_defaults(func=cmd_simulate)

    p_step = sub.add_parser("step", help="run one step and print its ledger")
    p_step.add_argument("--config", required=True)
    p_step.add_argument("--out")
    p_step.add_argument("--seed", type=int)
    p_step.add_argument("--mode-override", choices=("pressureless", "polytropic"),
                        dest="mode_override")
    p_step.set_defaults(func=cmd_step)

    p_proj = sub.add_parser("project", help="bare monotone projection of targets")
    p_proj.add_argument("--input", required=True)
    p_proj.add_argument("--out")
    p_proj.add_argument("--tol-feas", type=float, dest="tol_feas")
    p_proj.add_argument("--max-sweeps", type=int, default=5000, dest="max_sweeps")
    p_proj.set_defaults(func=cmd_project)

    p_val = sub.add_parser("validate", help="run the invariant suite on a dump")
    p_val.add_argument("--dump")
    p_val.add_argument("--frames")
    p_val.add_argument("--manifest")
    p_val.set_defaults(func=cmd_validate)

    p_rep = sub.add_parser("report", help="emit CSV tables from a dump")
    p_rep.add_argument("--dump")
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--refine", action="store_true")
    p_rep.add_argument("--config")
    p_rep.add_argument("--levels", type=int, default=2)
    p_rep.add_argument("--cluster-scan", dest="cluster_scan")
    p_rep.add_argument("--tau", type=float, default=0.25)
    p_rep.set_defaults(func=cmd_report)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except gio.ConfigError as exc:
        return _fail("config", str(exc))
    except gio.IngestError as exc:
        return _fail("ingest", str(exc))
    except ProjectionError as exc:
        return _fail("projection", str(exc), max_violation=exc.max_violation)
    except timeloop.SimulationError as exc:
        return _fail("simulation", str(exc), step=exc.step_index)
    except FileNotFoundError as exc:
        return _fail("io", str(exc))
    except Exception as exc:  # pragma: no cover - last resort
        return _fail(type(exc).__name__, str(exc))


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
