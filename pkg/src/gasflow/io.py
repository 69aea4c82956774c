"""Configuration parsing, initial-data ingestion, and frame persistence.

Frames are stored as JSON Lines (one frame object per line) next to a run
manifest; report tables are plain CSV.  Floats survive the round trip
bit-for-bit because the JSON writer emits shortest round-trip reprs (17
significant digits).  The frame schema is documented in docs/format.md and
frozen by a golden-file test.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
from dataclasses import asdict
from typing import List, Optional, Tuple

import numpy as np

from .core import (FluidState, GasLaw, StateError, StepReport, kinetic_energy,
                   total_entropy, total_momentum)
from .timeloop import Frame, SimConfig, Trajectory, wasserstein2_1d

FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None
                         else f"line {line}: {message}")
        self.line = line


class IngestError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_auto_float(text: str):
    return None if text.strip().lower() == "auto" else float(text)


# key -> (parser, default); None default means required
_CONFIG_KEYS = {
    "tau": (float, None),
    "t_end": (float, None),
    "mode": (str, "pressureless"),
    "gamma": (float, 1.4),
    "kappa": (float, 1.0),
    "isentropic": (_parse_bool, False),
    "initial": (str, None),
    "n": (int, 1000),
    "zero_momentum": (_parse_bool, False),
    "merge_tol": (_parse_auto_float, None),
    "seed": (int, 0),
    "frames_every": (int, 1),
    "tol_feas": (_parse_auto_float, None),
    "tol_opt": (float, 1e-10),
    "max_sweeps": (int, 5000),
    "shuffle_sweeps": (_parse_bool, False),
    "prune_k": (int, 0),
    "solver_tol": (float, 1e-10),
    "solver_max_iters": (int, 10_000),
    "quad_pts": (int, 48),
}
_REQUIRED = ("tau", "t_end", "initial")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` configuration text; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        parser = _CONFIG_KEYS[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
    for key, (_, default) in _CONFIG_KEYS.items():
        if key not in values:
            if key in _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = default
    if values["mode"] not in ("pressureless", "polytropic"):
        raise ConfigError(f"mode must be pressureless or polytropic, "
                          f"got {values['mode']!r}")
    return values


def config_from_values(values: dict) -> SimConfig:
    try:
        law = GasLaw(gamma=values["gamma"], kappa=values["kappa"],
                     mode=values["mode"])
        return SimConfig(
            tau=values["tau"], t_end=values["t_end"], law=law,
            isentropic=values["isentropic"], seed=values["seed"],
            frames_every=values["frames_every"], merge_tol=values["merge_tol"],
            tol_feas=values["tol_feas"], tol_opt=values["tol_opt"],
            max_sweeps=values["max_sweeps"],
            shuffle_sweeps=values["shuffle_sweeps"], prune_k=values["prune_k"],
            solver_tol=values["solver_tol"],
            solver_max_iters=values["solver_max_iters"],
            quad_pts=values["quad_pts"])
    except (StateError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> SimConfig:
    """Read and validate a run configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    return config_from_values(values)


def load_run(path) -> Tuple[SimConfig, dict]:
    """Like :func:`load_config` but also returns the raw value dict
    (which carries the initial-data source and sampling count)."""
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    return config_from_values(values), values


BUILTINS = ("paper-cluster", "symmetric-collision", "uniform-block", "riemann-1d")


def _builtin_state(name: str, n: int) -> FluidState:
    if name == "symmetric-collision":
        return FluidState(masses=[0.5, 0.5], positions=[-1.0, 1.0],
                          velocities=[1.0, -1.0], entropies=[0.0, 0.0])
    if n < 1:
        raise IngestError("builtin sampling requires n >= 1")
    if name == "paper-cluster":
        # half the mass spread over (-1, 1) at rest, half concentrated at
        # the origin moving right.  Quarter-offset quantile sampling keeps
        # the discretization error a clean O(1/n) (midpoints supercancel).
        h = 2.0 / n
        xs = -1.0 + (np.arange(n) + 0.25) * h
        m = np.concatenate([np.full(n, 0.5 / n), [0.5]])
        x = np.concatenate([xs, [0.0]])
        u = np.concatenate([np.zeros(n), [1.0]])
        return FluidState(masses=m, positions=x, velocities=u,
                          entropies=np.zeros(n + 1))
    if name == "uniform-block":
        xs = (np.arange(n) + 0.25) / n
        return FluidState(masses=np.full(n, 1.0 / n), positions=xs,
                          velocities=np.zeros(n), entropies=np.zeros(n))
    if name == "riemann-1d":
        # piecewise-constant density 1.0 on [-1/2, 0), 0.125 on [0, 1/2],
        # both at rest; equal-mass quantile particles
        left_mass = 0.5
        right_mass = 0.0625
        total = left_mass + right_mass
        q = (np.arange(n) + 0.5) / n * total
        x = np.where(q < left_mass, -0.5 + q / 1.0, (q - left_mass) / 0.125)
        return FluidState(masses=np.full(n, 1.0 / n), positions=x,
                          velocities=np.zeros(n), entropies=np.zeros(n))
    raise IngestError(f"unknown builtin {name!r}")


def _state_from_columns(cols: dict) -> FluidState:
    try:
        m = np.asarray(cols["m"], dtype=float)
        x = np.asarray(cols["x"], dtype=float)
        u = np.asarray(cols["u"], dtype=float)
    except KeyError as exc:
        raise IngestError(f"missing particle column {exc}") from None
    s = np.asarray(cols.get("S", np.zeros(m.shape[0])), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if u.ndim == 1:
        u = u[:, None]
    if x.shape != u.shape:
        raise IngestError(f"positions {x.shape} and velocities {u.shape} disagree")
    return FluidState(masses=m, positions=x, velocities=u, entropies=s)


def _read_particle_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise IngestError(f"empty particle file: {path}")
    if str(path).endswith(".json"):
        data = json.loads(text)
        if isinstance(data, dict) and "particles" in data:
            data = data["particles"]
        if not isinstance(data, dict):
            raise IngestError("JSON particle file must hold a column mapping")
        return data
    reader = csv.DictReader(_io.StringIO(text))
    if reader.fieldnames is None:
        raise IngestError("CSV particle file has no header")
    names = [f.strip() for f in reader.fieldnames]
    rows = [row for row in reader if any(v.strip() for v in row.values() if v)]
    if not rows:
        raise IngestError(f"no particle rows in {path}")
    xcols = sorted(n for n in names if n == "x" or n.startswith("x"))
    ucols = sorted(n for n in names if n == "u" or n.startswith("u"))
    if len(xcols) != len(ucols):
        raise IngestError("mismatched position/velocity column counts")
    cols = {
        "m": [float(r["m"]) for r in rows],
        "x": [[float(r[c]) for c in xcols] for r in rows],
        "u": [[float(r[c]) for c in ucols] for r in rows],
    }
    if "S" in names:
        cols["S"] = [float(r["S"]) for r in rows]
    return cols


def ingest_initial(source, n: int = 1000, zero_momentum: bool = False
                   ) -> Tuple[FluidState, List[str]]:
    """Build the initial state from a builtin name or a particle file.

    Masses are renormalized to total one (with a warning) and negative
    masses or entropies are rejected.  When ``zero_momentum`` is set, a
    uniform velocity shift moves the data into the zero-total-momentum
    frame; otherwise a nonzero momentum only produces a warning so that
    reference scenarios keep their stated frame.
    """
    warnings: List[str] = []
    src = str(source)
    if src in BUILTINS:
        state = _builtin_state(src, n)
    else:
        if not os.path.exists(src):
            raise IngestError(f"no such initial data: {src!r} "
                              f"(builtins: {', '.join(BUILTINS)})")
        cols = _read_particle_file(src)
        m = np.asarray(cols.get("m", ()), dtype=float)
        if m.size and np.any(m < 0):
            raise IngestError("negative particle mass")
        s = np.asarray(cols.get("S", ()), dtype=float)
        if s.size and np.any(s < 0):
            raise IngestError("negative specific entropy")
        total = float(np.sum(m)) if m.size else 0.0
        if m.size and abs(total - 1.0) > 1e-12:
            if total <= 0:
                raise IngestError("total mass must be positive")
            cols = dict(cols)
            cols["m"] = (m / total).tolist()
            warnings.append(f"masses summed to {total:.17g}; renormalized to 1")
        try:
            state = _state_from_columns(cols)
        except StateError as exc:
            raise IngestError(str(exc)) from exc

    mom = total_momentum(state)
    uscale = 1.0 + float(np.max(np.abs(state.velocities)))
    if float(np.max(np.abs(mom))) > 1e-10 * uscale:
        if zero_momentum:
            state = state.with_velocities(state.velocities - mom[None, :])
            warnings.append(
                f"shifted to zero-momentum frame (removed {mom.tolist()})")
        else:
            warnings.append(
                f"total momentum {mom.tolist()} is nonzero; pass "
                f"zero_momentum to shift frames")
    return state, warnings


# ---------------------------------------------------------------------------
# frame persistence


def report_to_dict(report: Optional[StepReport]) -> Optional[dict]:
    if report is None:
        return None
    d = asdict(report)
    d["momentum_after"] = np.asarray(report.momentum_after).tolist()
    return d


def state_energies(state: FluidState, law: GasLaw) -> dict:
    from . import polytropic

    kin = kinetic_energy(state)
    if law.mode == "polytropic" and state.n > 1:
        disc = polytropic.discretize(state)
        internal = float(np.sum(
            polytropic._cell_energy_weights(disc, law) * disc.volumes))
    else:
        internal = 0.0
    return {"kinetic": kin, "internal": internal, "total": kin + internal}


def frame_to_dict(frame: Frame, law: GasLaw) -> dict:
    st = frame.state
    return {
        "t": frame.t,
        "particles": {
            "m": st.masses.tolist(),
            "x": st.positions.tolist(),
            "u": st.velocities.tolist(),
            "S": st.entropies.tolist(),
        },
        "energies": state_energies(st, law),
        "report": report_to_dict(frame.report),
    }


def frame_from_dict(data: dict) -> Frame:
    p = data["particles"]
    state = FluidState(masses=p["m"], positions=p["x"], velocities=p["u"],
                       entropies=p["S"])
    rep = data.get("report")
    report = None
    if rep is not None:
        report = StepReport(
            acc_cost_sq=rep["acc_cost_sq"], stress_trace=rep["stress_trace"],
            kinetic_before=rep["kinetic_before"], kinetic_after=rep["kinetic_after"],
            internal_before=rep["internal_before"], internal_after=rep["internal_after"],
            dissipation=rep["dissipation"], momentum_after=rep["momentum_after"],
            el_residual=rep.get("el_residual", 0.0),
            solver_iterations=rep.get("solver_iterations", 0))
    return Frame(t=data["t"], state=state, report=report)


def write_frames(path, traj: Trajectory, law: GasLaw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in traj.frames:
            fh.write(json.dumps(frame_to_dict(frame, law),
                                separators=(",", ":")) + "\n")


def read_frames(path) -> List[Frame]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                frames.append(frame_from_dict(json.loads(line)))
    return frames


def read_frame_dicts(path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_manifest(path, cfg: SimConfig, values: dict, state: FluidState,
                   traj: Trajectory, warnings: List[str], runtime: float) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": {k: values.get(k) for k in sorted(_CONFIG_KEYS)},
        "seed": cfg.seed,
        "dim": state.dim,
        "n_steps": len(traj.maps),
        "n_frames": len(traj.frames),
        "warnings": warnings,
        "energy_initial": state_energies(traj.frames[0].state, cfg.law),
        "energy_final": state_energies(traj.frames[-1].state, cfg.law),
        "runtime_seconds": runtime,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dump validation

_FRAME_KEYS = {"t", "particles", "energies", "report"}
_PARTICLE_KEYS = {"m", "x", "u", "S"}
_ENERGY_KEYS = {"kinetic", "internal", "total"}


def validate_dump(frames_path, manifest_path=None) -> List[str]:
    """Run the invariant suite on a dump; returns violation messages."""
    violations: List[str] = []
    try:
        dicts = read_frame_dicts(frames_path)
    except Exception as exc:
        return [f"schema: cannot read frames: {exc}"]
    if not dicts:
        return ["schema: dump contains no frames"]

    mode = "pressureless"
    if manifest_path and os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        mode = manifest.get("config", {}).get("mode", "pressureless")

    frames: List[Frame] = []
    for i, d in enumerate(dicts):
        if set(d) != _FRAME_KEYS:
            violations.append(f"schema: frame {i} keys {sorted(d)} != "
                              f"{sorted(_FRAME_KEYS)}")
            return violations
        if set(d["particles"]) != _PARTICLE_KEYS or set(d["energies"]) != _ENERGY_KEYS:
            violations.append(f"schema: frame {i} has malformed particle/energy keys")
            return violations
        try:
            frames.append(frame_from_dict(d))
        except (StateError, KeyError, TypeError) as exc:
            violations.append(f"state: frame {i} invalid: {exc}")
            return violations

    times = [f.t for f in frames]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        violations.append("time: frame times are not strictly increasing")

    p0 = total_momentum(frames[0].state)
    s0 = total_entropy(frames[0].state)
    e_prev = dicts[0]["energies"]["total"]
    e0 = e_prev
    for i, (f, d) in enumerate(zip(frames, dicts)):
        p = total_momentum(f.state)
        if np.max(np.abs(p - p0)) > 1e-10 * (1.0 + np.max(np.abs(p0))):
            violations.append(
                f"momentum: frame {i} drifted to {p.tolist()} from {p0.tolist()}")
        stot = total_entropy(f.state)
        if abs(stot - s0) > 1e-12 * (1.0 + abs(s0)):
            violations.append(f"entropy: frame {i} total {stot} != {s0}")
        kin = kinetic_energy(f.state)
        if abs(kin - d["energies"]["kinetic"]) > 1e-9 * (1.0 + kin):
            violations.append(
                f"energy: frame {i} stored kinetic {d['energies']['kinetic']:.17g} "
                f"does not match particles ({kin:.17g})")
        e = d["energies"]["total"]
        if e > e_prev + 1e-8 * (1.0 + abs(e0)):
            violations.append(
                f"energy: frame {i} total {e:.17g} exceeds previous {e_prev:.17g}")
        e_prev = e
        rep = f.report
        if rep is not None:
            tolk = 1e-7 * (1.0 + rep.kinetic_before + rep.internal_before)
            gap = (rep.kinetic_before + rep.internal_before
                   - rep.kinetic_after - rep.internal_after
                   - rep.stress_trace - 0.5 * rep.acc_cost_sq - rep.dissipation)
            if mode == "pressureless" or f.state.dim == 1:
                if abs(gap) > tolk:
                    violations.append(
                        f"ledger: frame {i} step identity off by {gap:.3e}")
            elif gap < -tolk:
                violations.append(
                    f"ledger: frame {i} energy inequality violated by {-gap:.3e}")
            if rep.stress_trace < -1e-8 * (1.0 + rep.kinetic_before):
                violations.append(
                    f"stress: frame {i} negative stress trace {rep.stress_trace:.3e}")

    if frames[0].state.dim == 1 and len(frames) > 1:
        bound = np.sqrt(2.0 * max(e0, 0.0))
        for i in range(len(frames)):
            for j in range(i + 1, len(frames)):
                w2 = wasserstein2_1d(frames[i].state, frames[j].state)
                if w2 > bound * (times[j] - times[i]) + 1e-8:
                    violations.append(
                        f"lipschitz: W2(frame {i}, frame {j}) = {w2:.3e} exceeds "
                        f"{bound:.3e} * dt")
                    break
            else:
                continue
            break
    return violations
