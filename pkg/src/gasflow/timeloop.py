"""Multi-step driver, interpolation, and trajectory diagnostics.

Steps are chained recursively on the timestep grid ``t_k = k tau``; inside
a step the motion is the straight line from positions to accepted targets,
with the transport velocity ``(T - x) / tau`` at interior times and the
projected (post-merge) velocities at the endpoints.  Diagnostics include
the exact 1D quadratic-Wasserstein distance, the dual-Lipschitz norm of
zero-mean signed measures, and Lipschitz/second-moment bounds of the
trajectory in transport distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import polytropic, pressureless
from .core import (FluidState, GasLaw, StateError, StepReport, TransportMap,
                   kinetic_energy, push_forward_detailed)
from .polytropic import SolverConfig
from .pressureless import PressurelessStep, optimal_velocity


class SimulationError(RuntimeError):
    """A step failed; carries the step index and the partial trajectory."""

    def __init__(self, message: str, step_index: int, trajectory=None):
        super().__init__(message)
        self.step_index = step_index
        self.trajectory = trajectory


@dataclass
class SimConfig:
    """Run settings: timestep, horizon, gas law, tolerances, cadence."""

    tau: float
    t_end: float
    law: GasLaw = field(default_factory=lambda: GasLaw(mode="pressureless"))
    isentropic: bool = False
    seed: int = 0
    frames_every: int = 1
    merge_tol: Optional[float] = None
    tol_feas: Optional[float] = None
    tol_opt: float = 1e-10
    max_sweeps: int = 5000
    shuffle_sweeps: bool = False
    prune_k: int = 0
    solver_tol: float = 1e-10
    solver_max_iters: int = 10_000
    quad_pts: int = 48

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.t_end < self.tau:
            raise ValueError("t_end must be at least tau")
        if self.frames_every < 1:
            raise ValueError("frames_every must be >= 1")

    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.tau - 1e-12))

    def step_config(self) -> PressurelessStep:
        return PressurelessStep(
            tau=self.tau, merge_tol=self.merge_tol, tol_feas=self.tol_feas,
            tol_opt=self.tol_opt, max_sweeps=self.max_sweeps,
            shuffle=self.shuffle_sweeps, seed=self.seed, prune_k=self.prune_k)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol=self.solver_tol, max_iters=self.solver_max_iters,
                            quad_pts=self.quad_pts)


@dataclass
class Frame:
    t: float
    state: FluidState
    report: Optional[StepReport] = None


@dataclass
class Trajectory:
    """Time-ordered frames plus the merge forest linking particles back.

    ``assignments[k][i]`` is the index in step k's output state of the
    particle that absorbed input particle ``i``; composing these maps
    reconstructs the ancestry of any particle without storing dense maps.
    Frames are recorded at (a subset of) step endpoints; ``maps`` holds the
    accepted transport map of every step regardless of frame cadence.
    """

    frames: List[Frame]
    maps: List[TransportMap] = field(default_factory=list)
    assignments: List[np.ndarray] = field(default_factory=list)
    config: Optional[SimConfig] = None

    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    def ancestors(self, particle: int, n_steps: Optional[int] = None) -> np.ndarray:
        """Initial particle indices absorbed into ``particle`` after n steps."""
        steps = self.assignments if n_steps is None else self.assignments[:n_steps]
        idx = np.arange(len(steps[0])) if steps else np.array([particle])
        current = idx
        for a in steps:
            current = a[current]
        return np.flatnonzero(current == particle)


def interpolate(state_k: FluidState, tmap: TransportMap, t_local: float,
                merge_tol: Optional[float] = None) -> FluidState:
    """State at time offset ``t_local`` within one accepted step.

    Interior times move the pre-step particles along straight lines with
    the transport velocity; ``t_local = 0`` returns the input state and
    ``t_local = tau`` the merged endpoint with minimal-acceleration
    velocities averaged per merge cluster.
    """
    tau = tmap.tau
    if not 0.0 <= t_local <= tau:
        raise ValueError(f"t_local {t_local} outside [0, {tau}]")
    if t_local == 0.0:
        return state_k
    if t_local == tau:
        w = optimal_velocity(state_k.positions, state_k.velocities,
                             tmap.targets, tau)
        merged, _ = push_forward_detailed(state_k.with_velocities(w), tmap,
                                          merge_tol)
        return merged
    frac = t_local / tau
    v = tmap.transport_velocities(state_k.positions)
    return replace(state_k,
                   positions=state_k.positions + t_local * v,
                   velocities=v)


def cubic_positions(state_k: FluidState, tmap: TransportMap,
                    t_local: float) -> np.ndarray:
    """Positions along the minimal-acceleration cubic (visualization only).

    The stepping itself always uses the linear interpolation; the cubic
    agrees with it at both endpoints and deviates by O(tau) in between.
    """
    tau = tmap.tau
    if not 0.0 <= t_local <= tau:
        raise ValueError(f"t_local {t_local} outside [0, {tau}]")
    x, u = state_k.positions, state_k.velocities
    resid = (x + tau * u) - tmap.targets
    poly = (t_local ** 2 / tau - t_local ** 3 / (3 * tau ** 2)) * (1.5 / tau)
    return x + t_local * u - poly * resid


def simulate(initial: FluidState, cfg: SimConfig) -> Trajectory:
    """Run ceil(t_end / tau) steps, recording frames and step ledgers."""
    state = initial
    if cfg.isentropic and np.any(initial.entropies != 0):
        state = replace(state, entropies=np.zeros(initial.n))
    if cfg.law.mode == "polytropic":
        disc0 = polytropic.discretize(state)
        u0 = float(np.sum(polytropic._cell_energy_weights(disc0, cfg.law)
                          * disc0.volumes))
        if not np.isfinite(u0):
            raise StateError("initial internal energy is not finite")

    traj = Trajectory(frames=[Frame(t=0.0, state=state)], config=cfg)
    step_cfg = cfg.step_config()
    solver_cfg = cfg.solver_config()
    n = cfg.n_steps()
    for k in range(n):
        try:
            if cfg.law.mode == "pressureless":
                new_state, tmap, report, labels = pressureless.step_detailed(
                    state, step_cfg)
            else:
                disc = polytropic.discretize(state)
                tmap, report = polytropic.minimize_step(disc, state, cfg.tau,
                                                        cfg.law, solver_cfg)
                w = optimal_velocity(state.positions, state.velocities,
                                     tmap.targets, cfg.tau)
                new_state, labels = push_forward_detailed(
                    state.with_velocities(w), tmap, cfg.merge_tol)
        except Exception as exc:
            raise SimulationError(f"step {k + 1} failed: {exc}", k + 1, traj) from exc
        traj.maps.append(tmap)
        traj.assignments.append(labels)
        state = new_state
        t = (k + 1) * cfg.tau
        if (k + 1) % cfg.frames_every == 0 or k + 1 == n:
            traj.frames.append(Frame(t=t, state=state, report=report))
    return traj


def wasserstein2_1d(state_a: FluidState, state_b: FluidState) -> float:
    """Exact quadratic Wasserstein distance between two 1D atomic clouds.

    Computed by the sorted quantile coupling: mass slices of the two
    cumulative distributions are matched in order.
    """
    if state_a.dim != 1 or state_b.dim != 1:
        raise StateError("wasserstein2_1d requires d = 1")
    return _w2_atoms(state_a.positions[:, 0], state_a.masses,
                     state_b.positions[:, 0], state_b.masses)


def _w2_atoms(xa, wa, xb, wb) -> float:
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    xa, wa = xa[ia], wa[ia]
    xb, wb = xb[ib], wb[ib]
    cost = 0.0
    i = j = 0
    ra, rb = wa[0], wb[0]
    while True:
        dm = min(ra, rb)
        cost += dm * (xa[i] - xb[j]) ** 2
        ra -= dm
        rb -= dm
        if ra <= 1e-17:
            i += 1
            if i >= len(xa):
                break
            ra = wa[i]
        if rb <= 1e-17:
            j += 1
            if j >= len(xb):
                break
            rb = wb[j]
    return float(np.sqrt(max(cost, 0.0)))


def kantorovich_norm_1d(positions, weights) -> float:
    """Dual-Lipschitz norm of a zero-total signed atomic measure on R.

    Equals the integral of the absolute cumulative function, which is the
    exact value of the dual problem in one dimension.  Raises if the total
    mass is not zero within 1e-12 of the total variation.
    """
    x = np.asarray(positions, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if x.shape != w.shape:
        raise ValueError("positions and weights must have equal length")
    tv = float(np.sum(np.abs(w)))
    if abs(float(np.sum(w))) > 1e-12 * max(tv, 1.0):
        raise ValueError("signed measure must have zero total mass")
    if x.shape[0] < 2:
        return 0.0
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cum = np.cumsum(ws)[:-1]
    return float(np.sum(np.abs(cum) * np.diff(xs)))


@dataclass
class LipschitzReport:
    max_ratio: float
    bound: float
    ratio_ok: bool
    max_moment_excess: float
    moment_ok: bool
    initial_energy: float


def lipschitz_report(traj: Trajectory, tol: float = 1e-8) -> LipschitzReport:
    """Check transport-Lipschitz and second-moment growth over all frames.

    The velocity bound is the square root of twice the initial total
    energy (kinetic plus internal); both checks flag violations beyond
    ``tol``.
    """
    frames = traj.frames
    if frames[0].state.dim != 1:
        raise StateError("lipschitz_report requires a 1D trajectory")
    first = frames[0]
    energy = kinetic_energy(first.state)
    if traj.config is not None and traj.config.law.mode == "polytropic":
        disc = polytropic.discretize(first.state)
        energy += float(np.sum(polytropic._cell_energy_weights(disc, traj.config.law)
                               * disc.volumes))
    bound = math.sqrt(2.0 * energy)
    max_ratio = 0.0
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            dt = frames[j].t - frames[i].t
            if dt <= 0:
                continue
            w2 = wasserstein2_1d(frames[i].state, frames[j].state)
            max_ratio = max(max_ratio, w2 / dt)
    m0 = math.sqrt(max(0.0, float(np.sum(
        first.state.masses * np.sum(first.state.positions ** 2, axis=1)))))
    excess = 0.0
    for f in frames:
        mt = math.sqrt(max(0.0, float(np.sum(
            f.state.masses * np.sum(f.state.positions ** 2, axis=1)))))
        excess = max(excess, mt - (m0 + f.t * bound))
    return LipschitzReport(
        max_ratio=max_ratio, bound=bound, ratio_ok=max_ratio <= bound + tol,
        max_moment_excess=excess, moment_ok=excess <= tol,
        initial_energy=energy)
