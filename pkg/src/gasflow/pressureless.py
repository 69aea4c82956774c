"""One timestep of the pressureless (sticky particle) scheme.

The step projects the free-transport targets ``x + tau u`` onto the
monotone cone, recovers the velocity of minimal acceleration, merges
particles transported to a common location by mass-weighted averaging, and
accounts the kinetic energy budget: the energy lost per step is exactly
the stress trace plus half the squared acceleration cost.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (FluidState, StepReport, TransportMap, kinetic_energy,
                   push_forward_detailed, total_momentum)
from .projection import ProjectionProblem, ProjectionResult, project


@dataclass
class PressurelessStep:
    """Step configuration: timestep, merge tolerance, projection settings."""

    tau: float
    merge_tol: Optional[float] = None
    tol_feas: Optional[float] = None
    tol_opt: float = 1e-10
    max_sweeps: int = 5000
    shuffle: bool = False
    seed: int = 0
    prune_k: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


def accel_cost_sq(x, xi, z, zeta, tau: float):
    """Squared cost of steering (x, xi) to (z, zeta) over a step of tau.

    Vanishes exactly on free transport z = x + tau xi, zeta = xi.
    """
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    z, zeta = np.asarray(z, float), np.asarray(zeta, float)
    drift = (z - x) / tau - 0.5 * (zeta + xi)
    jump = zeta - xi
    if drift.ndim > 1:
        return 3.0 * np.sum(drift ** 2, axis=-1) + 0.25 * np.sum(jump ** 2, axis=-1)
    return 3.0 * float(np.sum(drift ** 2)) + 0.25 * float(np.sum(jump ** 2))


def optimal_velocity(x, xi, z, tau: float):
    """Arrival velocity minimizing the acceleration toward position z.

    Equals ``xi - (3 / 2 tau) ((x + tau xi) - z)``; algebraically the same
    as ``1.5 (z - x) / tau - 0.5 xi``.
    """
    x, xi, z = np.asarray(x, float), np.asarray(xi, float), np.asarray(z, float)
    return xi - (1.5 / tau) * ((x + tau * xi) - z)


def project_free_transport(state: FluidState, cfg: PressurelessStep
                           ) -> Tuple[TransportMap, ProjectionResult]:
    """Monotone projection of the free-transport targets x + tau u."""
    targets = state.positions + cfg.tau * state.velocities
    res = project(ProjectionProblem(
        base_points=state.positions, weights=state.masses, targets=targets,
        tol_feas=cfg.tol_feas, tol_opt=cfg.tol_opt, max_sweeps=cfg.max_sweeps,
        shuffle=cfg.shuffle, seed=cfg.seed, prune_k=cfg.prune_k))
    return TransportMap(targets=res.projected, tau=cfg.tau, accepted=True), res


def stress_trace(state: FluidState, tmap: TransportMap) -> float:
    """Trace of the monotonicity-multiplier stress released by the map.

    Computed as ``-(3 / 2 tau^2) sum_i m_i <(x_i + tau u_i) - T_i, x_i>``;
    nonnegative up to roundoff because the multiplier field is positive
    semidefinite.
    """
    tau = tmap.tau
    resid = (state.positions + tau * state.velocities) - tmap.targets
    return -(1.5 / tau ** 2) * float(
        np.sum(state.masses * np.sum(resid * state.positions, axis=1)))


def step_detailed(state: FluidState, cfg: PressurelessStep):
    """Like :func:`step` but also returns the merge assignment labels."""
    tau = cfg.tau
    tmap, proj = project_free_transport(state, cfg)
    y = state.positions + tau * state.velocities
    resid = y - tmap.targets
    w_vel = optimal_velocity(state.positions, state.velocities,
                             tmap.targets, tau)

    moved = state.with_velocities(w_vel)
    merged, labels = push_forward_detailed(moved, tmap, cfg.merge_tol)

    # merge loss: squared distance between per-particle arrival velocities
    # and the mass-averaged velocity of their cluster
    u_cluster = merged.velocities[labels]
    merge_cost = float(np.sum(state.masses * np.sum((w_vel - u_cluster) ** 2, axis=1)))
    transport_cost = (0.75 / tau ** 2) * float(
        np.sum(state.masses * np.sum(resid ** 2, axis=1)))

    report = StepReport(
        acc_cost_sq=transport_cost + merge_cost,
        stress_trace=stress_trace(state, tmap),
        kinetic_before=kinetic_energy(state),
        kinetic_after=kinetic_energy(merged),
        internal_before=0.0,
        internal_after=0.0,
        dissipation=0.0,
        momentum_after=total_momentum(merged),
        el_residual=abs(float(np.sum(state.masses * np.sum(resid * tmap.targets, axis=1)))),
        solver_iterations=proj.sweeps_used,
    )
    return merged, tmap, report, labels


def step(state: FluidState, cfg: PressurelessStep
         ) -> Tuple[FluidState, TransportMap, StepReport]:
    """Advance the state by one pressureless timestep.

    Returns the merged post-step state, the accepted transport map (defined
    on the pre-step particles), and the energy ledger for the step.
    """
    merged, tmap, report, _ = step_detailed(state, cfg)
    return merged, tmap, report
