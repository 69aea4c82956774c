"""Shared domain types and elementary state algebra.

A fluid state is a weighted particle cloud in R^d: masses (normalized to
total mass one), positions, velocities, and specific entropies.  All types
are immutable value objects; every operation is a pure function, so states
can be shared freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

MASS_TOL = 1e-12


class StateError(ValueError):
    """Raised when a state or map violates a structural invariant."""


def as_points(a, dim: Optional[int] = None) -> np.ndarray:
    """Coerce input to a float64 array of shape (N, d)."""
    arr = np.ascontiguousarray(np.atleast_1d(np.asarray(a, dtype=float)))
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise StateError(f"expected 1D or 2D point array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise StateError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True)
class FluidState:
    """Weighted particle cloud: masses, positions, velocities, entropies.

    Invariants enforced on construction: equal lengths, masses nonnegative
    and summing to one within 1e-12, entropies nonnegative, all values
    finite.
    """

    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    entropies: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.masses, dtype=float))
        x = as_points(self.positions)
        u = as_points(self.velocities, x.shape[1])
        s = np.ascontiguousarray(np.asarray(self.entropies, dtype=float))
        if m.ndim != 1 or s.ndim != 1:
            raise StateError("masses and entropies must be 1D arrays")
        n = m.shape[0]
        if n < 1:
            raise StateError("state must contain at least one particle")
        if not (x.shape[0] == u.shape[0] == s.shape[0] == n):
            raise StateError("state arrays must share one length")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(x))
                and np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
            raise StateError("state contains non-finite values")
        if np.any(m < 0):
            raise StateError("masses must be nonnegative")
        if abs(float(np.sum(m)) - 1.0) > MASS_TOL:
            raise StateError(f"masses must sum to one, got {float(np.sum(m)):.17g}")
        if np.any(s < 0):
            raise StateError("entropies must be nonnegative")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", u)
        object.__setattr__(self, "entropies", s)

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def with_velocities(self, u) -> "FluidState":
        return replace(self, velocities=as_points(u, self.dim))


@dataclass(frozen=True)
class TransportMap:
    """Candidate or accepted target positions per particle over one step.

    ``accepted`` marks maps that have passed (or been produced by) the
    monotone projection; only accepted maps may be pushed forward.
    """

    targets: np.ndarray
    tau: float
    accepted: bool = False

    def __post_init__(self):
        t = as_points(self.targets)
        if not np.all(np.isfinite(t)):
            raise StateError("targets contain non-finite values")
        if not self.tau > 0:
            raise StateError("tau must be positive")
        object.__setattr__(self, "targets", t)

    def transport_velocities(self, positions) -> np.ndarray:
        """Straight-line velocities (T - x) / tau."""
        return (self.targets - as_points(positions, self.targets.shape[1])) / self.tau


@dataclass(frozen=True)
class GasLaw:
    """Polytropic gas law U(r, S) = kappa * exp(S) * r**gamma.

    ``mode`` selects the pressureless case (internal energy ignored) or the
    polytropic case (gamma > 1, kappa > 0 required).
    """

    gamma: float = 1.4
    kappa: float = 1.0
    mode: str = "polytropic"

    def __post_init__(self):
        if self.mode not in ("pressureless", "polytropic"):
            raise StateError(f"unknown gas law mode {self.mode!r}")
        if self.mode == "polytropic":
            if not self.gamma > 1:
                raise StateError("polytropic law requires gamma > 1")
            if not self.kappa > 0:
                raise StateError("polytropic law requires kappa > 0")

    def energy_density(self, r, S):
        """U(r, S) = kappa * e^S * r^gamma."""
        r = np.asarray(r, dtype=float)
        return self.kappa * np.exp(np.asarray(S, dtype=float)) * r ** self.gamma

    def pressure(self, r, S):
        """P(r, S) = U'(r, S) r - U(r, S) = kappa (gamma - 1) e^S r^gamma."""
        return (self.gamma - 1.0) * self.energy_density(r, S)

    def pressure_gap(self, r, S):
        """p(r, S) = P'(r, S) r - P(r, S) = kappa (gamma - 1)^2 e^S r^gamma."""
        return (self.gamma - 1.0) * self.pressure(r, S)


def pressure(r, S, law: GasLaw):
    """Module-level convenience for GasLaw.pressure."""
    return law.pressure(r, S)


@dataclass(frozen=True)
class StepReport:
    """Per-step conservation and energy ledger.

    ``acc_cost_sq`` is the squared acceleration cost spent by the step,
    ``stress_trace`` the trace mass of the monotonicity multiplier, and
    ``dissipation`` the time-integrated internal-energy dissipation
    (polytropic case only).  ``el_residual`` records how well the step's
    first-order optimality identity was satisfied (solver diagnostics).
    """

    acc_cost_sq: float
    stress_trace: float
    kinetic_before: float
    kinetic_after: float
    internal_before: float
    internal_after: float
    dissipation: float
    momentum_after: np.ndarray
    el_residual: float = 0.0
    solver_iterations: int = 0

    def __post_init__(self):
        p = np.asarray(self.momentum_after, dtype=float).reshape(-1)
        vals = [self.acc_cost_sq, self.stress_trace, self.kinetic_before,
                self.kinetic_after, self.internal_before, self.internal_after,
                self.dissipation, self.el_residual]
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(p)):
            raise StateError("step report contains non-finite values")
        tol_id = 1e-8 * (self.kinetic_before + self.internal_before + 1.0)
        if self.stress_trace < -tol_id:
            raise StateError(f"stress trace {self.stress_trace:.3e} below -{tol_id:.3e}")
        object.__setattr__(self, "momentum_after", p)

    @property
    def total_before(self) -> float:
        return self.kinetic_before + self.internal_before

    @property
    def total_after(self) -> float:
        return self.kinetic_after + self.internal_after


def total_momentum(state: FluidState) -> np.ndarray:
    """Mass-weighted total velocity, sum_i m_i u_i."""
    return np.sum(state.masses[:, None] * state.velocities, axis=0)


def kinetic_energy(state: FluidState) -> float:
    """Sum of (1/2) m_i |u_i|^2."""
    return 0.5 * float(np.sum(state.masses * np.sum(state.velocities ** 2, axis=1)))


def total_entropy(state: FluidState) -> float:
    return float(np.sum(state.masses * state.entropies))


def second_moment(state: FluidState) -> float:
    """sum_i m_i |x_i|^2 (always finite for a valid state)."""
    return float(np.sum(state.masses * np.sum(state.positions ** 2, axis=1)))


def cloud_diameter(points: np.ndarray) -> float:
    pts = as_points(points)
    return float(np.max(np.ptp(pts, axis=0))) if pts.shape[0] > 1 else 0.0


def default_merge_tol(points: np.ndarray) -> float:
    """Default coincidence tolerance: 1e-9 times the cloud diameter.

    Exposed as a knob because the right scaling with the timestep and the
    particle count is an open modelling choice; a zero diameter falls back
    to an absolute 1e-9.
    """
    diam = cloud_diameter(points)
    return 1e-9 * (diam if diam > 0 else 1.0)


def merge_labels(points: np.ndarray, tol: float) -> np.ndarray:
    """Cluster points whose pairwise sup-norm distance is within ``tol``.

    Uses a spatial hash on coordinates quantized by ``tol`` and links
    neighboring cells, so chains of nearby points can merge into one
    cluster.  Returns an int array of cluster labels, numbered in order of
    first appearance.
    """
    pts = as_points(points)
    n, d = pts.shape
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    if tol <= 0:
        seen = {}
        for i in range(n):
            key = pts[i].tobytes()
            if key in seen:
                union(seen[key], i)
            else:
                seen[key] = i
    elif d == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        xo = pts[order, 0]
        for k in range(1, n):
            if xo[k] - xo[k - 1] <= tol:
                union(int(order[k - 1]), int(order[k]))
    else:
        cells = np.floor(pts / tol).astype(np.int64)
        table = {}
        offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * d))).T.reshape(-1, d)
        for i in range(n):
            key = tuple(cells[i])
            for off in offsets:
                nb = tuple(cells[i] + off)
                if nb in table:
                    for j in table[nb]:
                        if np.max(np.abs(pts[i] - pts[j])) <= tol:
                            union(i, j)
            table.setdefault(key, []).append(i)

    roots = np.array([find(i) for i in range(n)])
    labels = np.empty(n, dtype=np.int64)
    mapping = {}
    for i, r in enumerate(roots):
        if r not in mapping:
            mapping[r] = len(mapping)
        labels[i] = mapping[r]
    return labels


def push_forward_detailed(state: FluidState, tmap: TransportMap,
                          merge_tol: Optional[float] = None):
    """Push the state forward by an accepted map, merging coincident targets.

    Particles whose targets coincide within ``merge_tol`` (sup-norm) are
    merged: masses add, positions/velocities/entropies become mass-weighted
    averages.  Returns ``(new_state, labels)`` where ``labels[i]`` is the
    index of the merged particle that particle ``i`` was absorbed into.
    """
    if not tmap.accepted:
        raise StateError("push_forward requires an accepted transport map")
    targets = as_points(tmap.targets, state.dim)
    if targets.shape[0] != state.n:
        raise StateError("map length does not match state")
    if merge_tol is None:
        merge_tol = default_merge_tol(targets)
    labels = merge_labels(targets, merge_tol)
    k = int(labels.max()) + 1
    m = state.masses
    mass = np.bincount(labels, weights=m, minlength=k)
    # weighted averages; a zero-mass cluster keeps its plain mean
    wts = np.where(mass[labels] > 0, m / np.maximum(mass[labels], 1e-300),
                   1.0 / np.bincount(labels, minlength=k)[labels])
    d = state.dim
    pos = np.zeros((k, d))
    vel = np.zeros((k, d))
    for c in range(d):
        pos[:, c] = np.bincount(labels, weights=wts * targets[:, c], minlength=k)
        vel[:, c] = np.bincount(labels, weights=wts * state.velocities[:, c], minlength=k)
    ent = np.bincount(labels, weights=wts * state.entropies, minlength=k)
    if k < state.n:
        # regrouping can drift the sum by a few ulps per merge event; scale
        # back to the input total so long runs never walk out of the
        # unit-mass invariant
        total_in = float(np.sum(m))
        total_out = float(np.sum(mass))
        if total_out != total_in and abs(total_out - total_in) < 1e-9:
            mass = mass * (total_in / total_out)
    new = FluidState(masses=mass, positions=pos, velocities=vel, entropies=ent)
    return new, labels


def push_forward(state: FluidState, tmap: TransportMap,
                 merge_tol: Optional[float] = None) -> FluidState:
    """Like :func:`push_forward_detailed` but returns only the new state."""
    return push_forward_detailed(state, tmap, merge_tol)[0]
