"""One timestep of the polytropic (pressure) case.

Each step minimizes the convex functional

    (3 / 4 tau^2) sum_i m_i |(x_i + tau u_i) - T_i|^2
        + sum_cells U(r, S) * det(sym grad T)^(1 - gamma) * vol

over monotone piecewise-affine maps.  The determinant energy blows up as a
cell degenerates, so it acts as its own barrier: in 1D the minimizer is
strictly increasing wherever the gas has mass, and the node-monotonicity
constraints are inactive there.  We exploit this with a damped Newton
method on the interior (tridiagonal Hessian); a projected-gradient
fallback handles contact through vacuum regions.  In two dimensions the
energy lives on a Delaunay triangulation of the particle cloud and a
backtracking Barzilai-Borwein descent is used; per-cell positive
definiteness is enforced by the barrier while pairwise monotonicity across
cells is checked a posteriori and reported, not claimed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import matrixkit as mk
from .core import (FluidState, GasLaw, StateError, StepReport, TransportMap,
                   as_points, kinetic_energy, push_forward_detailed)
from .pressureless import PressurelessStep, optimal_velocity
from .projection import ProjectionProblem, _pav, project


class SolverError(RuntimeError):
    """Minimization failed; carries the final residuals."""

    def __init__(self, message: str, grad_norm: float, iterations: int):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 10_000
    quad_pts: int = 48


def det_energy(A, gamma: float):
    """Convex volume-change energy det(sym A)^(1 - gamma); +inf outside
    the positive-definite cone.

    Accepts a single matrix or a stacked (..., d, d) array.
    """
    A = np.asarray(A, dtype=float)
    scalar = A.ndim == 0
    if scalar:
        A = A.reshape(1, 1)
    S = mk.sym(A)
    pd = mk.is_positive_definite(S)
    dt = np.where(pd, mk.det(S), 1.0)
    out = np.where(pd, dt ** (1.0 - gamma), np.inf)
    if scalar or out.ndim == 0:
        return float(out)
    return out


def det_inequality_check(S_psd, A_skew, tol: Optional[float] = None) -> bool:
    """Verify det(S + A) >= det(S) - tol for symmetric psd S and skew A."""
    S = np.asarray(S_psd, dtype=float)
    A = np.asarray(A_skew, dtype=float)
    d = S.shape[-1]
    if tol is None:
        scale = 1.0 + abs(float(mk.det(S))) + \
            (float(np.linalg.norm(S)) + float(np.linalg.norm(A))) ** d
        tol = 1e-12 * scale
    return bool(mk.det(S + A) >= mk.det(S) - tol)


@dataclass(frozen=True)
class EnergyDiscretization:
    """Piecewise-affine discretization carrying per-cell (density, entropy).

    For d = 1 the cells are the gaps between consecutive sorted particle
    positions; for d = 2 they are the simplices of a Delaunay triangulation
    of the cloud.  ``particle_of_node`` maps node order back to the owning
    particle index of the originating state (identity for direct
    constructions).  Cells with zero density carry no energy and are
    skipped by the barrier (vacuum).
    """

    node_positions: np.ndarray      # (N, d)
    cells: np.ndarray               # (K, d + 1) node indices
    volumes: np.ndarray             # (K,)
    densities: np.ndarray           # (K,)
    entropies: np.ndarray           # (K,)
    particle_of_node: np.ndarray    # (N,)
    edge_inv: Optional[np.ndarray] = None   # (K, d, d), d >= 2 only

    def __post_init__(self):
        if np.any(self.volumes <= 0):
            raise StateError("cell volumes must be positive")
        if abs(float(np.sum(self.densities * self.volumes)) - 1.0) > 1e-10:
            raise StateError("cell masses must sum to one")

    @property
    def dim(self) -> int:
        return self.node_positions.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.node_positions.shape[0]

    @property
    def active(self) -> np.ndarray:
        return self.densities > 0

    def node_values(self, particle_values) -> np.ndarray:
        v = as_points(particle_values, self.dim)
        return v[self.particle_of_node]

    def particle_values(self, node_values) -> np.ndarray:
        out = np.empty_like(node_values)
        out[self.particle_of_node] = node_values
        return out

    def cell_gradients(self, node_values) -> np.ndarray:
        """Per-cell gradient matrices of the piecewise-affine interpolant."""
        v = as_points(node_values, self.dim)
        if self.dim == 1:
            slopes = (v[self.cells[:, 1], 0] - v[self.cells[:, 0], 0]) / self.volumes
            return slopes.reshape(-1, 1, 1)
        F = np.stack([v[self.cells[:, c + 1]] - v[self.cells[:, 0]]
                      for c in range(self.dim)], axis=2)
        return F @ self.edge_inv


def discretize_1d(state: FluidState) -> EnergyDiscretization:
    order = np.argsort(state.positions[:, 0], kind="stable")
    x = state.positions[order, 0]
    if np.any(np.diff(x) <= 0):
        raise StateError("polytropic discretization requires distinct positions")
    m = state.masses[order]
    s = state.entropies[order]
    n = x.shape[0]
    if n < 2:
        raise StateError("need at least two particles to form cells")
    L = np.diff(x)
    # half of each particle's mass goes to each adjacent cell; the dangling
    # boundary halves fold into the end cells so the total is exact
    cm = 0.5 * (m[:-1] + m[1:])
    cm[0] += 0.5 * m[0]
    cm[-1] += 0.5 * m[-1]
    ws = 0.5 * np.stack([m[:-1], m[1:]])
    ws[0, 0] += 0.5 * m[0]
    ws[1, -1] += 0.5 * m[-1]
    with np.errstate(invalid="ignore"):
        cs = np.where(cm > 0, (ws[0] * s[:-1] + ws[1] * s[1:]) / np.maximum(cm, 1e-300), 0.0)
    cells = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return EnergyDiscretization(
        node_positions=x[:, None], cells=cells, volumes=L,
        densities=cm / L, entropies=cs, particle_of_node=order)


def discretize_2d(state: FluidState) -> EnergyDiscretization:
    from scipy.spatial import Delaunay, QhullError

    pts = state.positions
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise StateError(f"degenerate 2D cloud, cannot triangulate: {exc}") from exc
    cells = tri.simplices.astype(np.int64)
    d = pts.shape[1]
    E = np.stack([pts[cells[:, c + 1]] - pts[cells[:, 0]] for c in range(d)], axis=2)
    vols = np.abs(mk.det(E)) / float(np.prod(np.arange(1, d + 1)))
    keep = vols > 1e-14 * np.max(vols)
    cells, E, vols = cells[keep], E[keep], vols[keep]
    # split each node's mass equally among its incident simplices
    deg = np.bincount(cells.reshape(-1), minlength=pts.shape[0]).astype(float)
    share = state.masses / np.maximum(deg, 1.0)
    cm = np.sum(share[cells], axis=1)
    lost = 1.0 - float(np.sum(cm))
    if abs(lost) > 1e-12:  # nodes outside every kept simplex
        cm *= 1.0 / float(np.sum(cm))
    sshare = share * state.entropies
    with np.errstate(invalid="ignore"):
        cs = np.where(cm > 0, np.sum(sshare[cells], axis=1) / np.maximum(cm, 1e-300), 0.0)
    return EnergyDiscretization(
        node_positions=pts, cells=cells, volumes=vols, densities=cm / vols,
        entropies=cs, particle_of_node=np.arange(pts.shape[0]),
        edge_inv=np.linalg.inv(E))


def discretize(state: FluidState) -> EnergyDiscretization:
    if state.dim == 1:
        return discretize_1d(state)
    if state.dim == 2:
        return discretize_2d(state)
    raise StateError("energy discretization supports d in {1, 2}")


def _cell_energy_weights(disc: EnergyDiscretization, law: GasLaw) -> np.ndarray:
    """U(r_k, S_k) per cell; zero on vacuum."""
    U = np.zeros_like(disc.densities)
    act = disc.active
    U[act] = law.energy_density(disc.densities[act], disc.entropies[act])
    return U


def internal_energy(disc: EnergyDiscretization, tmap, law: GasLaw) -> float:
    """sum_cells U(r, S) det(sym grad T)^(1 - gamma) vol over active cells.

    ``tmap`` may be a TransportMap (targets in particle order) or a raw
    array of node values.  Returns +inf if any active cell gradient is not
    positive definite.
    """
    targets = tmap.targets if isinstance(tmap, TransportMap) else tmap
    v = disc.node_values(targets)
    G = disc.cell_gradients(v)
    U = _cell_energy_weights(disc, law)
    act = disc.active
    if not np.any(act):
        return 0.0
    h = det_energy(G[act], law.gamma)
    if np.any(~np.isfinite(h)):
        return float("inf")
    return float(np.sum(U[act] * h * disc.volumes[act]))


def objective(disc: EnergyDiscretization, state: FluidState, tmap,
              tau: float, law: GasLaw) -> float:
    """Quadratic transport cost plus internal energy of the mapped state."""
    targets = tmap.targets if isinstance(tmap, TransportMap) else as_points(tmap, state.dim)
    y = state.positions + tau * state.velocities
    quad = (0.75 / tau ** 2) * float(
        np.sum(state.masses * np.sum((y - targets) ** 2, axis=1)))
    if law.mode == "pressureless" or law.kappa == 0.0:
        return quad
    return quad + internal_energy(disc, targets, law)


def _energy_value_grad(disc: EnergyDiscretization, v: np.ndarray, law: GasLaw):
    """Internal energy and its gradient with respect to node values."""
    gamma = law.gamma
    U = _cell_energy_weights(disc, law)
    act = disc.active
    grad = np.zeros_like(v)
    if not np.any(act):
        return 0.0, grad
    G = disc.cell_gradients(v)[act]
    S = mk.sym(G)
    pd = mk.is_positive_definite(S)
    if not np.all(pd):
        return float("inf"), grad
    dt = mk.det(S)
    h = dt ** (1.0 - gamma)
    w = U[act] * disc.volumes[act]
    value = float(np.sum(w * h))
    coef = w * (1.0 - gamma) * dt ** (-gamma)
    cof = mk.cofactor(S)
    cells = disc.cells[act]
    if disc.dim == 1:
        # d slope / d v_right = 1 / L, and the cell weight carries vol = L
        per = coef / disc.volumes[act]
        np.add.at(grad[:, 0], cells[:, 1], per)
        np.add.at(grad[:, 0], cells[:, 0], -per)
        return value, grad
    dF = cof @ np.swapaxes(disc.edge_inv[act], -1, -2) * coef[:, None, None]
    for c in range(disc.dim):
        np.add.at(grad, cells[:, c + 1], dF[:, :, c])
        np.add.at(grad, cells[:, 0], -dF[:, :, c])
    return value, grad


def _objective_value_grad(disc, m_nodes, y_nodes, v, tau, law):
    quad_res = v - y_nodes
    quad = (0.75 / tau ** 2) * float(np.sum(m_nodes * np.sum(quad_res ** 2, axis=1)))
    gquad = (1.5 / tau ** 2) * m_nodes[:, None] * quad_res
    ev, eg = _energy_value_grad(disc, v, law)
    return quad + ev, gquad + eg


def _solve_newton_1d(disc, m, y, tau, law, cfg: SolverConfig):
    """Damped Newton on the barrier-smooth 1D objective.

    ``m``/``y`` are in node order.  Falls back to projected gradient when
    the line search stalls on an active vacuum contact.
    """
    from scipy.linalg import solveh_banded

    x = disc.node_positions[:, 0]
    L = disc.volumes
    U = _cell_energy_weights(disc, law)
    act = disc.active
    gamma = law.gamma
    n = x.shape[0]
    v = x.copy()
    yv = y[:, 0]
    quad_diag = (1.5 / tau ** 2) * m
    gscale = (1.5 / tau ** 2) * (1.0 + float(np.sqrt(np.sum(m * yv ** 2))))

    def value_grad(vv):
        s = np.diff(vv) / L
        if np.any(s[act] <= 0) or np.any(s < 0):
            return np.inf, None, None
        f = (0.75 / tau ** 2) * float(np.sum(m * (vv - yv) ** 2))
        g = quad_diag * (vv - yv)
        if np.any(act):
            sa = s[act]
            f += float(np.sum(U[act] * L[act] * sa ** (1.0 - gamma)))
            per = (1.0 - gamma) * U[act] * sa ** (-gamma)
            np.add.at(g, disc.cells[act, 1], per)
            np.add.at(g, disc.cells[act, 0], -per)
        return f, g, s

    f, g, s = value_grad(v)
    it = 0
    stalled = False
    for it in range(1, cfg.max_iters + 1):
        gnorm = float(np.sqrt(np.sum(g * g / m)))
        if gnorm <= cfg.tol * gscale:
            break
        # assemble the tridiagonal Hessian in banded storage
        curv = np.zeros(n - 1)
        curv[act] = gamma * (gamma - 1.0) * U[act] * s[act] ** (-gamma - 1.0) / L[act]
        ab = np.zeros((2, n))
        ab[1] = quad_diag
        ab[1, :-1] += curv
        ab[1, 1:] += curv
        ab[0, 1:] = -curv
        step = -solveh_banded(ab, g)
        # keep slopes positive on gas cells, nonnegative elsewhere
        ds = np.diff(step) / L
        alpha = 1.0
        shrink = ds < 0
        if np.any(shrink & act):
            alpha = min(alpha, 0.995 * float(np.min(-s[shrink & act] / ds[shrink & act])))
        vac_shrink = shrink & ~act
        if np.any(vac_shrink):
            alpha = min(alpha, float(np.min(-s[vac_shrink] / ds[vac_shrink])))
        gd = float(np.sum(g * step))
        accepted = False
        while alpha > 1e-15:
            f_new, g_new, s_new = value_grad(v + alpha * step)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * alpha * gd:
                v = v + alpha * step
                f, g, s = f_new, g_new, s_new
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stalled = True
            break
    else:
        stalled = True

    if stalled:
        v, f, it2 = _projected_gradient_1d(disc, m, yv, tau, law, v, cfg)
        it += it2
        _, g, _ = value_grad(v)
        if g is None:
            g = np.zeros(n)
    gnorm = float(np.sqrt(np.sum(g * g / m)))
    return v[:, None], it, gnorm


def _projected_gradient_1d(disc, m, yv, tau, law, v0, cfg: SolverConfig):
    """Monotone-projected gradient descent; handles vacuum contact."""
    L = disc.volumes
    U = _cell_energy_weights(disc, law)
    act = disc.active
    gamma = law.gamma

    def value(vv):
        s = np.diff(vv) / L
        if np.any(s[act] <= 0) or np.any(s < -1e-15):
            return np.inf
        f = (0.75 / tau ** 2) * float(np.sum(m * (vv - yv) ** 2))
        if np.any(act):
            f += float(np.sum(U[act] * L[act] * s[act] ** (1.0 - gamma)))
        return f

    def grad(vv):
        s = np.diff(vv) / L
        g = (1.5 / tau ** 2) * m * (vv - yv)
        if np.any(act):
            per = (1.0 - gamma) * U[act] * np.maximum(s[act], 1e-300) ** (-gamma)
            np.add.at(g, disc.cells[act, 1], per)
            np.add.at(g, disc.cells[act, 0], -per)
        return g

    v = v0.copy()
    f = value(v)
    eta = tau ** 2 / 3.0
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        g = grad(v)
        cand = None
        f_new = np.inf
        while eta > 1e-18:
            trial = _pav(v - eta * g / m, m)
            f_trial = value(trial)
            if np.isfinite(f_trial) and f_trial < f - 1e-16 * (1 + abs(f)):
                cand, f_new = trial, f_trial
                break
            eta *= 0.5
        if cand is None:
            break
        rel = (f - f_new) / (1.0 + abs(f))
        v, f = cand, f_new
        eta *= 1.3
        if rel < cfg.tol:
            break
    return v, f, iters


def _solve_bb_nd(disc, m_nodes, y_nodes, tau, law, cfg: SolverConfig):
    """Backtracking Barzilai-Borwein descent for d >= 2."""
    v = disc.node_positions.copy()
    f, g = _objective_value_grad(disc, m_nodes, y_nodes, v, tau, law)
    gscale = (1.5 / tau ** 2) * (1.0 + float(np.sqrt(np.sum(m_nodes * np.sum(y_nodes ** 2, axis=1)))))
    eta = tau ** 2 / 3.0 / max(1.0, float(np.max(m_nodes)) * disc.n_nodes)
    v_prev = None
    g_prev = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gnorm = float(np.sqrt(np.sum(np.sum(g * g, axis=1) / m_nodes)))
        if gnorm <= cfg.tol * gscale:
            break
        if v_prev is not None:
            dv = (v - v_prev).ravel()
            dg = (g - g_prev).ravel()
            denom = float(np.dot(dg, dg))
            if denom > 0:
                eta = max(1e-18, float(np.dot(dv, dg)) / denom)
        accepted = False
        a = eta
        gd = -float(np.sum(g * g))
        while a > 1e-18:
            cand = v - a * g
            f_new, g_new = _objective_value_grad(disc, m_nodes, y_nodes, cand, tau, law)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * a * gd:
                v_prev, g_prev = v, g
                v, f, g = cand, f_new, g_new
                accepted = True
                break
            a *= 0.5
        if not accepted:
            break
    gnorm = float(np.sqrt(np.sum(np.sum(g * g, axis=1) / m_nodes)))
    return v, it, gnorm


def dissipation_integral(disc: EnergyDiscretization, tmap: TransportMap,
                         tau: float, law: GasLaw, quad_pts: int = 48) -> float:
    """Time-integrated internal-energy dissipation along the linear path.

    Integrates ``s * sum_cells [p * tr(cof^T grad V)^2 + P * tr((cof^T
    grad V)^2)] * det^(-gamma-1) * vol`` over s in (0, tau) by Gauss
    quadrature, where the cell matrices follow the straight-line
    interpolation from the identity to the accepted map.
    """
    act = disc.active
    if not np.any(act) or law.mode == "pressureless":
        return 0.0
    v = disc.node_values(tmap.targets)
    Gv = disc.cell_gradients((v - disc.node_positions) / tau)[act]
    B = mk.sym(Gv)
    P = law.pressure(disc.densities[act], disc.entropies[act])
    p = law.pressure_gap(disc.densities[act], disc.entropies[act])
    vol = disc.volumes[act]
    eye = np.eye(disc.dim)
    nodes, weights = np.polynomial.legendre.leggauss(quad_pts)
    s_pts = 0.5 * tau * (nodes + 1.0)
    s_wts = 0.5 * tau * weights
    total = 0.0
    gamma = law.gamma
    for s, w in zip(s_pts, s_wts):
        eps = eye + s * B
        dt = mk.det(eps)
        cofB = np.swapaxes(mk.cofactor(eps), -1, -2) @ B
        tr1 = np.trace(cofB, axis1=-2, axis2=-1)
        tr2 = np.trace(cofB @ cofB, axis1=-2, axis2=-1)
        integrand = float(np.sum((p * tr1 ** 2 + P * tr2) * dt ** (-gamma - 1.0) * vol))
        total += w * s * integrand
    return total


def _pressure_gradient_terms(disc, v, law):
    """Pressure terms of the optimality identities at node values v.

    Returns (with_T, with_id): the energy's directional derivative paired
    against the map itself and against the identity map.
    """
    act = disc.active
    if not np.any(act):
        return 0.0, 0.0
    G = disc.cell_gradients(v)[act]
    S = mk.sym(G)
    dt = mk.det(S)
    cof = mk.cofactor(S)
    P = law.pressure(disc.densities[act], disc.entropies[act])
    vol = disc.volumes[act]
    cofT = np.swapaxes(cof, -1, -2)
    with_T = float(np.sum(P * dt ** (-law.gamma)
                          * np.trace(cofT @ G, axis1=-2, axis2=-1) * vol))
    with_id = float(np.sum(P * dt ** (-law.gamma)
                           * np.trace(cofT, axis1=-2, axis2=-1) * vol))
    return with_T, with_id


def minimize_step(disc: EnergyDiscretization, state: FluidState, tau: float,
                  law: GasLaw, solver_cfg: Optional[SolverConfig] = None
                  ) -> Tuple[TransportMap, StepReport]:
    """Minimize the step functional and assemble the energy ledger.

    With ``kappa = 0`` (or a pressureless law) the energy vanishes and the
    step reduces to the bare monotone projection.
    """
    cfg = solver_cfg or SolverConfig()
    if law.mode == "pressureless" or law.kappa == 0.0:
        res = project(ProjectionProblem(base_points=state.positions,
                                        weights=state.masses,
                                        targets=state.positions + tau * state.velocities))
        targets = res.projected
        iters = res.sweeps_used
        gnorm = 0.0
    else:
        m_nodes = state.masses[disc.particle_of_node]
        y_nodes = disc.node_values(state.positions + tau * state.velocities)
        if disc.dim == 1:
            vnodes, iters, gnorm = _solve_newton_1d(disc, m_nodes, y_nodes, tau, law, cfg)
        else:
            vnodes, iters, gnorm = _solve_bb_nd(disc, m_nodes, y_nodes, tau, law, cfg)
        targets = disc.particle_values(vnodes)

    tmap = TransportMap(targets=targets, tau=tau, accepted=True)
    y = state.positions + tau * state.velocities
    resid = y - targets
    m = state.masses
    quad_cost = (0.75 / tau ** 2) * float(np.sum(m * np.sum(resid ** 2, axis=1)))

    vnode = disc.node_values(targets)
    with_T, with_id = _pressure_gradient_terms(disc, vnode, law) \
        if law.mode == "polytropic" and law.kappa > 0 else (0.0, 0.0)
    inner_T = (1.5 / tau ** 2) * float(np.sum(m * np.sum(resid * targets, axis=1)))
    inner_x = (1.5 / tau ** 2) * float(np.sum(m * np.sum(resid * state.positions, axis=1)))
    el_residual = abs(inner_T + with_T)
    stress = -inner_x - with_id

    U = _cell_energy_weights(disc, law)
    internal_before = float(np.sum(U * disc.volumes))
    internal_after = internal_energy(disc, targets, law) \
        if law.mode == "polytropic" and law.kappa > 0 else 0.0
    dissip = dissipation_integral(disc, tmap, tau, law, cfg.quad_pts) \
        if law.mode == "polytropic" and law.kappa > 0 else 0.0

    W = optimal_velocity(state.positions, state.velocities, targets, tau)
    kin_after = 0.5 * float(np.sum(m * np.sum(W ** 2, axis=1)))
    report = StepReport(
        acc_cost_sq=quad_cost,
        stress_trace=stress,
        kinetic_before=kinetic_energy(state),
        kinetic_after=kin_after,
        internal_before=internal_before if law.mode == "polytropic" else 0.0,
        internal_after=internal_after,
        dissipation=dissip,
        momentum_after=np.sum(m[:, None] * W, axis=0),
        el_residual=el_residual,
        solver_iterations=iters,
    )
    return tmap, report


def advance(state: FluidState, law: GasLaw, cfg: PressurelessStep,
            solver_cfg: Optional[SolverConfig] = None):
    """Full polytropic step: minimize, update velocities, push forward."""
    disc = discretize(state)
    tmap, report = minimize_step(disc, state, cfg.tau, law, solver_cfg)
    W = optimal_velocity(state.positions, state.velocities, tmap.targets, cfg.tau)
    merged, _ = push_forward_detailed(state.with_velocities(W), tmap, cfg.merge_tol)
    return merged, tmap, report
