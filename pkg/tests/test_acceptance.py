"""Acceptance suite: one test per criterion, each printing a PASS line.

Every tolerance is pinned here; a summary is echoed at the end of the
pytest run (see the terminal-summary hook in conftest).
"""
import time

import numpy as np
import pytest

from gasflow.core import FluidState, GasLaw, total_momentum
from gasflow.io import ingest_initial
from gasflow.polytropic import (SolverConfig, det_inequality_check, discretize,
                                minimize_step, _objective_value_grad)
from gasflow.pressureless import PressurelessStep, step
from gasflow.projection import ProjectionProblem, project
from gasflow.timeloop import (SimConfig, lipschitz_report, simulate)

from conftest import qp_oracle_projection, random_state

RESULTS = []


def record(name, ok, detail):
    RESULTS.append((name, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _suite_trajectories():
    """Canonical 1D runs exercised by the trajectory-level criteria."""
    runs = []
    s, _ = ingest_initial("symmetric-collision")
    runs.append(("symmetric-collision",
                 simulate(s, SimConfig(tau=0.25, t_end=2.0))))
    s = FluidState(masses=[1 / 3] * 3, positions=[-1.0, 0.0, 1.0],
                   velocities=[1.0, 0.0, -1.0], entropies=[0.0] * 3)
    runs.append(("three-cluster", simulate(s, SimConfig(tau=0.5, t_end=3.0))))
    s, _ = ingest_initial("paper-cluster", n=400)
    runs.append(("paper-cluster", simulate(s, SimConfig(tau=0.25, t_end=1.0))))
    s, _ = ingest_initial("uniform-block", n=96)
    cfg = SimConfig(tau=0.02, t_end=0.5, law=GasLaw(gamma=2.0, kappa=1.0))
    runs.append(("uniform-block-polytropic", simulate(s, cfg)))
    s, _ = ingest_initial("riemann-1d", n=128)
    cfg = SimConfig(tau=0.02, t_end=0.4, law=GasLaw(gamma=1.4, kappa=1.0))
    runs.append(("riemann-polytropic", simulate(s, cfg)))
    rng = np.random.default_rng(7)
    s = random_state(rng, 60, d=1, vel_scale=1.5, zero_momentum=True)
    runs.append(("random-pressureless", simulate(s, SimConfig(tau=0.1, t_end=1.0))))
    return runs


@pytest.fixture(scope="module")
def suite_runs():
    return _suite_trajectories()


def test_cluster_scenario_pooled_position():
    """Concentrated cluster: pooled block position matches the closed form
    2 (sqrt(1.25) - 1) within 2e-3 at n = 10^4; the error halves when the
    sample count doubles (within 30 percent); runtime under 10 s."""
    t0 = time.perf_counter()
    tau = 0.25
    exact = 2.0 * (np.sqrt(1.0 + tau) - 1.0)

    def pooled(n):
        state, _ = ingest_initial("paper-cluster", n=n)
        merged, _, _ = step(state, PressurelessStep(tau=tau))
        return float(merged.positions[np.argmax(merged.masses), 0])

    err_hi = abs(pooled(10_000) - exact)
    err_lo = abs(pooled(5_000) - exact)
    runtime = time.perf_counter() - t0
    ratio = err_lo / err_hi
    ok = err_hi <= 2e-3 and 1.4 <= ratio <= 2.6 and runtime < 10.0
    record("cluster-pooled-position", ok,
           f"err(1e4)={err_hi:.3e} (tol 2e-3), halving ratio={ratio:.3f} "
           f"(in [1.4, 2.6]), runtime={runtime:.2f}s (< 10)")


def test_per_step_energy_identity():
    """Pressureless energy identity on 1000 random 1D/2D states (n <= 200):
    |K_before - K_after - trace - cost/2| <= 1e-10 (1 + K_before),
    in under 30 s."""
    rng = np.random.default_rng(11)
    # warm the projection kernel before the clock starts measuring physics
    _ = step(random_state(rng, 5, d=2), PressurelessStep(tau=0.5))
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(1000):
        if trial % 10 < 7:
            n = int(rng.integers(2, 201))
            s = random_state(rng, n, d=1, vel_scale=1.5)
        else:
            n = int(rng.integers(2, 61))
            s = random_state(rng, n, d=2, vel_scale=1.0)
        tau = float(0.1 + 0.9 * rng.random())
        _, _, rep = step(s, PressurelessStep(tau=tau))
        gap = abs(rep.kinetic_before - rep.kinetic_after - rep.stress_trace
                  - 0.5 * rep.acc_cost_sq) / (1.0 + rep.kinetic_before)
        worst = max(worst, gap)
    runtime = time.perf_counter() - t0
    ok = worst <= 1e-10 and runtime < 30.0
    record("per-step-energy-identity", ok,
           f"worst normalized gap={worst:.3e} (tol 1e-10) over 1000 states, "
           f"runtime={runtime:.2f}s (< 30)")


def test_projection_oracle_agreement():
    """Projection agrees with the brute-force QP on 200 random instances
    with n <= 6 (d in {1, 2}) to 1e-6; contraction and idempotence hold on
    1000 random pairs."""
    rng = np.random.default_rng(23)
    worst = 0.0
    for trial in range(200):
        d = 1 if trial % 2 == 0 else 2
        n = int(rng.integers(2, 7))
        x = rng.normal(size=(n, d))
        m = rng.random(n) + 0.2
        m /= m.sum()
        y = x + rng.normal(size=(n, d))
        oracle = qp_oracle_projection(x, m, y)
        ours = project(ProjectionProblem(base_points=x, weights=m,
                                         targets=y)).projected
        worst = max(worst, float(np.max(np.abs(ours - oracle))))
    contraction_excess = 0.0
    idem_gap = 0.0
    for trial in range(1000):
        d = 1 if trial % 2 == 0 else 2
        n = int(rng.integers(2, 13))
        x = rng.normal(size=(n, d))
        m = rng.random(n) + 0.2
        m /= m.sum()
        a = x + rng.normal(size=(n, d))
        b = x + rng.normal(size=(n, d))
        Pa = project(ProjectionProblem(base_points=x, weights=m, targets=a)).projected
        Pb = project(ProjectionProblem(base_points=x, weights=m, targets=b)).projected
        lhs = float(np.sqrt(np.sum(m[:, None] * (Pa - Pb) ** 2)))
        rhs = float(np.sqrt(np.sum(m[:, None] * (a - b) ** 2)))
        contraction_excess = max(contraction_excess, lhs - rhs)
        PPa = project(ProjectionProblem(base_points=x, weights=m, targets=Pa)).projected
        idem_gap = max(idem_gap, float(np.max(np.abs(PPa - Pa))))
    ok = worst <= 1e-6 and contraction_excess <= 1e-9 and idem_gap <= 1e-7
    record("projection-oracle", ok,
           f"max |P - QP|={worst:.3e} (tol 1e-6) on 200 instances; "
           f"contraction excess={contraction_excess:.2e}, "
           f"idempotence gap={idem_gap:.2e} on 1000 pairs")


def test_polytropic_optimality_identities():
    """First-order optimality at the minimizer on 50 random 1D instances
    (n <= 128, gamma in {1.4, 2}): stationarity and trace-reduction
    residuals within 10x the solver tolerance; analytic gradient matches
    central differences to 1e-6 relative."""
    rng = np.random.default_rng(31)
    solver = SolverConfig(tol=1e-10)
    worst_el = 0.0
    worst_cramer = 0.0
    for trial in range(50):
        gamma = 1.4 if trial % 2 == 0 else 2.0
        law = GasLaw(gamma=gamma, kappa=float(0.2 + rng.random()))
        n = int(rng.integers(8, 129))
        s = random_state(rng, n, d=1, vel_scale=0.5)
        tau = float(0.05 + 0.3 * rng.random())
        disc = discretize(s)
        tmap, rep = minimize_step(disc, s, tau, law, solver)
        scale = 1.0 + rep.kinetic_before + rep.internal_before
        worst_el = max(worst_el, rep.el_residual / scale)
        y = s.positions + tau * s.velocities
        inner = -(1.5 / tau ** 2) * float(np.sum(
            s.masses * np.sum((y - tmap.targets) * tmap.targets, axis=1)))
        cramer = (gamma - 1.0) * rep.internal_after
        worst_cramer = max(worst_cramer, abs(inner - cramer) / scale)

    # analytic gradient vs central finite differences
    s = random_state(np.random.default_rng(5), 24, d=1, vel_scale=0.3)
    disc = discretize(s)
    law = GasLaw(gamma=1.4, kappa=0.8)
    tau = 0.2
    m = s.masses[disc.particle_of_node]
    y = disc.node_values(s.positions + tau * s.velocities)
    v = disc.node_positions * 1.03 + 0.01
    _, grad = _objective_value_grad(disc, m, y, v, tau, law)
    h = 1e-6
    worst_fd = 0.0
    for idx in range(disc.n_nodes):
        e = np.zeros_like(v)
        e[idx, 0] = h
        fp, _ = _objective_value_grad(disc, m, y, v + e, tau, law)
        fm, _ = _objective_value_grad(disc, m, y, v - e, tau, law)
        fd = (fp - fm) / (2 * h)
        worst_fd = max(worst_fd, abs(grad[idx, 0] - fd) / (1e-8 + abs(fd)))

    tol = 10.0 * solver.tol
    ok = worst_el <= tol and worst_cramer <= tol and worst_fd <= 1e-6
    record("polytropic-optimality", ok,
           f"EL residual={worst_el:.3e}, trace reduction={worst_cramer:.3e} "
           f"(tol {tol:.0e}); gradient vs FD rel err={worst_fd:.3e} (tol 1e-6)")


def test_polytropic_energy_inequality():
    """Every step of a 100-step 1D polytropic run satisfies the energy
    inequality with 1e-8 slack, and the total energy never increases."""
    s, _ = ingest_initial("uniform-block", n=128)
    cfg = SimConfig(tau=0.005, t_end=0.5, law=GasLaw(gamma=2.0, kappa=1.0))
    traj = simulate(s, cfg)
    assert len(traj.maps) == 100
    worst = -np.inf
    for f in traj.frames:
        if f.report is None:
            continue
        lhs = (f.report.kinetic_after + f.report.internal_after
               + f.report.stress_trace + 0.5 * f.report.acc_cost_sq
               + f.report.dissipation)
        rhs = f.report.kinetic_before + f.report.internal_before
        worst = max(worst, lhs - rhs)
    from gasflow.io import state_energies
    totals = [state_energies(f.state, cfg.law)["total"] for f in traj.frames]
    mono = all(b <= a + 1e-8 * (1 + totals[0])
               for a, b in zip(totals, totals[1:]))
    ok = worst <= 1e-8 and mono
    record("polytropic-energy-inequality", ok,
           f"max per-step excess={worst:.3e} (tol 1e-8) over 100 steps; "
           f"total energy monotone={mono}")


def test_skew_determinant_inequality():
    """det(S + A) >= det(S) - 1e-12 scale for 10^4 random psd/skew pairs
    in d = 2 and d = 3."""
    rng = np.random.default_rng(41)
    bad = 0
    for trial in range(10_000):
        d = 2 if trial % 2 == 0 else 3
        B = rng.normal(size=(d, d))
        S = B @ B.T
        C = rng.normal(size=(d, d))
        A = 0.5 * (C - C.T)
        if not det_inequality_check(S, A):
            bad += 1
    record("skew-determinant-inequality", bad == 0,
           f"{bad} violations out of 10000 pairs (d in {{2, 3}})")


def test_transport_lipschitz_bounds(suite_runs):
    """Every 1D trajectory in the suite obeys the transport-Lipschitz bound
    sqrt(2 E) |t - s| + 1e-8 and the second-moment growth bound."""
    worst = []
    for name, traj in suite_runs:
        rep = lipschitz_report(traj, tol=1e-8)
        worst.append((name, rep.max_ratio, rep.bound,
                      rep.ratio_ok and rep.moment_ok))
    ok = all(w[3] for w in worst)
    detail = "; ".join(f"{n}: ratio {r:.3f} <= bound {b:.3f}"
                       for n, r, b, _ in worst)
    record("transport-lipschitz", ok, detail)


def test_momentum_conservation(suite_runs):
    """Total momentum is preserved to 1e-10 at every frame of every suite
    run (and stays zero when initially zero)."""
    worst = 0.0
    for name, traj in suite_runs:
        p0 = total_momentum(traj.frames[0].state)
        for f in traj.frames:
            drift = float(np.max(np.abs(total_momentum(f.state) - p0)))
            worst = max(worst, drift / (1.0 + float(np.max(np.abs(p0)))))
    record("momentum-conservation", worst <= 1e-10,
           f"max normalized momentum drift={worst:.3e} (tol 1e-10) "
           f"over {len(suite_runs)} runs")
