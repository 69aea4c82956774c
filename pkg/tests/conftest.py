"""Shared test helpers: random states and an independent projection oracle."""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from gasflow.core import FluidState


def random_state(rng, n, d=1, vel_scale=1.0, zero_momentum=False,
                 min_gap=1e-3):
    """Random particle cloud with well-separated positions."""
    m = rng.random(n) + 0.2
    m /= m.sum()
    if d == 1:
        # spread sorted normals by min_gap instead of rejection sampling
        x = (np.sort(rng.normal(size=n)) + np.arange(n) * min_gap)[:, None]
    else:
        x = rng.normal(size=(n, d))
        # resample until no two points are closer than min_gap
        for _ in range(100):
            dmin = np.inf
            if n > 1:
                diff = x[:, None, :] - x[None, :, :]
                dist = np.sqrt(np.sum(diff ** 2, axis=-1))
                np.fill_diagonal(dist, np.inf)
                dmin = dist.min()
            if dmin > min_gap:
                break
            x = rng.normal(size=(n, d))
    u = vel_scale * rng.normal(size=(n, d))
    if zero_momentum:
        u -= np.sum(m[:, None] * u, axis=0)[None, :]
    s = rng.random(n)
    return FluidState(masses=m, positions=x, velocities=u, entropies=s)


def _constraint_rows(x, pairs):
    """Flattened constraint matrices A_a with A_a[i] = dx, A_a[j] = -dx."""
    n, d = x.shape
    P = len(pairs)
    A = np.zeros((P, n, d))
    for a, (i, j) in enumerate(pairs):
        dx = x[i] - x[j]
        A[a, i] = dx
        A[a, j] = -dx
    return A.reshape(P, n * d)


def qp_oracle_projection(x, m, y):
    """Brute-force weighted projection onto the pairwise monotone cone.

    Enumerates every subset of constraints as a candidate active set,
    solves the equality-constrained least-squares system for each, and
    returns the feasible candidate of minimal weighted distance.  The true
    projection always appears among the candidates, so the minimum is the
    projection.  Only viable for small n.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    m = np.asarray(m, float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n, d = x.shape
    if d == 1:
        order = np.argsort(x[:, 0], kind="stable")
        pairs = [(order[k], order[k + 1]) for k in range(n - 1)]
    else:
        pairs = list(itertools.combinations(range(n), 2))
    P = len(pairs)
    if P == 0:
        return y.copy()
    A = _constraint_rows(x, pairs)                      # (P, n*d)
    minv = np.repeat(1.0 / m, d)                        # (n*d,)
    K = A @ (minv[None, :] * A).T                       # weighted Gram
    c0 = A @ y.reshape(-1)
    scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y))))
    feas_tol = 1e-8 * scale ** 2

    best = y.copy().reshape(-1)
    best_obj = np.inf if np.any(c0 < -feas_tol) else 0.0
    if best_obj == 0.0:
        return y.copy()

    for k in range(1, min(P, n * d) + 1):
        subsets = np.array(list(itertools.combinations(range(P), k)))
        Ks = K[subsets[:, :, None], subsets[:, None, :]]
        Ks = Ks + 1e-13 * np.trace(Ks, axis1=1, axis2=2)[:, None, None] \
            * np.eye(k)[None]
        cs = c0[subsets]
        try:
            lam = np.linalg.solve(Ks, -cs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            lam = (np.linalg.pinv(Ks) @ (-cs[..., None]))[..., 0]
        # candidates T = y + M^{-1} A_S^T lam
        As = A[subsets]                                 # (C, k, n*d)
        cand = y.reshape(-1)[None, :] + np.einsum("ck,cke->ce", lam, As) * minv[None, :]
        gvals = cand @ A.T                              # (C, P)
        ok = np.all(gvals >= -feas_tol, axis=1)
        if not np.any(ok):
            continue
        diffs = (cand[ok] - y.reshape(-1)[None, :]).reshape(-1, n, d)
        objs = np.sum(m[None, :, None] * diffs ** 2, axis=(1, 2))
        idx = int(np.argmin(objs))
        if objs[idx] < best_obj:
            best_obj = float(objs[idx])
            best = cand[ok][idx]
    return best.reshape(n, d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS
    except Exception:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
