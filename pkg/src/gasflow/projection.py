"""Weighted metric projection onto the discrete cone of monotone maps.

The feasible set is the intersection of the pairwise half-spaces
``<T_i - T_j, x_i - x_j> >= 0`` under the mass-weighted inner product
``sum_i m_i <a_i, b_i>``.  In one dimension (base points sorted) this is
weighted isotonic regression, solved exactly by pool-adjacent-violators.
In higher dimensions we run Dykstra's alternating projections with
per-constraint correction memory, which converges to the metric projection
onto the intersection (plain cyclic projection would only find a feasible
point).

The pairwise-constraint cone is adopted here as the canonical
discretization of monotonicity for atomic measures; no continuum
(functional) representation of maps is attempted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import as_points, merge_labels

try:  # pragma: no cover - numba presence is environment-dependent
    from numba import njit

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(**kwargs):
        def wrap(fn):
            return fn
        return wrap


class ProjectionError(RuntimeError):
    """Projection did not converge; carries the last max violation."""

    def __init__(self, message: str, max_violation: float, sweeps: int):
        super().__init__(message)
        self.max_violation = max_violation
        self.sweeps = sweeps


@dataclass
class ProjectionProblem:
    """One projection instance: base points, weights, raw targets.

    ``tol_feas`` bounds the worst constraint violation on success (defaults
    to 1e-10 times the squared data scale), ``tol_opt`` the per-sweep
    displacement, ``max_sweeps`` the Dykstra sweep budget.  ``shuffle``
    randomizes the constraint order per sweep behind ``seed`` (the default
    is deterministic lexicographic order).  ``prune_k > 0`` restricts the
    constraints to the k nearest neighbors of each point; pruning changes
    the feasible cone and is NOT the default.
    """

    base_points: np.ndarray
    weights: np.ndarray
    targets: np.ndarray
    tol_feas: Optional[float] = None
    tol_opt: float = 1e-10
    max_sweeps: int = 5000
    shuffle: bool = False
    seed: int = 0
    prune_k: int = 0

    def __post_init__(self):
        self.base_points = as_points(self.base_points)
        self.targets = as_points(self.targets, self.base_points.shape[1])
        self.weights = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if self.weights.ndim != 1 or self.weights.shape[0] != self.base_points.shape[0]:
            raise ValueError("weights must be 1D and match base_points")
        if self.targets.shape[0] != self.base_points.shape[0]:
            raise ValueError("targets must match base_points")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.base_points))),
                   float(np.max(np.abs(self.targets))))

    def feas_tol(self) -> float:
        return self.tol_feas if self.tol_feas is not None else 1e-10 * self.scale ** 2


@dataclass
class ProjectionResult:
    projected: np.ndarray
    sweeps_used: int
    max_violation: float
    dual_trace: Optional[float] = None


def is_monotone(base_points, values, tol: float) -> Tuple[bool, Tuple[int, int], float]:
    """Check ``<v_i - v_j, x_i - x_j> >= -tol`` for all pairs.

    Returns ``(ok, (i, j), worst)`` where ``(i, j)`` is the most violated
    pair and ``worst`` its pairing value (0.0 when fewer than two points).
    """
    x = as_points(base_points)
    v = as_points(values, x.shape[1])
    n = x.shape[0]
    if n < 2:
        return True, (0, 0), 0.0
    worst = np.inf
    pair = (0, 0)
    a = np.sum(v * x, axis=1)
    chunk = max(1, int(2 ** 22 // max(n, 1)))  # bound the O(n^2) scan memory
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        g = a[s:e, None] + a[None, :] - v[s:e] @ x.T - x[s:e] @ v.T
        rows = np.arange(e - s)
        g[rows, s + rows] = np.inf
        idx = int(np.argmin(g))
        i_loc, j = divmod(idx, n)
        val = float(g[i_loc, j])
        if val < worst:
            worst = val
            pair = (s + i_loc, j)
    if not np.isfinite(worst):
        worst = 0.0
    return worst >= -tol, pair, worst


def _pav(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted pool-adjacent-violators for nondecreasing fits, O(n)."""
    n = y.shape[0]
    vals = np.empty(n)
    wts = np.empty(n)
    cnts = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        vals[top] = y[i]
        wts[top] = w[i]
        cnts[top] = 1
        top += 1
        while top > 1 and vals[top - 2] > vals[top - 1]:
            wt = wts[top - 2] + wts[top - 1]
            vals[top - 2] = (vals[top - 2] * wts[top - 2]
                             + vals[top - 1] * wts[top - 1]) / wt
            wts[top - 2] = wt
            cnts[top - 2] += cnts[top - 1]
            top -= 1
    out = np.empty(n)
    k = 0
    for b in range(top):
        out[k:k + cnts[b]] = vals[b]
        k += cnts[b]
    return out


def project_1d(problem: ProjectionProblem) -> ProjectionResult:
    """Exact weighted projection onto nondecreasing sequences (d = 1).

    Base points must be sorted ascending; tied base points are pre-pooled
    into one block (summed weight, weighted-mean target) and un-pooled
    afterwards, matching the barycentric treatment of coincident particles.
    ``dual_trace`` integrates the nonnegative constraint multipliers over
    the gaps between base points.
    """
    if problem.base_points.shape[1] != 1:
        raise ValueError("project_1d requires d = 1")
    x = problem.base_points[:, 0]
    if np.any(np.diff(x) < 0):
        raise ValueError("unsorted base points")
    y = problem.targets[:, 0]
    w = problem.weights
    n = x.shape[0]

    new_block = np.concatenate(([True], np.diff(x) > 0))
    block_of = np.cumsum(new_block) - 1
    k = int(block_of[-1]) + 1
    if k < n:
        bw = np.bincount(block_of, weights=w, minlength=k)
        by = np.bincount(block_of, weights=w * y, minlength=k) / bw
        fitted = _pav(by, bw)[block_of]
    else:
        fitted = _pav(y, w)

    # cumulative KKT multipliers of the adjacent constraints are
    # nonnegative; their integral against the gap lengths is the discrete
    # stress mass seen by the projection
    if n > 1:
        mult = np.cumsum(w * (fitted - y))[:-1]
        dual_trace = float(np.sum(np.maximum(mult, 0.0) * np.diff(x)))
        viol = max(0.0, -float(np.min(np.diff(fitted))))
    else:
        dual_trace = 0.0
        viol = 0.0
    return ProjectionResult(projected=fitted[:, None], sweeps_used=1,
                            max_violation=viol, dual_trace=dual_trace)


def halfspace_correct(Ti, Tj, xi, xj, mi: float, mj: float):
    """Exact weighted projection of one pair onto its monotonicity half-space.

    If ``c = <Ti - Tj, xi - xj>`` is negative, the pair moves along
    ``xi - xj`` scaled by the inverse masses until the constraint holds
    with equality; non-violating pairs are returned unchanged.
    """
    Ti = np.asarray(Ti, dtype=float).reshape(-1).copy()
    Tj = np.asarray(Tj, dtype=float).reshape(-1).copy()
    xi = np.asarray(xi, dtype=float).reshape(-1)
    xj = np.asarray(xj, dtype=float).reshape(-1)
    if mi <= 0 or mj <= 0:
        raise ValueError("masses must be positive")
    dx = xi - xj
    q = float(np.dot(dx, dx))
    if q == 0.0:
        raise ValueError("degenerate pair: coinciding base points")
    c = float(np.dot(Ti - Tj, dx))
    if c >= 0.0:
        return Ti, Tj
    lam = -c / (q * (1.0 / mi + 1.0 / mj))
    return Ti + (lam / mi) * dx, Tj - (lam / mj) * dx


@njit(cache=True)
def _dykstra_sweeps(x, m, pairs, order, T, lam, tol_feas, stop_disp, n_sweeps):
    """Run up to ``n_sweeps`` Dykstra sweeps in place.

    ``lam[a] >= 0`` is the retained correction of constraint ``a`` (the
    update is equivalent to dual coordinate ascent).  Returns
    (sweeps_done, max_violation, converged).
    """
    npairs = pairs.shape[0]
    d = x.shape[1]
    maxviol = 0.0
    for sweep in range(n_sweeps):
        disp2 = 0.0
        for k in range(npairs):
            a = order[k]
            i = pairs[a, 0]
            j = pairs[a, 1]
            q = 0.0
            c0 = 0.0
            for c in range(d):
                dxc = x[i, c] - x[j, c]
                q += dxc * dxc
                c0 += (T[i, c] - T[j, c]) * dxc
            denom = q * (1.0 / m[i] + 1.0 / m[j])
            lam_new = lam[a] - c0 / denom
            if lam_new < 0.0:
                lam_new = 0.0
            delta = lam_new - lam[a]
            if delta != 0.0:
                for c in range(d):
                    dxc = x[i, c] - x[j, c]
                    T[i, c] += delta * dxc / m[i]
                    T[j, c] -= delta * dxc / m[j]
                disp2 += delta * delta * denom
            lam[a] = lam_new
        maxviol = 0.0
        for a in range(npairs):
            i = pairs[a, 0]
            j = pairs[a, 1]
            c0 = 0.0
            for c in range(d):
                dxc = x[i, c] - x[j, c]
                c0 += (T[i, c] - T[j, c]) * dxc
            if -c0 > maxviol:
                maxviol = -c0
        if maxviol <= tol_feas and np.sqrt(disp2) <= stop_disp:
            return sweep + 1, maxviol, True
    return n_sweeps, maxviol, False


def _all_pairs(n: int) -> np.ndarray:
    iu = np.triu_indices(n, k=1)
    return np.stack([iu[0], iu[1]], axis=1).astype(np.int64)


def _active_set_refine(x, m, y, pairs, lam, tol_feas, max_rounds=None):
    """Finish the projection with a dual active-set method.

    Dykstra's multipliers identify the (approximately) active constraints;
    solving the equality-constrained least-squares problem on that set and
    exchanging constraints by primal violation / dual sign then reaches the
    projection to solver precision in a handful of small dense solves.
    Returns ``(T, ok)``; ``ok`` is False if the exchange loop cycled.
    """
    n, d = x.shape
    P = pairs.shape[0]
    dx = x[pairs[:, 0]] - x[pairs[:, 1]]
    c0 = np.sum((y[pairs[:, 0]] - y[pairs[:, 1]]) * dx, axis=1)
    scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y))))
    dual_tol = 1e-14 * scale ** 2
    active = set(np.flatnonzero(lam > 1e-12 * scale).tolist())
    active |= set(np.flatnonzero(c0 < -tol_feas).tolist())
    if max_rounds is None:
        max_rounds = 100 + 4 * n * d

    def gram(idx):
        ia, ja = pairs[idx, 0], pairs[idx, 1]
        dxa = dx[idx]
        coup = ((ia[:, None] == ia[None, :]) / m[ia][:, None]
                - (ia[:, None] == ja[None, :]) / m[ia][:, None]
                - (ja[:, None] == ia[None, :]) / m[ja][:, None]
                + (ja[:, None] == ja[None, :]) / m[ja][:, None])
        return (dxa @ dxa.T) * coup

    T = y.copy()
    for _ in range(max_rounds):
        idx = np.array(sorted(active), dtype=np.int64)
        if idx.size == 0:
            T = y.copy()
            lam_a = np.zeros(0)
        else:
            K = gram(idx)
            lam_a, *_ = np.linalg.lstsq(K, -c0[idx], rcond=None)
            neg = lam_a < -dual_tol
            if np.any(neg):
                for a in idx[neg]:
                    active.discard(int(a))
                continue
            T = y.copy()
            np.add.at(T, pairs[idx, 0], (lam_a / m[pairs[idx, 0]])[:, None] * dx[idx])
            np.add.at(T, pairs[idx, 1], -(lam_a / m[pairs[idx, 1]])[:, None] * dx[idx])
        g = np.sum((T[pairs[:, 0]] - T[pairs[:, 1]]) * dx, axis=1)
        worst = np.argsort(g)
        violated = worst[g[worst] < -tol_feas]
        if violated.size == 0:
            return T, True
        for a in violated[:10]:
            active.add(int(a))
    return T, False


def _pruned_pairs(points: np.ndarray, k: int) -> np.ndarray:
    from scipy.spatial import cKDTree

    n = points.shape[0]
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=min(k + 1, n))
    pairs = set()
    for i in range(n):
        for j in np.atleast_1d(nbr[i]):
            if i != j:
                pairs.add((min(i, int(j)), max(i, int(j))))
    out = np.array(sorted(pairs), dtype=np.int64)
    return out.reshape(-1, 2)


def _radial_polish(y, m, T):
    """Impose the exact scaling/translation optimality of the projection.

    The cone is closed under nonnegative scaling and under adding constant
    vectors, so the true projection satisfies ``sum m (y - T) = 0`` and
    ``sum m <y - T, T> = 0`` exactly.  Enforcing both on the Dykstra output
    keeps feasibility (homogeneous constraints) and removes the first-order
    component of the residual error.
    """
    mt = m[:, None]
    mean_y = np.sum(mt * y, axis=0)
    mean_T = np.sum(mt * T, axis=0)
    C = T - mean_T
    Y = y - mean_y
    cc = float(np.sum(mt * C * C))
    if cc > 0.0:
        a = max(0.0, float(np.sum(mt * Y * C)) / cc)
    else:
        a = 1.0
    return a * C + mean_y


def project_nd(problem: ProjectionProblem) -> ProjectionResult:
    """Dykstra projection onto the pairwise monotone cone, any d >= 1.

    Coinciding base points are pre-pooled (summed weight, weighted-mean
    target) since their constraint is vacuous but the barycentric treatment
    requires one value per location.  Raises :class:`ProjectionError` when
    the sweep budget is exhausted.
    """
    x = problem.base_points
    y = problem.targets
    w = problem.weights
    n, d = x.shape

    labels = merge_labels(x, 0.0)
    k = int(labels.max()) + 1
    pooled = k < n
    if pooled:
        pw = np.bincount(labels, weights=w, minlength=k)
        px = np.zeros((k, d))
        py = np.zeros((k, d))
        for c in range(d):
            px[:, c] = np.bincount(labels, weights=w * x[:, c], minlength=k) / pw
            py[:, c] = np.bincount(labels, weights=w * y[:, c], minlength=k) / pw
    else:
        pw, px, py = w, x, y

    if k == 1:
        T = py.copy()
        viol = 0.0
        sweeps = 0
    else:
        if problem.prune_k > 0:
            pairs = _pruned_pairs(px, problem.prune_k)
        else:
            pairs = _all_pairs(k)
        T = py.copy()
        lam = np.zeros(pairs.shape[0])
        tol_feas = problem.feas_tol()
        ynorm = float(np.sqrt(np.sum(pw[:, None] * py ** 2)))
        stop_disp = problem.tol_opt * (1.0 + ynorm)

        def run(tol, budget, T, lam):
            if problem.shuffle:
                rng = np.random.default_rng(problem.seed)
                done_total = 0
                converged = False
                viol = np.inf
                while done_total < budget and not converged:
                    order = rng.permutation(pairs.shape[0]).astype(np.int64)
                    done, viol, converged = _dykstra_sweeps(
                        px, pw, pairs, order, T, lam, tol, stop_disp, 1)
                    done_total += done
                return done_total, viol, converged
            order = np.arange(pairs.shape[0], dtype=np.int64)
            return _dykstra_sweeps(px, pw, pairs, order, T, lam, tol,
                                   stop_disp, budget)

        # phase 1: cheap Dykstra warm start; phase 2: dual active-set
        # exchange finishes to solver precision, with Dykstra tail as the
        # fallback when the exchange cycles
        phase1 = max(tol_feas, 1e-6 * problem.scale ** 2)
        sweeps, viol, _ = run(phase1, problem.max_sweeps, T, lam)
        refined, ok = _active_set_refine(px, pw, py, pairs, lam, tol_feas)
        if ok:
            T = refined
        else:
            more, viol, converged = run(tol_feas,
                                        max(problem.max_sweeps - sweeps, 1),
                                        T, lam)
            sweeps += more
            if not converged:
                raise ProjectionError(
                    f"projection did not converge in {sweeps} sweeps "
                    f"(max violation {viol:.3e})", float(viol), int(sweeps))
        if problem.prune_k == 0:
            T = _radial_polish(py, pw, T)
        dxp = px[pairs[:, 0]] - px[pairs[:, 1]]
        g = np.sum((T[pairs[:, 0]] - T[pairs[:, 1]]) * dxp, axis=1)
        viol = max(0.0, -float(np.min(g)))

    out = T[labels] if pooled else T
    return ProjectionResult(projected=out, sweeps_used=int(sweeps),
                            max_violation=float(viol), dual_trace=None)


def project(problem: ProjectionProblem) -> ProjectionResult:
    """Dispatch to the exact 1D algorithm or Dykstra, by dimension.

    For d = 1 the base points are sorted internally, so callers do not need
    pre-sorted data.
    """
    if problem.base_points.shape[1] == 1:
        order = np.argsort(problem.base_points[:, 0], kind="stable")
        sub = ProjectionProblem(
            base_points=problem.base_points[order],
            weights=problem.weights[order],
            targets=problem.targets[order],
            tol_feas=problem.tol_feas, tol_opt=problem.tol_opt,
            max_sweeps=problem.max_sweeps)
        res = project_1d(sub)
        inv = np.empty_like(order)
        inv[order] = np.arange(order.shape[0])
        return ProjectionResult(projected=res.projected[inv],
                                sweeps_used=res.sweeps_used,
                                max_violation=res.max_violation,
                                dual_trace=res.dual_trace)
    return project_nd(problem)
