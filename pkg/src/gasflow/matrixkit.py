"""Small-matrix helpers used by the determinant energy (d <= 3).

All functions accept a single (d, d) matrix or a stacked (..., d, d) array
and act on the trailing two axes.
"""
from __future__ import annotations

import numpy as np


def sym(A: np.ndarray) -> np.ndarray:
    """Symmetric part (A + A^T) / 2."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def skew(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def det(A: np.ndarray):
    """Determinant, closed form for d <= 3, LAPACK otherwise."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    if d == 1:
        return A[..., 0, 0]
    if d == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if d == 3:
        return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
                - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
                + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]))
    return np.linalg.det(A)


def cofactor(A: np.ndarray) -> np.ndarray:
    """Cofactor matrix: cof(A)^T A = det(A) I (valid also for singular A)."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    out = np.empty_like(A)
    if d == 1:
        out[..., 0, 0] = 1.0
        return out
    if d == 2:
        out[..., 0, 0] = A[..., 1, 1]
        out[..., 0, 1] = -A[..., 1, 0]
        out[..., 1, 0] = -A[..., 0, 1]
        out[..., 1, 1] = A[..., 0, 0]
        return out
    if d == 3:
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != i]
                c = [k for k in range(3) if k != j]
                minor = (A[..., r[0], c[0]] * A[..., r[1], c[1]]
                         - A[..., r[0], c[1]] * A[..., r[1], c[0]])
                out[..., i, j] = ((-1.0) ** (i + j)) * minor
        return out
    raise NotImplementedError("cofactor implemented for d <= 3")


def is_positive_definite(A: np.ndarray, tol: float = 0.0):
    """True where the symmetric part of A is positive definite (> tol)."""
    S = sym(A)
    d = S.shape[-1]
    if d == 1:
        return S[..., 0, 0] > tol
    if d == 2:
        # leading principal minors
        return (S[..., 0, 0] > tol) & (det(S) > tol)
    w = np.linalg.eigvalsh(S)
    return w[..., 0] > tol
