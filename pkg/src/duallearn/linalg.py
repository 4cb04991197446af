"""Dense symmetric eigensolver and LU solves.

The eigensolver is a cyclic Jacobi method that works on a stack of matrices
at once, so cone code can project many PSD points in one call.
"""

from __future__ import annotations

import numpy as np


class LinalgError(ValueError):
    pass


class SingularMatrixError(LinalgError):
    def __init__(self, column: int, pivot: float):
        super().__init__(f"matrix is singular: pivot {pivot:.3e} in column {column}")
        self.column = column
        self.pivot = pivot


SYMMETRY_TOL = 1e-12
PIVOT_TOL = 1e-12


def _check_symmetric(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2] or X.shape[-1] < 1:
        raise LinalgError(f"expected square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise LinalgError("matrix has non-finite entries")
    asym = np.max(np.abs(X - np.swapaxes(X, -1, -2)), initial=0.0)
    if asym > SYMMETRY_TOL:
        raise LinalgError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return X


def jacobi_eigen(X: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a stack ``(..., n, n)`` of symmetric matrices.

    Returns unsorted eigenvalues ``(..., n)`` and eigenvector columns.
    """
    X = _check_symmetric(X)
    n = X.shape[-1]
    batch_shape = X.shape[:-2]
    A = X.reshape(-1, n, n).copy()
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    if n == 1:
        return A[:, 0, :].reshape(*batch_shape, 1), V.reshape(X.shape)

    iu = np.triu_indices(n, 1)
    scale = np.sqrt(np.sum(A * A, axis=(1, 2)))
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= 1e-15 * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[:, None]
                s_ = s[:, None]
                # A <- A P, then A <- P^T A, V <- V P
                colp = A[:, :, p].copy()
                colq = A[:, :, q]
                A[:, :, p] = c_ * colp - s_ * colq
                A[:, :, q] = s_ * colp + c_ * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :]
                A[:, p, :] = c_ * rowp - s_ * rowq
                A[:, q, :] = s_ * rowp + c_ * rowq
                A[:, p, q] = 0.0
                A[:, q, p] = 0.0
                vp = V[:, :, p].copy()
                vq = V[:, :, q]
                V[:, :, p] = c_ * vp - s_ * vq
                V[:, :, q] = s_ * vp + c_ * vq
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    return w.reshape(*batch_shape, n), V.reshape(X.shape)


def sym_eigen(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvector columns.

    Accepts a single matrix or a stack. ``X ~= V @ diag(w) @ V.T``.
    """
    w, V = jacobi_eigen(X)
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    return w, V


def lambda_min(X: np.ndarray) -> np.ndarray | float:
    w, _ = jacobi_eigen(X)
    out = w.min(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def lambda_min_with_vector(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest eigenvalue and a unit eigenvector for it (stack-aware)."""
    w, V = jacobi_eigen(X)
    k = np.argmin(w, axis=-1)
    lam = np.take_along_axis(w, k[..., None], axis=-1)[..., 0]
    v = np.take_along_axis(V, k[..., None, None], axis=-1)[..., 0]
    return lam, v


def lu_factor(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """LU with partial pivoting; returns packed LU and the row permutation."""
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise LinalgError(f"expected square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise LinalgError("matrix has non-finite entries")
    n = M.shape[0]
    perm = np.arange(n)
    for k in range(n):
        i = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[i, k]) <= PIVOT_TOL:
            raise SingularMatrixError(k, float(M[i, k]))
        if i != k:
            M[[k, i]] = M[[i, k]]
            perm[[k, i]] = perm[[i, k]]
        M[k + 1:, k] /= M[k, k]
        M[k + 1:, k + 1:] -= np.outer(M[k + 1:, k], M[k, k + 1:])
    return M, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    x = np.asarray(rhs, dtype=np.float64)[perm].copy()
    n = lu.shape[0]
    for i in range(n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def solve_linear(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``M x = rhs`` by LU with partial pivoting."""
    rhs = np.asarray(rhs, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if rhs.shape[0] != M.shape[0]:
        raise LinalgError(f"rhs has length {rhs.shape[0]}, matrix has {M.shape[0]} rows")
    lu, perm = lu_factor(M)
    return lu_solve(lu, perm, rhs)
