"""Closed-form optimal dual completions and Lagrangian bounds.

Problems are in the primal-dual form::

    min  c.x                    max  b.y + h.z
    s.t. A x >=_K b             s.t. A^T y + H^T z = c
         H x >=_C h                  y in K*,  z in C*

Given ``y`` in ``K*`` a completion returns the ``z`` that maximises the bound
with ``y`` held fixed. The ``*_bound`` helpers return only the scalar bound
(what training needs); :func:`completion_vjp` differentiates it in ``y``.

:func:`oracle_complete` re-solves the y-fixed problem numerically and is only
meant for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import minimize_scalar

from . import cones
from .cones import ConeSpec
from .linalg import solve_linear
from .refsolve import OPTIMAL, LpStandardForm, OracleError, solve_lp

SQRT2 = math.sqrt(2.0)


class CompletionError(ValueError):
    pass


@dataclass
class ConicProblemData:
    A: np.ndarray
    b: np.ndarray
    H: np.ndarray
    h: np.ndarray
    c: np.ndarray
    coneK: ConeSpec
    coneC: ConeSpec

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        m, n = self.A.shape
        k = self.H.shape[0]
        if self.b.shape != (m,) or self.H.shape[1] != n or self.h.shape != (k,) or self.c.shape != (n,):
            raise CompletionError("inconsistent problem dimensions")
        if self.coneK.dim != m or self.coneC.dim != k:
            raise CompletionError("cone dimensions do not match constraint counts")
        for name in ("A", "b", "H", "h", "c"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise CompletionError(f"{name} has non-finite entries")


@dataclass
class DualSolution:
    y: np.ndarray
    z: np.ndarray
    bound: float


def knapsack_conic_form(inst) -> ConicProblemData:
    """Knapsack relaxation with ``W x <= b`` written as ``(-W) x >= -b``.

    The orthant dual of this form is ``-y`` for the ``y <= 0`` convention of
    :func:`complete_knapsack`; bounds agree.
    """
    n = inst.n
    return ConicProblemData(
        A=-inst.W, b=-inst.b,
        H=np.vstack([np.eye(n), -np.eye(n)]), h=np.concatenate([np.zeros(n), -np.ones(n)]),
        c=-inst.p, coneK=cones.Orthant(inst.m), coneC=cones.Orthant(2 * n),
    )


def _vec(v, n=None, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if n is not None and v.shape[-1] != n:
        raise CompletionError(f"{name} has length {v.shape[-1]}, expected {n}")
    return v


def lagrangian_bound(prob: ConicProblemData, y, z) -> float:
    y = _vec(y, prob.b.shape[0], "y")
    z = _vec(z, prob.h.shape[0], "z")
    return float(prob.b @ y + prob.h @ z)


def equality_residual(prob: ConicProblemData, y, z) -> float:
    return float(np.max(np.abs(prob.A.T @ y + prob.H.T @ z - prob.c), initial=0.0))


# ---------------------------------------------------------------- bounded variables

def complete_bounded(c, A, l, u, y):
    """``z_l = (c - A^T y)^+``, ``z_u = (c - A^T y)^-`` for ``l <= x <= u``."""
    l = np.asarray(l, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any(l >= u):
        j = int(np.flatnonzero(l >= u)[0])
        raise CompletionError(f"bounds need l < u; violated at coordinate {j}")
    s = np.asarray(c, dtype=np.float64) - np.asarray(A, dtype=np.float64).T @ _vec(y)
    return np.maximum(s, 0.0), np.maximum(-s, 0.0)


def bounded_bound(b, c, A, l, u, y) -> float:
    zl, zu = complete_bounded(c, A, l, u, y)
    return float(np.asarray(b) @ _vec(y) + np.asarray(l) @ zl - np.asarray(u) @ zu)


# ---------------------------------------------------------------- trust region

_DUAL_NORM = {"l2": 2, "l1": np.inf, "linf": 1}


def complete_trust_region(c, A, y, norm: str = "l2"):
    """``z = c - A^T y`` and ``z0 = ||z||_*`` for a ``||x|| <= r`` constraint."""
    if norm not in _DUAL_NORM:
        raise CompletionError(f"norm must be one of {sorted(_DUAL_NORM)}")
    z = np.asarray(c, dtype=np.float64) - np.atleast_2d(np.asarray(A, dtype=np.float64)).T @ _vec(y)
    return float(np.linalg.norm(z, ord=_DUAL_NORM[norm])), z


def trust_region_bound(b, c, A, radius, y, norm: str = "l2") -> float:
    z0, _ = complete_trust_region(c, A, y, norm)
    return float(np.asarray(b) @ _vec(y) - radius * z0)


# ---------------------------------------------------------------- convex quadratic

def complete_quadratic(c, A, F, y):
    """``z = F^{-T}(c - A^T y)`` and ``z0 = |z|^2 / 2`` for ``Q = F^T F``."""
    s = np.asarray(c, dtype=np.float64) - np.atleast_2d(np.asarray(A, dtype=np.float64)).T @ _vec(y)
    z = solve_linear(np.asarray(F, dtype=np.float64).T, s)
    return 0.5 * float(z @ z), z


def quadratic_bound(b, c, A, F, y) -> float:
    z0, _ = complete_quadratic(c, A, F, y)
    return float(np.asarray(b) @ _vec(y) - z0)


# ---------------------------------------------------------------- knapsack

def _knapsack_slack(inst, Y):
    return -inst.p - np.einsum("...m,...mn->...n", Y, inst.W)


def complete_knapsack(inst, y):
    """Completion for ``W^T y + z_l - z_u = -p`` with ``y <= 0``.

    ``y`` may be one vector ``(m,)`` or a batch ``(B, m)``; ``inst`` may be a
    stacked batch from :func:`duallearn.problems.stack`.
    """
    y = _vec(y, inst.m, "y")
    if np.any(y > 0):
        raise CompletionError("knapsack duals must satisfy y <= 0; project first")
    s = _knapsack_slack(inst, y)
    return np.maximum(s, 0.0), np.maximum(-s, 0.0)


def knapsack_bound(inst, y):
    """``b.y - e.z_u`` (scalar, or one value per row of a batch)."""
    y = _vec(y, inst.m, "y")
    if np.any(y > 0):
        raise CompletionError("knapsack duals must satisfy y <= 0; project first")
    zu = np.maximum(-_knapsack_slack(inst, y), 0.0)
    out = np.sum(y * inst.b, axis=-1) - zu.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def knapsack_dual(inst, y) -> DualSolution:
    zl, zu = complete_knapsack(inst, y)
    return DualSolution(y=_vec(y), z=np.concatenate([zl, zu]), bound=knapsack_bound(inst, y))


# ---------------------------------------------------------------- production planning

def complete_prodplan(inst, y):
    """``pi = d - r y``, ``tau = f``, ``sigma = -sqrt(2 pi tau)``."""
    y = float(y)
    if y > 0:
        raise CompletionError("production-planning dual must satisfy y <= 0")
    pi = inst.d - inst.r * y
    tau = inst.f.copy()
    sigma = -np.sqrt(2.0 * pi * tau)
    return pi, tau, sigma


def prodplan_bound(inst, y):
    """``b y - sqrt(2) e.sigma = b y + 2 sum sqrt(pi tau)``; ``y`` scalar or batch."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y > 0):
        raise CompletionError("production-planning dual must satisfy y <= 0")
    pi = inst.d - y[..., None] * inst.r
    out = inst.b * y + 2.0 * np.sqrt(pi * inst.f).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def prodplan_dual(inst, y) -> DualSolution:
    pi, tau, sigma = complete_prodplan(inst, y)
    z = np.stack([pi, tau, sigma], axis=1).ravel()
    return DualSolution(y=np.array([float(y)]), z=z, bound=prodplan_bound(inst, y))


# ---------------------------------------------------------------- gradients

def completion_vjp(kind: str, inputs: dict, cotangent=1.0):
    """Gradient of the completed bound with respect to ``y``, times ``cotangent``.

    ``kind`` is one of ``knapsack``, ``prodplan``, ``bounded``, ``trust_region``,
    ``quadratic``; ``inputs`` carries the arguments of the matching ``*_bound``
    function (``inst`` and ``y`` for the two families). Kinks use
    ``d s^+/ds = [s > 0]`` and ``d s^-/ds = -[s < 0]``.

    For the two families ``y`` may be batched; the result then has one row
    per instance and ``cotangent`` may be a vector.
    """
    g = np.asarray(cotangent, dtype=np.float64)
    if kind == "knapsack":
        inst, y = inputs["inst"], _vec(inputs["y"], inputs["inst"].m, "y")
        neg = (_knapsack_slack(inst, y) < 0).astype(np.float64)
        grad = inst.b - np.einsum("...n,...mn->...m", neg, inst.W)
        return grad * (g[..., None] if g.ndim else g)
    if kind == "prodplan":
        inst, y = inputs["inst"], np.asarray(inputs["y"], dtype=np.float64)
        pi = inst.d - y[..., None] * inst.r
        grad = inst.b - (inst.r * np.sqrt(inst.f / pi)).sum(axis=-1)
        return grad * g
    if kind == "bounded":
        b, c, A, l, u, y = (np.asarray(inputs[k], dtype=np.float64) for k in ("b", "c", "A", "l", "u", "y"))
        s = c - A.T @ y
        w = np.where(s > 0, l, 0.0) + np.where(s < 0, u, 0.0)
        return (b - A @ w) * g
    if kind == "trust_region":
        b, c, A, y = (np.asarray(inputs[k], dtype=np.float64) for k in ("b", "c", "A", "y"))
        A = np.atleast_2d(A)
        radius = float(inputs["radius"])
        norm = inputs.get("norm", "l2")
        z = c - A.T @ y
        if norm == "l2":
            nz = np.linalg.norm(z)
            dz = z / nz if nz > 0 else np.zeros_like(z)
        elif norm == "l1":  # dual norm is l_inf
            k = int(np.argmax(np.abs(z)))
            dz = np.zeros_like(z)
            dz[k] = np.sign(z[k])
        else:  # dual norm is l1
            dz = np.sign(z)
        return (b + radius * A @ dz) * g
    if kind == "quadratic":
        b, c, A, F, y = (np.asarray(inputs[k], dtype=np.float64) for k in ("b", "c", "A", "F", "y"))
        A = np.atleast_2d(A)
        _, z = complete_quadratic(c, A, F, y)
        # d/dy (-|z|^2/2) with F^T z = c - A^T y  gives  A F^{-1} z
        return (b + A @ solve_linear(F, z)) * g
    raise CompletionError(f"unknown completion kind {kind!r}")


# ---------------------------------------------------------------- test oracle

def oracle_complete(prob: ConicProblemData, y) -> np.ndarray:
    """Solve the y-fixed dual ``max h.z  s.t.  H^T z = c - A^T y, z >= 0`` by simplex.

    Only polyhedral ``C`` (an orthant) is supported here; see
    :func:`oracle_complete_prodplan` for the production-planning family.
    """
    if prob.coneC.kind != "orthant":
        raise CompletionError("oracle_complete handles orthant C only")
    y = _vec(y, prob.b.shape[0], "y")
    rhs = prob.c - prob.A.T @ y
    lp = LpStandardForm(c=-prob.h, A_eq=prob.H.T, b_eq=rhs, lower=np.zeros(prob.h.shape[0]))
    sol = solve_lp(lp)
    if sol.status != OPTIMAL:
        raise OracleError(f"y-fixed completion problem is {sol.status}")
    return sol.x


def oracle_complete_prodplan(inst, y) -> tuple[np.ndarray, float]:
    """Numerically minimise the y-fixed Lagrangian and read off ``(pi, tau, sigma)``.

    Each item contributes ``min_{x > 0} (d_j - y r_j) x + f_j / x``, found by
    bounded Brent search; the conic multipliers follow from complementarity
    with ``(x_j, 1/x_j, sqrt 2)``. Returns ``z`` (rows ``pi, tau, sigma``) and
    the bound.
    """
    y = float(y)
    a = inst.d - y * inst.r
    if np.any(a <= 0):
        raise OracleError("y-fixed production-planning problem is unbounded")
    xs = np.empty(inst.n)
    for j in range(inst.n):
        # minimise over log x so the search interval is scale-free
        obj = lambda s, aj=a[j], fj=inst.f[j]: aj * math.exp(s) + fj * math.exp(-s)
        res = minimize_scalar(obj, bounds=(-60.0, 60.0), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        xs[j] = math.exp(res.x)
    t = 1.0 / xs
    pi, tau = a, inst.f.copy()
    sigma = -(pi * xs + tau * t) / SQRT2
    bound = float(inst.b * y + np.sum(pi * xs + tau * t))
    return np.stack([pi, tau, sigma], axis=1).ravel(), bound
