"""Reference solvers used as ground truth, and the optimality-gap metric.

* :func:`solve_lp` is a dense bounded-variable revised simplex with Bland's
  rule, used for knapsack relaxations and y-fixed LP completions.
* :func:`solve_prodplan` maximises the one-dimensional concave dual of the
  production-planning problem by bisection on its derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class OracleError(RuntimeError):
    pass


class GapUndefined(ValueError):
    pass


@dataclass
class LpStandardForm:
    """``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper``.

    ``lower`` must be finite; ``upper`` may contain ``inf``.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.asarray(self.A_ub, float))
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).reshape(-1)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).copy()
        if self.A_ub.shape != (self.b_ub.shape[0], n) or self.A_eq.shape != (self.b_eq.shape[0], n):
            raise ValueError("constraint matrix / rhs dimensions disagree")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bound vectors must have length n")
        for name in ("c", "A_ub", "b_ub", "A_eq", "b_eq", "lower"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(np.isnan(self.upper)) or np.any(self.lower > self.upper):
            raise ValueError("bounds must satisfy lower <= upper")


@dataclass
class OracleSolution:
    status: str
    x: np.ndarray | None = None
    value: float = math.nan
    # multipliers of the <= rows (<= 0 at a min-optimum) and = rows
    y_ub: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    # multipliers of the variable bounds, both >= 0
    z_lower: np.ndarray | None = None
    z_upper: np.ndarray | None = None
    iterations: int = 0
    extra: dict = field(default_factory=dict)


class _Simplex:
    """Bounded-variable revised simplex on ``A x = b, l <= x <= u``."""

    def __init__(self, A, b, l, u, tol=1e-9, max_iter=50_000):
        self.A, self.b, self.l, self.u = A, b, l, u
        self.m, self.n = A.shape
        self.tol = tol
        self.max_iter = max_iter
        self.iterations = 0

    def run(self, c, basis, at_upper):
        A, l, u, tol = self.A, self.l, self.u, self.tol
        while True:
            if self.iterations >= self.max_iter:
                raise OracleError("simplex iteration limit reached")
            self.iterations += 1
            nonbasic = np.ones(self.n, bool)
            nonbasic[basis] = False
            xN = np.where(at_upper, u, l)
            xN = np.where(nonbasic, xN, 0.0)
            B = A[:, basis]
            xB = np.linalg.solve(B, self.b - A @ xN) if self.m else np.zeros(0)
            y = np.linalg.solve(B.T, c[basis]) if self.m else np.zeros(0)
            d = c - A.T @ y
            scale = 1.0 + np.abs(c)
            entering = -1
            for j in np.flatnonzero(nonbasic):
                if u[j] - l[j] <= 0.0:
                    continue
                if (not at_upper[j] and d[j] < -tol * scale[j]) or (at_upper[j] and d[j] > tol * scale[j]):
                    entering = j
                    break
            if entering < 0:
                x = xN.copy()
                x[basis] = xB
                return x, y, d
            j = entering
            direction = -1.0 if at_upper[j] else 1.0
            w = np.linalg.solve(B, A[:, j]) * direction if self.m else np.zeros(0)
            # basic variables move by -t * w
            t_best = u[j] - l[j]
            leave = -1
            leave_to_upper = False
            for r in range(self.m):
                k = basis[r]
                if w[r] > tol:
                    t = max((xB[r] - l[k]) / w[r], 0.0)
                    to_upper = False
                elif w[r] < -tol and np.isfinite(u[k]):
                    t = max((u[k] - xB[r]) / -w[r], 0.0)
                    to_upper = True
                else:
                    continue
                if t < t_best - tol or (leave >= 0 and abs(t - t_best) <= tol and k < basis[leave]):
                    t_best, leave, leave_to_upper = t, r, to_upper
            if not np.isfinite(t_best):
                return None
            if leave < 0:
                at_upper[j] = not at_upper[j]
                continue
            k = basis[leave]
            basis[leave] = j
            at_upper[j] = False
            at_upper[k] = leave_to_upper


def solve_lp(lp: LpStandardForm, tol: float = 1e-9) -> OracleSolution:
    """Solve ``lp`` to optimality, or report it infeasible / unbounded."""
    n = lp.c.shape[0]
    m_ub = lp.A_ub.shape[0]
    m_eq = lp.A_eq.shape[0]
    m = m_ub + m_eq
    # columns: x (n), slacks (m_ub), artificials (m)
    A = np.zeros((m, n + m_ub + m))
    A[:m_ub, :n] = lp.A_ub
    A[m_ub:, :n] = lp.A_eq
    A[:m_ub, n:n + m_ub] = np.eye(m_ub)
    b = np.concatenate([lp.b_ub, lp.b_eq])
    l = np.concatenate([lp.lower, np.zeros(m_ub), np.zeros(m)])
    u = np.concatenate([lp.upper, np.full(m_ub, np.inf), np.full(m, np.inf)])
    resid = b - A[:, :n] @ lp.lower
    basis = np.empty(m, dtype=int)
    for i in range(m):
        art = n + m_ub + i
        A[i, art] = 1.0 if resid[i] >= 0 else -1.0
        if i < m_ub and resid[i] >= 0:
            basis[i] = n + i
            u[art] = 0.0
        else:
            basis[i] = art
    at_upper = np.zeros(A.shape[1], bool)
    solver = _Simplex(A, b, l, u, tol=tol)

    c1 = np.zeros(A.shape[1])
    c1[n + m_ub:] = 1.0
    out = solver.run(c1, basis, at_upper)
    x = out[0]
    infeas = float(np.sum(x[n + m_ub:]))
    if infeas > 1e-7 * (1.0 + np.abs(b).max(initial=0.0)):
        return OracleSolution(INFEASIBLE, iterations=solver.iterations)
    u[n + m_ub:] = 0.0  # artificials stay at zero from here on
    c2 = np.zeros(A.shape[1])
    c2[:n] = lp.c
    out = solver.run(c2, basis, at_upper)
    if out is None:
        return OracleSolution(UNBOUNDED, iterations=solver.iterations)
    x, y, d = out
    xs = x[:n]
    dx = d[:n]
    z_lower = np.where(np.isclose(xs, lp.lower, atol=tol, rtol=0), np.maximum(dx, 0.0), 0.0)
    z_upper = np.where(np.isclose(xs, lp.upper, atol=tol, rtol=0), np.maximum(-dx, 0.0), 0.0)
    sol = OracleSolution(
        OPTIMAL, x=xs, value=float(lp.c @ xs), y_ub=y[:m_ub], y_eq=y[m_ub:],
        z_lower=z_lower, z_upper=z_upper, iterations=solver.iterations,
    )
    sol.extra["dual_value"] = lp_dual_value(lp, sol)
    _certify_lp(lp, sol)
    return sol


def lp_dual_value(lp: LpStandardForm, sol: OracleSolution) -> float:
    lo = np.where(sol.z_lower > 0, lp.lower, 0.0)
    up = np.where(sol.z_upper > 0, lp.upper, 0.0)
    return float(lp.b_ub @ sol.y_ub + lp.b_eq @ sol.y_eq + lo @ sol.z_lower - up @ sol.z_upper)


def _certify_lp(lp: LpStandardForm, sol: OracleSolution, tol: float = 1e-8) -> None:
    x = sol.x
    scale = 1.0 + max(np.abs(lp.b_ub).max(initial=0), np.abs(lp.b_eq).max(initial=0))
    viol = max(
        np.max(lp.A_ub @ x - lp.b_ub, initial=0.0),
        np.max(np.abs(lp.A_eq @ x - lp.b_eq), initial=0.0),
        np.max(lp.lower - x, initial=0.0),
        np.max(x - lp.upper, initial=0.0),
    )
    if viol > tol * scale:
        raise OracleError(f"simplex primal infeasibility {viol:.3e}")
    dual_res = lp.c - lp.A_ub.T @ sol.y_ub - lp.A_eq.T @ sol.y_eq - sol.z_lower + sol.z_upper
    if np.max(np.abs(dual_res), initial=0.0) > tol * (1.0 + np.abs(lp.c).max(initial=0)) or np.any(sol.y_ub > tol):
        raise OracleError("simplex dual infeasibility")
    gap = abs(sol.value - sol.extra["dual_value"])
    if gap > tol * (1.0 + abs(sol.value)):
        raise OracleError(f"simplex primal-dual gap {gap:.3e}")


def solve_knapsack_lp(inst) -> OracleSolution:
    """LP relaxation ``min -p.x  s.t.  W x <= b, 0 <= x <= 1``.

    ``y_ub`` holds the resource duals (``<= 0``); ``z_lower``/``z_upper`` the
    bound duals of the dual problem ``max b.y - e.z_u``.
    """
    n = inst.p.shape[0]
    lp = LpStandardForm(c=-inst.p, A_ub=inst.W, b_ub=inst.b, lower=np.zeros(n), upper=np.ones(n))
    return solve_lp(lp)


# ---------------------------------------------------------------- production planning

def prodplan_dual_value(inst, y) -> float:
    """``g(y) = b y + 2 sum_j sqrt(f_j (d_j - y r_j))`` for ``y <= 0``."""
    return float(inst.b * y + 2.0 * np.sum(np.sqrt(inst.f * (inst.d - y * inst.r))))


def prodplan_dual_slope(inst, y) -> float:
    return float(inst.b - np.sum(inst.r * np.sqrt(inst.f / (inst.d - y * inst.r))))


def solve_prodplan(inst, max_iter: int = 200) -> OracleSolution:
    if prodplan_dual_slope(inst, 0.0) >= 0.0:
        y = 0.0
    else:
        lo = -1.0
        while prodplan_dual_slope(inst, lo) <= 0.0:
            lo *= 2.0
        hi = 0.0
        y = 0.5 * (lo + hi)
        for _ in range(max_iter):
            y = 0.5 * (lo + hi)
            g = prodplan_dual_slope(inst, y)
            if abs(g) <= 1e-10 or y in (lo, hi):
                break
            if g > 0.0:
                lo = y
            else:
                hi = y
    x = np.sqrt(inst.f / (inst.d - y * inst.r))
    t = 1.0 / x
    primal = float(inst.d @ x + inst.f @ t)
    dual = prodplan_dual_value(inst, y)
    if abs(primal - dual) > 1e-8 * (1.0 + abs(primal)):
        raise OracleError(f"production-planning primal-dual gap {abs(primal - dual):.3e}")
    slack = float(inst.r @ x - inst.b)
    if slack > 1e-8 * (1.0 + inst.b):
        raise OracleError(f"production-planning resource violation {slack:.3e}")
    return OracleSolution(OPTIMAL, x=x, value=dual, y_ub=np.array([y]), extra={"t": t, "primal_value": primal})


def optimality_gap(L_star: float, L_hat: float) -> float:
    """Relative distance ``(L* - L)/|L*|`` of a bound ``L`` from the optimum."""
    if L_star == 0:
        raise GapUndefined("optimality gap is undefined when the optimum is zero")
    return (L_star - L_hat) / abs(L_star)


# ---------------------------------------------------------------- dataset oracles

def oracle_record(inst) -> dict:
    """Optimal value and dual multipliers in the JSON shape stored with datasets."""
    if inst.family == "knapsack":
        sol = solve_knapsack_lp(inst)
        if sol.status != OPTIMAL:
            raise OracleError(f"knapsack relaxation is {sol.status}")
    else:
        sol = solve_prodplan(inst)
    return {"value": float(sol.value), "y_star": [float(v) for v in sol.y_ub]}


def attach_oracles(ds, jobs: int = 1):
    """Fill ``ds.oracles`` in place; results do not depend on ``jobs``."""
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            ds.oracles = list(pool.map(oracle_record, ds.instances, chunksize=16))
    else:
        ds.oracles = [oracle_record(i) for i in ds.instances]
    return ds
