"""Standard proper cones: membership, dual cones, Euclidean and radial projections.

Every point-valued function accepts either one point of shape ``(d,)`` or a
batch of shape ``(B, d)`` and returns the same leading shape.

Storage conventions
-------------------
* PSD points of order ``n`` store the upper triangle row by row
  (``numpy.triu_indices`` order), ``n(n+1)/2`` entries, no off-diagonal
  scaling. Inner products on PSD points use the trace inner product, see
  :func:`inner`.
* RSOC points are ``(x1, x2, x3, ...)`` with ``2 x1 x2 >= |x3..|^2``.
* The dual power cone stores ``y`` directly; membership is
  ``(y1/a, y2/(1-a), y3) in P_a``.

Radial directions
-----------------
``orthant``  e, applied per coordinate (step is a vector)
``soc``      e1
``rsoc``     (1, 1, 0, ...)/sqrt(2)
``psd``      identity
``exp``      -e3 (the exponential-cone formula lowers x3)
``dexp``     +e2 (the dual formula raises y2)
``pow``      e1 (primal and dual)
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import re

import numpy as np

from .linalg import jacobi_eigen, lambda_min_with_vector

KINDS = ("orthant", "soc", "rsoc", "psd", "exp", "dexp", "pow")
SQRT2 = math.sqrt(2.0)


class ConeError(ValueError):
    pass


class UnsupportedProjection(ConeError):
    pass


class ConeDomainError(ConeError):
    def __init__(self, cone: "ConeSpec", coord: int, message: str):
        super().__init__(f"{cone.name}: coordinate x{coord + 1} {message}")
        self.coord = coord


@dataclass(frozen=True)
class ConeSpec:
    kind: str
    n: int = 3
    alpha: float | None = None
    dual: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConeError(f"unknown cone kind {self.kind!r}")
        if self.n < 1:
            raise ConeError("cone dimension must be >= 1")
        if self.kind == "soc" and self.n < 2:
            raise ConeError("SOC needs n >= 2")
        if self.kind == "rsoc" and self.n < 3:
            raise ConeError("RSOC needs n >= 3")
        if self.kind in ("exp", "dexp", "pow") and self.n != 3:
            raise ConeError(f"{self.kind} cone is 3-dimensional")
        if self.kind == "pow":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ConeError("power cone needs 0 < alpha < 1")
        elif self.alpha is not None or self.dual:
            raise ConeError("alpha/dual flag only apply to the power cone")

    @property
    def dim(self) -> int:
        """Length of the stored vector."""
        if self.kind == "psd":
            return self.n * (self.n + 1) // 2
        return self.n

    @property
    def name(self) -> str:
        if self.kind in ("exp", "dexp"):
            return self.kind
        if self.kind == "pow":
            return f"{'dpow' if self.dual else 'pow'}{self.alpha:g}"
        return f"{self.kind}{self.n}"

    @property
    def euclidean_supported(self) -> bool:
        return self.kind in ("orthant", "soc", "rsoc", "psd")


def Orthant(n: int) -> ConeSpec:
    return ConeSpec("orthant", n)


def SOC(n: int) -> ConeSpec:
    return ConeSpec("soc", n)


def RSOC(n: int) -> ConeSpec:
    return ConeSpec("rsoc", n)


def PSD(n: int) -> ConeSpec:
    return ConeSpec("psd", n)


EXP = ConeSpec("exp")
DUAL_EXP = ConeSpec("dexp")


def Power(alpha: float, dual: bool = False) -> ConeSpec:
    return ConeSpec("pow", 3, float(alpha), dual)


_NAME_RE = re.compile(r"^(orthant|nonneg|soc|rsoc|psd|exp|dexp|dualexp|pow|dpow)([0-9.]*)$")


def parse_cone(name: str) -> ConeSpec:
    """Parse names such as ``soc3``, ``rsoc4``, ``psd2``, ``orthant5``, ``exp``,
    ``dexp``, ``pow0.3``, ``dpow0.3``."""
    m = _NAME_RE.match(name.strip().lower())
    if not m:
        raise ConeError(f"cannot parse cone name {name!r}")
    kind, arg = m.groups()
    if kind in ("exp", "dexp", "dualexp"):
        if arg:
            raise ConeError(f"{kind} takes no size")
        return EXP if kind == "exp" else DUAL_EXP
    if not arg:
        raise ConeError(f"{kind} needs a size or exponent, e.g. {kind}3")
    if kind in ("pow", "dpow"):
        return Power(float(arg), dual=kind == "dpow")
    kind = "orthant" if kind == "nonneg" else kind
    return ConeSpec(kind, int(arg))


def dual_cone(K: ConeSpec) -> ConeSpec:
    if K.kind == "exp":
        return DUAL_EXP
    if K.kind == "dexp":
        return EXP
    if K.kind == "pow":
        return Power(K.alpha, dual=not K.dual)
    return K


# ---------------------------------------------------------------- helpers

def psd_pack(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[-1]
    iu = np.triu_indices(n)
    return X[..., iu[0], iu[1]]


def psd_unpack(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    iu = np.triu_indices(n)
    X = np.zeros(x.shape[:-1] + (n, n))
    X[..., iu[0], iu[1]] = x
    X[..., iu[1], iu[0]] = x
    return X


def _psd_weights(n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    return np.where(iu[0] == iu[1], 1.0, 2.0)


def _psd_diag_mask(n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    return (iu[0] == iu[1]).astype(np.float64)


def inner(K: ConeSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inner product of the ambient space (trace inner product for PSD)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if K.kind == "psd":
        return np.sum(_psd_weights(K.n) * x * y, axis=-1)
    return np.sum(x * y, axis=-1)


def norm(K: ConeSpec, x: np.ndarray) -> np.ndarray:
    return np.sqrt(inner(K, x, x))


def ray(K: ConeSpec) -> np.ndarray:
    """Direction traced by :func:`project_radial`."""
    d = np.zeros(K.dim)
    if K.kind == "orthant":
        d[:] = 1.0
    elif K.kind in ("soc", "pow"):
        d[0] = 1.0
    elif K.kind == "rsoc":
        d[:2] = 1.0 / SQRT2
    elif K.kind == "psd":
        d[:] = _psd_diag_mask(K.n)
    elif K.kind == "exp":
        d[2] = -1.0
    elif K.kind == "dexp":
        d[1] = 1.0
    return d


def _lift(K: ConeSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != K.dim:
        raise ConeError(f"{K.name} expects points of length {K.dim}, got shape {x.shape}")
    return X, single


def _drop(X: np.ndarray, single: bool):
    return X[0] if single else X


def _rot(X: np.ndarray) -> np.ndarray:
    # orthogonal, symmetric, self-inverse map between RSOC and SOC coordinates
    Y = X.copy()
    Y[:, 0] = (X[:, 0] + X[:, 1]) / SQRT2
    Y[:, 1] = (X[:, 0] - X[:, 1]) / SQRT2
    return Y


def _pow_scale(K: ConeSpec) -> np.ndarray:
    a = K.alpha
    if K.dual:
        return np.array([1.0 / a, 1.0 / (1.0 - a), 1.0])
    return np.ones(3)


# ---------------------------------------------------------------- membership

def slack(K: ConeSpec, x) -> np.ndarray | float:
    """Signed margin of the defining inequalities; >= 0 iff ``x`` is in ``K``.

    The margin is positively homogeneous of degree one in ``x``.
    """
    X, single = _lift(K, x)
    if K.kind == "orthant":
        s = X.min(axis=1)
    elif K.kind == "soc":
        s = X[:, 0] - np.linalg.norm(X[:, 1:], axis=1)
    elif K.kind == "rsoc":
        U = _rot(X)
        s = U[:, 0] - np.linalg.norm(U[:, 1:], axis=1)
    elif K.kind == "psd":
        w, _ = jacobi_eigen(psd_unpack(X, K.n))
        s = w.min(axis=1)
    elif K.kind == "exp":
        x1, x2, x3 = X.T
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            pos = x2 * np.exp(x3 / np.where(x2 > 0, x2, 1.0))
            s = np.where(x2 > 0, x1 - pos, np.where(x2 == 0, np.minimum(x1, -x3), x2))
    elif K.kind == "dexp":
        y1, y2, y3 = X.T
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            neg = y3 * np.exp(y2 / np.where(y3 < 0, y3, -1.0) - 1.0)
            s = np.where(y3 < 0, y1 + neg, np.where(y3 == 0, np.minimum(y1, y2), -y3))
    else:
        U = X * _pow_scale(K)
        a = K.alpha
        u1, u2, u3 = U.T
        with np.errstate(invalid="ignore"):
            geo = np.maximum(u1, 0.0) ** a * np.maximum(u2, 0.0) ** (1.0 - a)
        s = np.where((u1 >= 0) & (u2 >= 0), geo - np.abs(u3), np.minimum(u1, u2))
    s = np.asarray(s, dtype=np.float64)
    return float(s[0]) if single else s


def contains(K: ConeSpec, x, tol: float = 1e-9) -> bool | np.ndarray:
    """Membership with relative tolerance ``slack >= -tol * (1 + |x|)``."""
    if tol < 0:
        raise ConeError("tol must be >= 0")
    X, single = _lift(K, x)
    ok = np.asarray(slack(K, X)) >= -tol * (1.0 + norm(K, X))
    return bool(ok[0]) if single else ok


# ---------------------------------------------------------------- Euclidean

def _soc_proj(X: np.ndarray) -> np.ndarray:
    x1 = X[:, 0]
    tail = X[:, 1:]
    delta = np.linalg.norm(tail, axis=1)
    out = np.zeros_like(X)
    inside = x1 >= delta
    polar = x1 <= -delta
    mid = ~(inside | polar)
    out[inside] = X[inside]
    if np.any(mid):
        f = (x1[mid] + delta[mid]) / (2.0 * delta[mid])
        out[mid, 0] = f * delta[mid]
        out[mid, 1:] = f[:, None] * tail[mid]
    return out


def project_euclidean(K: ConeSpec, x):
    """Nearest point of ``K`` (Frobenius distance for PSD)."""
    X, single = _lift(K, x)
    if K.kind == "orthant":
        P = np.maximum(X, 0.0)
    elif K.kind == "soc":
        P = _soc_proj(X)
    elif K.kind == "rsoc":
        P = _rot(_soc_proj(_rot(X)))
    elif K.kind == "psd":
        w, V = jacobi_eigen(psd_unpack(X, K.n))
        M = np.einsum("bij,bj,bkj->bik", V, np.maximum(w, 0.0), V)
        P = psd_pack(0.5 * (M + np.swapaxes(M, 1, 2)))
    else:
        raise UnsupportedProjection(f"no closed-form Euclidean projection onto {K.name}")
    return _drop(P, single)


def project_polar_euclidean(K: ConeSpec, x):
    """Projection onto the polar cone, ``x - P_K(x)``."""
    X, single = _lift(K, x)
    return _drop(X - np.atleast_2d(project_euclidean(K, X)), single)


def project_dual_euclidean(K: ConeSpec, x):
    """Projection onto ``K*`` via ``P_{K*}(x) = -P_{K polar}(-x)``."""
    X, single = _lift(K, x)
    return _drop(0.0 - np.atleast_2d(project_polar_euclidean(K, -X)), single)


def moreau_decompose(K: ConeSpec, x):
    """``x = p - q`` with ``p = P_K(x)``, ``q in K*`` and ``<p, q> = 0``."""
    X, single = _lift(K, x)
    P = np.atleast_2d(project_euclidean(K, X))
    return _drop(P, single), _drop(P - X, single)


# ---------------------------------------------------------------- radial

def _check_domain(K: ConeSpec, X: np.ndarray) -> None:
    def need(coord, mask, msg):
        if not np.all(mask):
            raise ConeDomainError(K, coord, msg)

    if K.kind == "exp":
        need(0, X[:, 0] > 0, "must be > 0 for the radial exponential projection")
        need(1, X[:, 1] > 0, "must be > 0 for the radial exponential projection")
    elif K.kind == "dexp":
        need(0, X[:, 0] > 0, "must be > 0 for the radial dual exponential projection")
        need(2, X[:, 2] < 0, "must be < 0 for the radial dual exponential projection")
    elif K.kind == "pow":
        need(1, X[:, 1] > 0, "must be > 0 for the radial power projection")


def _pow_target(K: ConeSpec, X: np.ndarray) -> np.ndarray:
    """Smallest first coordinate that puts ``X`` in the (scaled) power cone."""
    a = K.alpha
    sc = _pow_scale(K)
    u2 = X[:, 1] * sc[1]
    u3 = X[:, 2]
    return (u2 ** ((a - 1.0) / a) * np.abs(u3) ** (1.0 / a)) / sc[0]


def _exp_target(X: np.ndarray) -> np.ndarray:
    return X[:, 1] * np.log(X[:, 0] / X[:, 1])


def _dexp_target(X: np.ndarray) -> np.ndarray:
    return X[:, 2] + X[:, 2] * np.log(X[:, 0] / -X[:, 2])


def radial_step(K: ConeSpec, x):
    """Step length along :func:`ray` taken by :func:`project_radial`.

    Scalar per point, except for the orthant where it is one step per
    coordinate.
    """
    X, single = _lift(K, x)
    _check_domain(K, X)
    if K.kind == "orthant":
        lam = np.maximum(-X, 0.0)
    elif K.kind == "soc":
        lam = np.maximum(np.linalg.norm(X[:, 1:], axis=1) - X[:, 0], 0.0)
    elif K.kind == "rsoc":
        U = _rot(X)
        lam = np.maximum(np.linalg.norm(U[:, 1:], axis=1) - U[:, 0], 0.0)
    elif K.kind == "psd":
        w, _ = jacobi_eigen(psd_unpack(X, K.n))
        lam = np.maximum(-w.min(axis=1), 0.0)
    elif K.kind == "exp":
        lam = np.maximum(X[:, 2] - _exp_target(X), 0.0)
    elif K.kind == "dexp":
        lam = np.maximum(_dexp_target(X) - X[:, 1], 0.0)
    else:
        lam = np.maximum(_pow_target(K, X) - X[:, 0], 0.0)
    return _drop(lam, single)


def project_radial(K: ConeSpec, x):
    """Move ``x`` along :func:`ray` by the smallest step that reaches ``K``."""
    X, single = _lift(K, x)
    _check_domain(K, X)
    P = X.copy()
    if K.kind == "orthant":
        P = np.maximum(X, 0.0)
    elif K.kind == "soc":
        P[:, 0] = np.maximum(X[:, 0], np.linalg.norm(X[:, 1:], axis=1))
    elif K.kind == "rsoc":
        U = _rot(X)
        U[:, 0] = np.maximum(U[:, 0], np.linalg.norm(U[:, 1:], axis=1))
        P = _rot(U)
    elif K.kind == "psd":
        w, _ = jacobi_eigen(psd_unpack(X, K.n))
        P = X + np.maximum(-w.min(axis=1), 0.0)[:, None] * _psd_diag_mask(K.n)
    elif K.kind == "exp":
        P[:, 2] = np.minimum(X[:, 2], _exp_target(X))
    elif K.kind == "dexp":
        P[:, 1] = np.maximum(X[:, 1], _dexp_target(X))
    else:
        P[:, 0] = np.maximum(X[:, 0], _pow_target(K, X))
    return _drop(P, single)


def project_dual_radial(K: ConeSpec, y, polar: bool = False):
    """Radial projection onto ``K*``; with ``polar=True`` onto ``-K*``.

    The polar variant serves duals with a sign convention ``y <= 0``, e.g.
    the resource multipliers of a ``W x <= b`` constraint.
    """
    Kd = dual_cone(K)
    if polar:
        Y, single = _lift(Kd, y)
        return _drop(0.0 - np.atleast_2d(project_radial(Kd, -Y)), single)
    return project_radial(Kd, y)


def radial_vjp(K: ConeSpec, x, cotangent):
    """``J^T g`` for the Jacobian ``J`` of :func:`project_radial` at ``x``.

    At a tie between the two branches of the max/min the identity branch is
    used.
    """
    X, single = _lift(K, x)
    G, _ = _lift(K, cotangent)
    if G.shape != X.shape:
        raise ConeError("cotangent and point shapes differ")
    _check_domain(K, X)
    out = G.copy()
    if K.kind == "orthant":
        out = np.where(X >= 0, G, 0.0)
    elif K.kind in ("soc", "rsoc"):
        U = _rot(X) if K.kind == "rsoc" else X
        H = _rot(G) if K.kind == "rsoc" else G.copy()
        tail = U[:, 1:]
        nt = np.linalg.norm(tail, axis=1)
        act = nt > U[:, 0]
        g0 = H[:, 0].copy()
        H[act, 0] = 0.0
        H[act, 1:] += (g0[act] / nt[act])[:, None] * tail[act]
        out = _rot(H) if K.kind == "rsoc" else H
    elif K.kind == "psd":
        lam, v = lambda_min_with_vector(psd_unpack(X, K.n))
        act = lam < 0
        if np.any(act):
            iu = np.triu_indices(K.n)
            # d lambda_min / d x_k = v_i v_j * (1 if i == j else 2)
            dlam = v[:, iu[0]] * v[:, iu[1]] * _psd_weights(K.n)
            ray_dot = G @ _psd_diag_mask(K.n)
            out[act] = G[act] - ray_dot[act, None] * dlam[act]
    elif K.kind == "exp":
        act = _exp_target(X) < X[:, 2]
        g3 = G[:, 2]
        out[act, 2] = 0.0
        out[act, 0] += g3[act] * X[act, 1] / X[act, 0]
        out[act, 1] += g3[act] * (np.log(X[act, 0] / X[act, 1]) - 1.0)
    elif K.kind == "dexp":
        act = _dexp_target(X) > X[:, 1]
        g2 = G[:, 1]
        out[act, 1] = 0.0
        out[act, 0] += g2[act] * X[act, 2] / X[act, 0]
        out[act, 2] += g2[act] * np.log(X[act, 0] / -X[act, 2])
    else:
        tgt = _pow_target(K, X)
        act = tgt > X[:, 0]
        a = K.alpha
        g1 = G[:, 0]
        out[act, 0] = 0.0
        x2, x3 = X[act, 1], X[act, 2]
        out[act, 1] += g1[act] * ((a - 1.0) / a) * tgt[act] / x2
        with np.errstate(divide="ignore", invalid="ignore"):
            d3 = np.where(x3 != 0.0, tgt[act] / (a * np.where(x3 != 0.0, x3, 1.0)), 0.0)
        out[act, 2] += g1[act] * d3
    return _drop(out, single)
