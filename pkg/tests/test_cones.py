import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duallearn import cones
from duallearn.cones import (DUAL_EXP, EXP, PSD, RSOC, SOC, ConeDomainError, ConeError, Orthant,
                             Power, UnsupportedProjection)

import conegen


def test_contains_examples():
    assert cones.contains(SOC(3), [5.0, 3.0, 4.0], tol=1e-9)
    assert not cones.contains(Orthant(2), [1.0, -0.1])
    assert cones.contains(EXP, [1.0, 1.0, 0.0])
    assert not cones.contains(EXP, [1.0, 1.0, 0.1])


def test_contains_rejects_bad_dimension():
    with pytest.raises(ConeError, match="length 3"):
        cones.contains(SOC(3), [1.0, 2.0])


def test_cone_spec_validation():
    with pytest.raises(ConeError):
        cones.ConeSpec("soc", 1)
    with pytest.raises(ConeError):
        Power(1.0)
    with pytest.raises(ConeError):
        cones.ConeSpec("exp", 4)


def test_dual_cone_map():
    assert cones.dual_cone(SOC(5)) == SOC(5)
    assert cones.dual_cone(PSD(3)) == PSD(3)
    assert cones.dual_cone(EXP) == DUAL_EXP
    assert cones.dual_cone(DUAL_EXP) == EXP
    d = cones.dual_cone(Power(0.3))
    assert d.kind == "pow" and d.alpha == 0.3 and d.dual


def test_dual_power_membership_uses_scaling():
    a = 0.3
    y = np.array([a, 1 - a, 1.0])  # scaled point (1, 1, 1) lies on the boundary
    assert cones.contains(Power(a, dual=True), y)
    assert not cones.contains(Power(a, dual=True), y * [1, 1, 1.01])


@pytest.mark.parametrize("name,kind,n", [("soc3", "soc", 3), ("RSOC4", "rsoc", 4), ("psd2", "psd", 2),
                                         ("nonneg5", "orthant", 5), ("exp", "exp", 3), ("dualexp", "dexp", 3)])
def test_parse_cone(name, kind, n):
    K = cones.parse_cone(name)
    assert (K.kind, K.n) == (kind, n)


def test_parse_power_and_errors():
    assert cones.parse_cone("dpow0.25") == Power(0.25, dual=True)
    for bad in ("soc", "cube3", "exp3"):
        with pytest.raises(ConeError):
            cones.parse_cone(bad)


def test_psd_pack_roundtrip_and_inner():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    A = A + A.T
    B = rng.normal(size=(4, 4))
    B = B + B.T
    a, b = cones.psd_pack(A), cones.psd_pack(B)
    np.testing.assert_array_equal(cones.psd_unpack(a, 4), A)
    assert cones.inner(PSD(4), a, b) == pytest.approx(np.trace(A @ B))


# ---------------------------------------------------------------- Euclidean

def test_euclidean_examples():
    np.testing.assert_array_equal(cones.project_euclidean(Orthant(3), [1.0, -2.0, 0.0]), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(cones.project_euclidean(SOC(3), [0.0, 3.0, 4.0]), [2.5, 1.5, 2.0])
    P = cones.project_euclidean(PSD(2), cones.psd_pack(np.diag([1.0, -2.0])))
    np.testing.assert_allclose(cones.psd_unpack(P, 2), np.diag([1.0, 0.0]), atol=1e-15)


def test_euclidean_unsupported():
    for K in (EXP, DUAL_EXP, Power(0.5)):
        with pytest.raises(UnsupportedProjection, match="no closed-form"):
            cones.project_euclidean(K, [1.0, 1.0, 1.0])
        with pytest.raises(UnsupportedProjection):
            cones.moreau_decompose(K, [1.0, 1.0, 1.0])


def test_psd_projection_matches_lapack():
    rng = np.random.default_rng(1)
    for n in (2, 3, 6):
        A = rng.normal(size=(n, n))
        A = A + A.T
        w, V = np.linalg.eigh(A)
        ref = V @ np.diag(np.maximum(w, 0)) @ V.T
        got = cones.psd_unpack(cones.project_euclidean(PSD(n), cones.psd_pack(A)), n)
        np.testing.assert_allclose(got, ref, atol=1e-10)


def _moreau_certificate(K, X, tol=1e-8):
    """Projection optimality conditions: p in K, p - x in K*, <p, p - x> = 0."""
    P, Q = cones.moreau_decompose(K, X)
    assert np.all(cones.contains(K, P, tol))
    assert np.all(cones.contains(cones.dual_cone(K), Q, tol))
    nx = cones.norm(K, X)
    assert np.all(np.abs(cones.inner(K, P, Q)) <= tol * (1 + nx ** 2))
    np.testing.assert_allclose(P - Q, X, atol=1e-12 * (1 + nx.max()))


@pytest.mark.parametrize("K", [Orthant(4), SOC(3), SOC(12), RSOC(3), RSOC(7), PSD(2), PSD(5)],
                         ids=lambda K: K.name)
def test_euclidean_is_optimal(K):
    _moreau_certificate(K, conegen.sample(K, 500, np.random.default_rng(2)))


def test_moreau_examples():
    x = np.array([2.0, 1.0, 0.5])
    p, q = cones.moreau_decompose(SOC(3), x)
    np.testing.assert_array_equal(p, x)
    np.testing.assert_array_equal(q, 0.0)
    p, q = cones.moreau_decompose(SOC(3), -x)
    np.testing.assert_array_equal(p, 0.0)
    np.testing.assert_array_equal(q, x)
    p, q = cones.moreau_decompose(SOC(3), [0.0, 3.0, 4.0])
    np.testing.assert_allclose(p, [2.5, 1.5, 2.0])
    np.testing.assert_allclose(q, [2.5, -1.5, -2.0])
    assert p @ q == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("K", [Orthant(5), SOC(4), RSOC(5), PSD(3)], ids=lambda K: K.name)
def test_dual_projection_consistency(K):
    X = conegen.sample(K, 200, np.random.default_rng(3))
    np.testing.assert_allclose(cones.project_dual_euclidean(K, X), cones.project_euclidean(K, X), atol=1e-12)
    np.testing.assert_allclose(cones.project_polar_euclidean(K, X), -cones.project_euclidean(K, -X), atol=1e-12)


# ---------------------------------------------------------------- radial

def test_radial_examples():
    np.testing.assert_array_equal(cones.project_radial(SOC(3), [0.0, 3.0, 4.0]), [5.0, 3.0, 4.0])
    assert cones.radial_step(SOC(3), [0.0, 3.0, 4.0]) == 5.0
    P = cones.project_radial(PSD(2), cones.psd_pack(np.diag([1.0, -2.0])))
    np.testing.assert_allclose(cones.psd_unpack(P, 2), np.diag([3.0, 0.0]), atol=1e-15)
    np.testing.assert_array_equal(cones.project_radial(EXP, [1.0, 1.0, 1.0]), [1.0, 1.0, 0.0])
    np.testing.assert_allclose(cones.project_radial(Power(0.5), [1.0, 1.0, 2.0]), [4.0, 1.0, 2.0])


def test_rsoc_radial_moves_along_rotated_axis():
    x = np.array([1.0, -1.0, 2.0])
    p = cones.project_radial(RSOC(3), x)
    d = p - x
    assert d[0] == pytest.approx(d[1]) and d[0] > 0 and d[2] == 0
    assert cones.slack(RSOC(3), p) == pytest.approx(0.0, abs=1e-12)
    assert 2 * p[0] * p[1] == pytest.approx(p[2] ** 2)


def test_point_inside_is_unchanged():
    for K, x in [(SOC(3), [5.0, 3.0, 1.0]), (EXP, [3.0, 1.0, 0.5]), (Power(0.3), [2.0, 2.0, 1.0]),
                 (PSD(2), cones.psd_pack(np.eye(2)))]:
        np.testing.assert_array_equal(cones.project_radial(K, x), x)
        assert np.all(np.atleast_1d(cones.radial_step(K, x)) == 0.0)


def test_dual_radial_orthant_negative_convention():
    np.testing.assert_array_equal(cones.project_dual_radial(Orthant(2), [-1.0, 2.0], polar=True), [-1.0, 0.0])


def test_dual_exp_radial():
    # (1, 5, -1) satisfies y1 >= -y3 exp(y2 / y3 - 1) = exp(-6), so the max
    # formula leaves it where it is
    y = np.array([1.0, 5.0, -1.0])
    assert cones.contains(DUAL_EXP, y)
    np.testing.assert_array_equal(cones.project_dual_radial(EXP, y), y)
    # y2 below the target y3 + y3 log(y1 / -y3) = -1 is raised to it
    p = cones.project_dual_radial(EXP, [1.0, -3.0, -1.0])
    np.testing.assert_allclose(p, [1.0, -1.0, -1.0])
    assert cones.contains(DUAL_EXP, p)


def test_domain_errors_name_coordinate():
    with pytest.raises(ConeDomainError, match="x2"):
        cones.project_radial(EXP, [1.0, -1.0, 0.0])
    with pytest.raises(ConeDomainError, match="x3"):
        cones.project_radial(DUAL_EXP, [1.0, 0.0, 1.0])
    with pytest.raises(ConeDomainError, match="x2"):
        cones.project_radial(Power(0.5), [1.0, 0.0, 1.0])


ALL_CONES = [Orthant(6), SOC(3), SOC(9), RSOC(3), RSOC(6), PSD(2), PSD(4), EXP, DUAL_EXP,
             Power(0.25), Power(0.75, dual=True)]


@pytest.mark.parametrize("K", ALL_CONES, ids=lambda K: K.name)
def test_radial_properties(K):
    X = conegen.sample(K, 1000, np.random.default_rng(4))
    P = cones.project_radial(K, X)
    assert np.all(cones.contains(K, P, 1e-8))
    scale = 1 + cones.norm(K, X)[:, None]
    assert np.all(np.abs(cones.project_radial(K, P) - P) <= 1e-9 * scale)
    lam = np.atleast_1d(cones.radial_step(K, X))
    step = lam if K.kind == "orthant" else lam[:, None] * cones.ray(K)
    np.testing.assert_allclose(P, X + step, atol=1e-12 * scale.max())
    broken, lam_max = conegen.shrink_breaks_membership(K, X, P)
    assert np.all(broken[lam_max > 1e-8])
    assert np.all(np.asarray(cones.contains(K, X[lam_max == 0], 1e-12)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_radial_soc_hypothesis(x):
    p = cones.project_radial(SOC(4), x)
    assert cones.contains(SOC(4), p, 1e-9)
    assert p[0] >= x[0]
    np.testing.assert_array_equal(p[1:], x[1:])


# ---------------------------------------------------------------- vjp

def _fd_jacobian_t(K, x, g, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = g @ (cones.project_radial(K, x + e) - cones.project_radial(K, x - e)) / (2 * h)
    return out


def test_vjp_examples():
    g = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(cones.radial_vjp(SOC(3), [0.0, 3.0, 4.0], g), [0.0, 0.6, 0.8])
    np.testing.assert_array_equal(cones.radial_vjp(SOC(3), [5.0, 1.0, 1.0], [0.3, -1.0, 2.0]), [0.3, -1.0, 2.0])
    x = np.array([0.0, 3.0, 4.0])
    np.testing.assert_allclose(_fd_jacobian_t(SOC(3), x, g), [0.0, 0.6, 0.8], atol=1e-8)


def test_vjp_psd_diagonal_cotangent():
    rng = np.random.default_rng(5)
    x = cones.psd_pack(np.diag([1.0, -2.0, 0.5]) + 0.1 * (lambda A: A + A.T)(rng.normal(size=(3, 3))))
    g = cones.psd_pack(np.eye(3))
    fd = _fd_jacobian_t(PSD(3), x, g)
    got = cones.radial_vjp(PSD(3), x, g)
    assert np.linalg.norm(got - fd) <= 1e-5 * np.linalg.norm(fd)


def _away_from_kink(K, x):
    lam = np.atleast_1d(cones.radial_step(K, x))
    if K.kind == "orthant":
        return np.all(np.abs(x) > 1e-3)
    margin = abs(float(cones.slack(K, x)))
    return lam[0] > 1e-3 or margin > 1e-3


@pytest.mark.parametrize("K", ALL_CONES, ids=lambda K: K.name)
def test_vjp_matches_finite_differences(K):
    rng = np.random.default_rng(6)
    X = conegen.sample(K, 60, rng)
    checked = 0
    for x in X:
        if not _away_from_kink(K, x):
            continue
        g = rng.normal(size=K.dim)
        fd = _fd_jacobian_t(K, x, g)
        got = cones.radial_vjp(K, x, g)
        assert np.linalg.norm(got - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)
        checked += 1
    assert checked >= 40


def test_vjp_tie_uses_identity_branch():
    g = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(cones.radial_vjp(SOC(3), [5.0, 3.0, 4.0], g), g)
    np.testing.assert_array_equal(cones.radial_vjp(Orthant(3), [0.0, 1.0, -1.0], g), [1.0, 2.0, 0.0])


def test_vjp_batched_equals_single():
    K = RSOC(5)
    rng = np.random.default_rng(7)
    X = conegen.sample(K, 10, rng)
    G = rng.normal(size=X.shape)
    batched = cones.radial_vjp(K, X, G)
    for x, g, b in zip(X, G, batched):
        np.testing.assert_allclose(cones.radial_vjp(K, x, g), b)


def test_exp_boundary_value():
    p = cones.project_radial(EXP, [2.0, 1.0, 5.0])
    assert p[2] == pytest.approx(math.log(2.0))
