import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duallearn import cones, problems
from duallearn.completion import (CompletionError, ConicProblemData, bounded_bound, complete_bounded,
                                  complete_knapsack, complete_prodplan, complete_quadratic,
                                  complete_trust_region, completion_vjp, equality_residual,
                                  knapsack_bound, knapsack_conic_form, knapsack_dual, lagrangian_bound,
                                  oracle_complete, oracle_complete_prodplan, prodplan_bound, prodplan_dual,
                                  quadratic_bound, trust_region_bound)
from duallearn.linalg import SingularMatrixError
from duallearn.problems import KnapsackInstance, ProdPlanInstance
from duallearn.refsolve import OracleError, solve_knapsack_lp, solve_prodplan

import certify

TOY_PP = ProdPlanInstance(d=[2.0], f=[8.0], r=[1.0], b=1.0)
TOY_KS = KnapsackInstance(p=[3.0, 1.0], W=[[2.0, 1.0]], b=[2.0])


def _fd(f, y, h=1e-6):
    y = np.asarray(y, dtype=np.float64)
    g = np.zeros_like(y)
    for i in range(y.size):
        e = np.zeros_like(y)
        e.flat[i] = h
        g.flat[i] = (f(y + e) - f(y - e)) / (2 * h)
    return g


def _rel_close(a, b, rtol):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) <= rtol * max(1.0, np.max(np.abs(b)))


# ---------------------------------------------------------------- generic completions

def test_lagrangian_bound_examples():
    prob = knapsack_conic_form(TOY_KS)
    assert lagrangian_bound(prob, [0.0], np.zeros(4)) == 0.0
    with pytest.raises(CompletionError, match="length"):
        lagrangian_bound(prob, [0.0, 1.0], np.zeros(4))


def test_bounded_example():
    # pick A, y so that c - A^T y = (1.5, -2, 0)
    zl, zu = complete_bounded(c=[1.5, -2.0, 0.0], A=np.zeros((1, 3)), l=[0, 0, 0], u=[1, 1, 1], y=[0.0])
    np.testing.assert_array_equal(zl, [1.5, 0.0, 0.0])
    np.testing.assert_array_equal(zu, [0.0, 2.0, 0.0])
    zl, zu = complete_bounded([0.0, 0.0], np.zeros((1, 2)), [0, 0], [1, 1], [0.0])
    assert not zl.any() and not zu.any()


def test_bounded_rejects_bad_box():
    with pytest.raises(CompletionError, match="coordinate 1"):
        complete_bounded([1.0, 1.0], np.zeros((1, 2)), [0.0, 2.0], [1.0, 2.0], [0.0])


def _bounded_problem(rng, n=5, m=3):
    A = rng.normal(size=(m, n))
    c = rng.normal(size=n)
    l = rng.uniform(-2, 0, size=n)
    u = l + rng.uniform(0.5, 3, size=n)
    b = A @ (l + rng.random(n) * (u - l)) - rng.random(m)  # strictly feasible
    prob = ConicProblemData(A=A, b=b, H=np.vstack([np.eye(n), -np.eye(n)]), h=np.concatenate([l, -u]), c=c,
                            coneK=cones.Orthant(m), coneC=cones.Orthant(2 * n))
    return prob, (A, b, c, l, u)


def test_bounded_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        prob, (A, b, c, l, u) = _bounded_problem(rng)
        y = rng.random(A.shape[0])
        zl, zu = complete_bounded(c, A, l, u, y)
        z = np.concatenate([zl, zu])
        assert equality_residual(prob, y, z) <= 1e-12 * (1 + np.max(np.abs(c)))
        closed = bounded_bound(b, c, A, l, u, y)
        assert closed == pytest.approx(lagrangian_bound(prob, y, z), abs=1e-12)
        ref = lagrangian_bound(prob, y, oracle_complete(prob, y))
        assert abs(closed - ref) <= 1e-8 * (1 + abs(ref))


def test_trust_region_examples():
    z0, z = complete_trust_region([3.0, 4.0], np.zeros((1, 2)), [0.0], "l2")
    assert z0 == 5.0
    np.testing.assert_array_equal(z, [3.0, 4.0])
    assert complete_trust_region([3.0, -4.0], np.zeros((1, 2)), [0.0], "l1")[0] == 4.0
    assert complete_trust_region([3.0, -4.0], np.zeros((1, 2)), [0.0], "linf")[0] == 7.0
    assert complete_trust_region([0.0, 0.0], np.zeros((1, 2)), [0.0])[0] == 0.0
    with pytest.raises(CompletionError):
        complete_trust_region([1.0], [[1.0]], [0.0], "l3")


def test_trust_region_in_dual_cone():
    rng = np.random.default_rng(1)
    for _ in range(50):
        A = rng.normal(size=(2, 4))
        c, y = rng.normal(size=4), rng.normal(size=2)
        z0, z = complete_trust_region(c, A, y)
        assert cones.contains(cones.SOC(5), np.concatenate([[z0], z]), 1e-12)
        np.testing.assert_allclose(A.T @ y + z, c, atol=1e-12)


def test_quadratic_examples():
    z0, z = complete_quadratic([1.0, 1.0], np.zeros((1, 2)), np.eye(2), [0.0])
    np.testing.assert_array_equal(z, [1.0, 1.0])
    assert z0 == 1.0
    z0, z = complete_quadratic([2.0, 3.0], np.zeros((1, 2)), np.diag([2.0, 1.0]), [0.0])
    np.testing.assert_allclose(z, [1.0, 3.0])
    assert z0 == 5.0


def test_quadratic_random_rsoc_and_residual():
    rng = np.random.default_rng(2)
    for _ in range(50):
        F = np.triu(rng.normal(size=(4, 4))) + 3 * np.eye(4)
        A = rng.normal(size=(2, 4))
        c, y = rng.normal(size=4), rng.normal(size=2)
        z0, z = complete_quadratic(c, A, F, y)
        assert np.max(np.abs(A.T @ y + F.T @ z - c)) < 1e-8
        assert 2 * z0 == z @ z
        assert cones.contains(cones.RSOC(6), np.concatenate([[1.0, z0], z]), 1e-10)


def test_quadratic_singular():
    with pytest.raises(SingularMatrixError):
        complete_quadratic([1.0, 1.0], np.zeros((1, 2)), [[1.0, 1.0], [1.0, 1.0]], [0.0])


# ---------------------------------------------------------------- knapsack

def test_knapsack_example():
    zl, zu = complete_knapsack(TOY_KS, [-1.5])
    np.testing.assert_allclose(zl, [0.0, 0.5])
    np.testing.assert_allclose(zu, [0.0, 0.0])
    assert knapsack_bound(TOY_KS, [-1.5]) == -3.0
    certify.weak_duality(solve_knapsack_lp(TOY_KS).value, knapsack_bound(TOY_KS, [-1.5]))


def test_knapsack_zero_dual():
    zl, zu = complete_knapsack(TOY_KS, [0.0])
    assert not zl.any()
    np.testing.assert_array_equal(zu, TOY_KS.p)
    assert knapsack_bound(TOY_KS, [0.0]) == -TOY_KS.p.sum()


def test_knapsack_rejects_positive():
    with pytest.raises(CompletionError, match="y <= 0"):
        complete_knapsack(TOY_KS, [0.1])
    with pytest.raises(CompletionError, match="length 2"):
        knapsack_bound(TOY_KS, [-1.0, -1.0])


def test_knapsack_weak_duality_random():
    ds = problems.gen_knapsack(5, 20, 20, seed=11)
    rng = np.random.default_rng(3)
    for inst in ds.instances:
        opt = solve_knapsack_lp(inst).value
        Y = -rng.exponential(0.5, size=(10, 5)) * rng.integers(0, 2, size=(10, 5))
        certify.weak_duality(np.full(10, opt), knapsack_bound(inst, Y))


def test_knapsack_feasibility_by_construction():
    inst = problems.gen_knapsack(5, 20, 1, seed=12).instances[0]
    prob = knapsack_conic_form(inst)
    Y = -np.random.default_rng(4).exponential(1.0, size=(10_000, 5))
    zl, zu = complete_knapsack(inst, Y)
    # conic form uses the multiplier -y on the flipped resource rows
    res = np.max(np.abs(-Y @ prob.A + np.concatenate([zl, zu], axis=1) @ prob.H - prob.c))
    assert res <= 1e-9 * (1 + np.max(np.abs(prob.c)))
    assert zl.min() >= 0 and zu.min() >= 0


def test_knapsack_matches_oracle():
    ds = problems.gen_knapsack(3, 12, 10, seed=13)
    rng = np.random.default_rng(5)
    for inst in ds.instances:
        prob = knapsack_conic_form(inst)
        y = -rng.exponential(0.3, size=3)
        ref = lagrangian_bound(prob, -y, oracle_complete(prob, -y))
        assert abs(knapsack_bound(inst, y) - ref) <= 1e-8 * (1 + abs(ref))
        sol = knapsack_dual(inst, y)
        assert sol.bound == pytest.approx(lagrangian_bound(prob, -y, sol.z), rel=1e-10)


def test_knapsack_batched_matches_single():
    ds = problems.gen_knapsack(4, 9, 6, seed=14)
    stacked = problems.stack(ds.instances)
    Y = -np.random.default_rng(6).random((6, 4))
    batched = knapsack_bound(stacked, Y)
    for i, inst in enumerate(ds.instances):
        assert batched[i] == pytest.approx(knapsack_bound(inst, Y[i]), rel=1e-14)


# ---------------------------------------------------------------- production planning

def test_prodplan_examples():
    pi, tau, sigma = complete_prodplan(TOY_PP, -1.0)
    np.testing.assert_array_equal(pi, [3.0])
    np.testing.assert_array_equal(tau, [8.0])
    assert sigma[0] == pytest.approx(-math.sqrt(48.0), rel=1e-15)
    assert prodplan_bound(TOY_PP, -1.0) == pytest.approx(-1 + 4 * math.sqrt(6), abs=1e-12)
    assert prodplan_bound(TOY_PP, -1.0) == pytest.approx(8.797958971, abs=1e-9)
    assert prodplan_bound(TOY_PP, -6.0) == pytest.approx(10.0, abs=1e-12)
    certify.weak_duality(solve_prodplan(TOY_PP).value, prodplan_bound(TOY_PP, -6.0))
    inst = problems.prodplan_instance(7, seed=1, index=3)
    assert prodplan_bound(inst, 0.0) == pytest.approx(2 * np.sum(np.sqrt(inst.d * inst.f)), rel=1e-14)


def test_prodplan_rejects_positive():
    with pytest.raises(CompletionError):
        complete_prodplan(TOY_PP, 0.5)
    with pytest.raises(CompletionError):
        prodplan_bound(TOY_PP, np.array([-1.0, 0.5]))


def test_prodplan_rsoc_boundary_and_residual():
    inst = problems.prodplan_instance(10, seed=2, index=0)
    for y in -np.random.default_rng(7).exponential(50.0, size=200):
        pi, tau, sigma = complete_prodplan(inst, y)
        assert np.max(np.abs(inst.r * y + pi - inst.d)) <= 1e-9 * (1 + np.max(inst.d))
        trip = np.stack([pi, tau, sigma], axis=1)
        assert np.all(cones.contains(cones.RSOC(3), trip, 1e-8))
        np.testing.assert_allclose(2 * pi * tau, sigma ** 2, rtol=1e-12)
        sol = prodplan_dual(inst, y)
        assert sol.bound == pytest.approx(inst.b * y - math.sqrt(2) * sigma.sum(), rel=1e-12)


def test_prodplan_matches_oracle_and_weak_duality():
    rng = np.random.default_rng(8)
    for i in range(20):
        inst = problems.prodplan_instance(10, seed=3, index=i)
        opt = solve_prodplan(inst).value
        for y in -rng.exponential(30.0, size=3):
            _, ref = oracle_complete_prodplan(inst, y)
            closed = prodplan_bound(inst, y)
            assert abs(closed - ref) <= 1e-9 * (1 + abs(ref))
            certify.weak_duality(opt, closed)


def test_prodplan_oracle_rejects_unbounded():
    with pytest.raises(OracleError):
        oracle_complete_prodplan(ProdPlanInstance(d=[1.0], f=[1.0], r=[1.0], b=1.0), 2.0)


# ---------------------------------------------------------------- gradients

def test_prodplan_vjp_formula():
    inst = problems.prodplan_instance(6, seed=4, index=1)
    rng = np.random.default_rng(9)
    for y in -rng.exponential(20.0, size=100):
        g = completion_vjp("prodplan", {"inst": inst, "y": y})
        expect = inst.b - np.sum(inst.r * np.sqrt(inst.f / (inst.d - inst.r * y)))
        assert g == pytest.approx(expect, rel=1e-14)
        fd = _fd(lambda t: prodplan_bound(inst, float(t[0])), [y], h=1e-6 * (1 + abs(y)))[0]
        assert abs(g - fd) <= 1e-6 * max(1.0, abs(g))


def test_knapsack_vjp_matches_fd_away_from_kinks():
    rng = np.random.default_rng(10)
    checked = 0
    while checked < 100:
        inst = problems.gen_knapsack(3, 8, 1, seed=int(rng.integers(1 << 30))).instances[0]
        y = -rng.exponential(0.3, size=3)
        s = -inst.p - inst.W.T @ y
        if np.min(np.abs(s)) < 1e-3:
            continue
        g = completion_vjp("knapsack", {"inst": inst, "y": y})
        fd = _fd(lambda t: knapsack_bound(inst, np.minimum(t, 0.0)), y, h=1e-7)
        assert _rel_close(g, fd, 1e-5)
        checked += 1


def test_bounded_vjp_matches_fd():
    rng = np.random.default_rng(11)
    for _ in range(100):
        _, (A, b, c, l, u) = _bounded_problem(rng)
        y = rng.random(A.shape[0])
        g = completion_vjp("bounded", {"b": b, "c": c, "A": A, "l": l, "u": u, "y": y})
        fd = _fd(lambda t: bounded_bound(b, c, A, l, u, t), y)
        assert _rel_close(g, fd, 1e-5)


@pytest.mark.parametrize("norm", ["l2", "l1", "linf"])
def test_trust_region_vjp_matches_fd(norm):
    rng = np.random.default_rng(12)
    for _ in range(100):
        A = rng.normal(size=(2, 4))
        b, c, y = rng.normal(size=2), rng.normal(size=4), rng.normal(size=2)
        inputs = {"b": b, "c": c, "A": A, "radius": 1.7, "y": y, "norm": norm}
        g = completion_vjp("trust_region", inputs)
        fd = _fd(lambda t: trust_region_bound(b, c, A, 1.7, t, norm), y)
        assert _rel_close(g, fd, 1e-5)


def test_quadratic_vjp_matches_fd():
    rng = np.random.default_rng(13)
    for _ in range(100):
        F = np.triu(rng.normal(size=(3, 3))) + 2 * np.eye(3)
        A = rng.normal(size=(2, 3))
        b, c, y = rng.normal(size=2), rng.normal(size=3), rng.normal(size=2)
        g = completion_vjp("quadratic", {"b": b, "c": c, "A": A, "F": F, "y": y})
        fd = _fd(lambda t: quadratic_bound(b, c, A, F, t), y)
        assert _rel_close(g, fd, 1e-5)


def test_vjp_zero_cotangent_and_bad_kind():
    inst = problems.gen_knapsack(2, 5, 1, seed=0).instances[0]
    assert not np.any(completion_vjp("knapsack", {"inst": inst, "y": [-0.2, -0.1]}, 0.0))
    assert completion_vjp("prodplan", {"inst": TOY_PP, "y": -1.0}, 0.0) == 0.0
    with pytest.raises(CompletionError, match="unknown"):
        completion_vjp("simplex", {}, 1.0)


def test_batched_vjp_rows():
    ds = problems.gen_prodplan(5, 4, seed=5)
    stacked = problems.stack(ds.instances)
    y = -np.array([1.0, 5.0, 10.0, 0.0])
    g = completion_vjp("prodplan", {"inst": stacked, "y": y}, np.array([1.0, 2.0, 0.0, -1.0]))
    for i, inst in enumerate(ds.instances):
        single = completion_vjp("prodplan", {"inst": inst, "y": y[i]})
        assert g[i] == pytest.approx(single * [1.0, 2.0, 0.0, -1.0][i], rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(-200.0, 0.0))
def test_prodplan_bound_below_optimum(index, y):
    inst = problems.prodplan_instance(8, seed=21, index=index)
    certify.weak_duality(solve_prodplan(inst).value, prodplan_bound(inst, y))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(-5.0, 0.0), min_size=3, max_size=3))
def test_knapsack_bound_below_optimum(index, y):
    inst = problems.knapsack_instance(3, 10, seed=22, index=index)
    certify.weak_duality(solve_knapsack_lp(inst).value, knapsack_bound(inst, y))
