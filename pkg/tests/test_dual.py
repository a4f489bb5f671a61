"""Dual norm solver against an independent depth-1 oracle, plus dual maps.

At depth 1 the unit ball is exactly the intersection of three ellipsoids
(the three maximal disjoint families), written out by hand below; SLSQP on
those hand constraints is the independent oracle.  Linear objectives on
convex sets have only global local-maxima, so converged KKT points are
trusted up to tolerance.
"""

import math

import numpy as np
import pytest
import scipy.optimize

from jamestree.dual import (
    DualNormError,
    DualNormSolver,
    DualVector,
    HorizonVector,
    adjoint_project,
    dual_norm,
    g_functional,
    horizon_map,
    level_norm,
    pairing,
)
from jamestree.primal import JTVector, norm_dp, norming_functional
from jamestree.tree import NodeId, node_count

ROOT = NodeId.root()


def dv(depth, **by_text):
    return DualVector(depth, {NodeId.from_text(t): v for t, v in by_text.items()})


def rand_dual(depth, rng, sparsity=None):
    arr = rng.standard_normal(node_count(depth))
    if sparsity is not None:
        arr *= rng.random(len(arr)) < sparsity
    return DualVector.from_array(depth, arr)


def depth1_dual_oracle(c, starts=8, seed=0):
    """Maximize c.x over the hand-written depth-1 unit ball."""
    constraints = [
        {"type": "ineq", "fun": lambda x: 1 - ((x[0] + x[1]) ** 2 + x[2] ** 2)},
        {"type": "ineq", "fun": lambda x: 1 - ((x[0] + x[2]) ** 2 + x[1] ** 2)},
        {"type": "ineq", "fun": lambda x: 1 - (x[0] ** 2 + x[1] ** 2 + x[2] ** 2)},
    ]
    rng = np.random.default_rng(seed)
    best = 0.0
    inits = [np.zeros(3), 0.5 * c / max(1e-12, np.linalg.norm(c))]
    inits += [rng.uniform(-0.5, 0.5, 3) for _ in range(starts)]
    for x0 in inits:
        res = scipy.optimize.minimize(
            lambda x: -float(c @ x),
            x0,
            method="SLSQP",
            constraints=constraints,
            options={"maxiter": 200, "ftol": 1e-12},
        )
        if res.success and all(con["fun"](res.x) >= -1e-9 for con in constraints):
            best = max(best, float(c @ res.x))
    return best


# --- pinned examples ---------------------------------------------------------


def test_unit_functional_at_root():
    res = dual_norm(dv(1, **{".": 1.0}))
    assert res.value == pytest.approx(1.0, abs=1e-7)
    assert res.gap <= 1e-7


def test_sibling_pair_aggregates_in_ell2():
    res = dual_norm(dv(1, **{"-": 1.0, "+": 1.0}))
    assert res.value == pytest.approx(math.sqrt(2.0), abs=1e-6)


def test_chain_pair_collapses_to_one():
    res = dual_norm(dv(1, **{".": 1.0, "+": 1.0}))
    assert res.value == pytest.approx(1.0, abs=1e-6)


def test_depth1_oracle_agrees_on_pinned_examples():
    assert depth1_dual_oracle(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0, abs=1e-8)
    assert depth1_dual_oracle(np.array([0.0, 1.0, 1.0])) == pytest.approx(
        math.sqrt(2.0), abs=1e-8
    )
    assert depth1_dual_oracle(np.array([1.0, 0.0, 1.0])) == pytest.approx(1.0, abs=1e-8)


def test_dual_norm_matches_depth1_oracle_on_randoms():
    rng = np.random.default_rng(2024)
    for i in range(20):
        c = rng.standard_normal(3)
        oracle = depth1_dual_oracle(c, seed=i)
        res = DualNormSolver(1).solve_array(c, tol=1e-8)
        assert res.value == pytest.approx(oracle, abs=5e-6), f"case {i}: {c}"


# --- solver contract -----------------------------------------------------------


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_solution_is_certified(depth):
    rng = np.random.default_rng(depth)
    for _ in range(8):
        xstar = rand_dual(depth, rng)
        res = dual_norm(xstar, tol=1e-7)
        assert res.gap <= 1e-7
        assert norm_dp(res.maximizer)[0] <= 1.0 + 1e-7
        assert pairing(xstar, res.maximizer) == pytest.approx(res.value, abs=1e-9)
        assert res.active_families, "a nonzero functional has tight constraints"
        assert res.value > 0


def test_zero_functional():
    res = dual_norm(DualVector.zero(2))
    assert res.value == 0.0
    assert res.gap == 0.0
    assert res.active_families == []
    assert res.maximizer.coeffs == {}


def test_homogeneity():
    rng = np.random.default_rng(5)
    xstar = rand_dual(2, rng)
    base = dual_norm(xstar).value
    for lam in (0.25, 3.0, 17.5):
        scaled = DualVector.from_array(2, lam * xstar.to_array())
        assert dual_norm(scaled).value == pytest.approx(lam * base, rel=1e-6)


def test_duality_inequality():
    rng = np.random.default_rng(99)
    for depth in (1, 2, 3):
        for _ in range(10):
            xstar = rand_dual(depth, rng)
            x = JTVector.from_array(depth, rng.standard_normal(node_count(depth)))
            lhs = abs(pairing(xstar, x))
            assert lhs <= dual_norm(xstar).value * norm_dp(x)[0] + 1e-6


def test_norming_functional_has_unit_dual_norm():
    rng = np.random.default_rng(13)
    for depth in (1, 2, 3):
        for _ in range(6):
            x = JTVector.from_array(depth, rng.standard_normal(node_count(depth)))
            f = norming_functional(x)
            assert dual_norm(f).value == pytest.approx(1.0, abs=1e-6)


def test_bidual_consistency_via_sampled_functionals():
    rng = np.random.default_rng(31)
    depth = 2
    x = JTVector.from_array(depth, rng.standard_normal(node_count(depth)))
    norm_x = norm_dp(x)[0]
    best = 0.0
    for _ in range(15):
        probe = JTVector.from_array(depth, rng.standard_normal(node_count(depth)))
        f = norming_functional(probe)
        best = max(best, abs(pairing(f, x)))
        assert abs(pairing(f, x)) <= norm_x + 1e-9
    assert abs(pairing(norming_functional(x), x)) == pytest.approx(norm_x, abs=1e-9)


def test_deterministic_given_fresh_solver():
    arr = np.random.default_rng(77).standard_normal(node_count(2))
    a = DualNormSolver(2).solve_array(arr)
    b = DualNormSolver(2).solve_array(arr)
    assert a.value == b.value
    assert a.gap == b.gap
    assert a.iterations == b.iterations


def test_warm_solver_reuses_pools():
    solver = DualNormSolver(2)
    arr = np.random.default_rng(3).standard_normal(node_count(2))
    cold = solver.solve_array(arr)
    warm = solver.solve_array(arr)
    # both runs carry their own <= 1e-7 certificate, so they agree to 2e-7
    assert warm.value == pytest.approx(cold.value, abs=2e-7)
    assert solver.pairing_bound(arr) >= cold.value - 1e-9


def test_budget_exhaustion_raises_with_bounds():
    arr = np.random.default_rng(4).standard_normal(node_count(2))
    with pytest.raises(DualNormError) as info:
        DualNormSolver(2).solve_array(arr, max_projections=2)
    err = info.value
    assert err.lower > 0
    assert err.upper >= err.lower or math.isinf(err.upper)
    assert err.projections <= 2


def test_tol_validation():
    with pytest.raises(ValueError):
        dual_norm(dv(1, **{".": 1.0}), tol=0.0)


def test_result_record_shape():
    rec = dual_norm(dv(1, **{".": 2.0})).to_record()
    assert set(rec) == {"value", "gap", "families", "iterations"}
    assert rec["value"] == pytest.approx(2.0, abs=1e-6)


# --- adjoint projections ---------------------------------------------------------


def test_adjoint_band_restriction():
    xstar = dv(2, **{".": 1.0, "-": 2.0, "--": 3.0})
    assert adjoint_project(xstar, 0, 2).coeffs == xstar.coeffs
    mid = adjoint_project(xstar, 1, 1)
    assert mid.coeffs == {NodeId.from_text("-"): 2.0}
    tail = adjoint_project(xstar, 1)
    assert set(tail.coeffs) == {NodeId.from_text("-"), NodeId.from_text("--")}
    with pytest.raises(ValueError):
        adjoint_project(xstar, 2, 1)
    with pytest.raises(ValueError):
        adjoint_project(xstar, -1)


def test_adjoint_projections_are_contractive():
    rng = np.random.default_rng(8)
    for depth in (2, 3):
        xstar = rand_dual(depth, rng)
        full = dual_norm(xstar).value
        for lo in range(depth + 1):
            for hi in range(lo, depth + 1):
                part = dual_norm(adjoint_project(xstar, lo, hi)).value
                assert part <= full + 1e-6


def test_initial_band_norms_nondecreasing():
    rng = np.random.default_rng(21)
    xstar = rand_dual(3, rng)
    values = [dual_norm(adjoint_project(xstar, 0, N)).value for N in range(4)]
    for a, b in zip(values, values[1:]):
        assert b >= a - 1e-9
    assert values[-1] == pytest.approx(dual_norm(xstar).value, abs=2e-6)
    top = xstar.support_level()
    assert values[top] == pytest.approx(values[-1], abs=2e-6)


def test_single_level_below_tail_band():
    rng = np.random.default_rng(34)
    for _ in range(5):
        xstar = rand_dual(3, rng)
        for N in range(4):
            level_part = dual_norm(adjoint_project(xstar, N, N)).value
            tail_part = dual_norm(adjoint_project(xstar, N)).value
            assert level_part <= tail_part + 1e-6


# --- level norms and the horizon map ----------------------------------------------


def test_level_norm_examples():
    assert level_norm(dv(2, **{"--": 3.0, "-+": 4.0}), 2) == 5.0
    assert level_norm(dv(1, **{".": 1.0}), 1) == 0.0
    assert level_norm(dv(1, **{"-": 1.0, "+": 1.0}), 1) == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        level_norm(dv(1, **{".": 1.0}), 2)


def test_level_norm_agrees_with_dual_norm_on_single_levels():
    rng = np.random.default_rng(42)
    for depth, level in [(2, 1), (2, 2), (3, 2)]:
        xstar = adjoint_project(rand_dual(depth, rng), level, level)
        assert dual_norm(xstar).value == pytest.approx(
            level_norm(xstar, level), abs=1e-6
        )


def test_horizon_map_reads_leaf_coefficients():
    shallow = dv(3, **{".": 1.0, "-+": 2.0})
    assert not any(horizon_map(shallow).to_array())

    ones = DualVector(2, {NodeId.from_text(t): 1.0 for t in ("--", "-+", "+-", "++")})
    hv = horizon_map(ones)
    assert np.array_equal(hv.to_array(), np.ones(4))
    assert hv.norm() == pytest.approx(2.0)

    rng = np.random.default_rng(16)
    xstar = rand_dual(3, rng)
    assert horizon_map(xstar).norm() == pytest.approx(level_norm(xstar, 3), abs=1e-9)


def test_g_functional():
    rng = np.random.default_rng(50)
    a, b = rand_dual(2, rng), rand_dual(2, rng)
    assert g_functional(a, b) == pytest.approx(g_functional(b, a), abs=1e-12)
    assert g_functional(a, a) == pytest.approx(horizon_map(a).norm() ** 2, abs=1e-9)
    shallow = dv(2, **{".": 5.0, "-": 1.0})
    assert g_functional(shallow, b) == 0.0
    with pytest.raises(ValueError):
        g_functional(a, rand_dual(1, rng))


def test_pairing_requires_equal_depths():
    with pytest.raises(ValueError):
        pairing(dv(1, **{".": 1.0}), JTVector.zero(2))


def test_dual_vector_container():
    arr = np.arange(7.0)
    xstar = DualVector.from_array(2, arr)
    assert np.array_equal(xstar.to_array(), arr)
    assert xstar.support_level() == 2
    with pytest.raises(ValueError):
        DualVector(1, {NodeId.from_text("++"): 1.0})
    with pytest.raises(ValueError):
        DualVector(1, {ROOT: math.inf})
