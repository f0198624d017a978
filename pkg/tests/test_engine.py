"""Tests for the separable PLQ minimization engine.

The dual-bound tests double as sign-convention checks: whatever the backend
reports, the certified bound evaluated at the returned multipliers must
reproduce the optimum (strong duality holds for these instances), so a sign
slip would show up as a large gap.
"""

import math

import numpy as np
import pytest

from gapless.engine import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    certified_dual_bound,
    minimize_separable_plq,
)
from gapless.plq import PlqFunction, from_slopes, linear_kink, remark3_disutility

INF = math.inf
TOL = 1e-8
SEED = 90125


def absfun():
    return linear_kink([-1.0, 1.0])


def test_single_variable_box():
    g = from_slopes([], [1.0])  # g(z) = z
    res = minimize_separable_plq(1, [(0, 1.0, g)], bounds=[(1.0, 5.0)])
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective - 1.0) < TOL
    assert abs(res.z[0] - 1.0) < TOL


def test_two_abs_with_equality():
    a_eq = [[1.0, 1.0]]
    b_eq = [2.0]
    res = minimize_separable_plq(
        2, [(0, 1.0, absfun()), (1, 1.0, absfun())], a_eq=a_eq, b_eq=b_eq
    )
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective - 2.0) < TOL
    assert abs(res.z.sum() - 2.0) < TOL
    # strong duality through the certified bound
    assert res.dual_bound <= res.objective + TOL
    assert abs(res.dual_bound - res.objective) < 1e-6


def test_lp_dual_sign_convention():
    """min z subject to z = 3: optimum 3, Lagrangian dual must recover it."""
    g = from_slopes([], [1.0])
    res = minimize_separable_plq(1, [(0, 1.0, g)], a_eq=[[1.0]], b_eq=[3.0])
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective - 3.0) < TOL
    # with L = z + y (z - 3), inf over z is finite only at y = -1
    assert res.dual_eq is not None
    assert abs(res.dual_eq[0] + 1.0) < 1e-6
    assert abs(res.dual_bound - 3.0) < 1e-6


def test_lp_inequality_dual_sign():
    """min -z subject to z <= 2: optimum -2 with multiplier 1."""
    g = from_slopes([], [-1.0])
    res = minimize_separable_plq(
        1, [(0, 1.0, g)], a_ub=[[1.0]], b_ub=[2.0], bounds=[(0.0, INF)]
    )
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective + 2.0) < TOL
    assert res.dual_ub is not None and res.dual_ub[0] > 0.9
    assert abs(res.dual_bound - res.objective) < 1e-6


def test_qp_path_and_duals():
    """min (z-1)^2 subject to z <= 0: optimum 1 at z = 0."""
    g = PlqFunction(-INF, INF, [], [(1.0, -2.0, 1.0)])
    res = minimize_separable_plq(1, [(0, 1.0, g)], a_ub=[[1.0]], b_ub=[0.0])
    assert res.status == STATUS_OPTIMAL
    assert res.solver == "cvxpy"
    assert abs(res.objective - 1.0) < 1e-6
    assert abs(res.z[0]) < 1e-6
    assert abs(res.dual_bound - res.objective) < 1e-5


def test_qp_equality_dual_sign():
    """min z^2 subject to z = 2: optimum 4; dual y with 2z + y = 0 gives -4."""
    g = PlqFunction(-INF, INF, [], [(1.0, 0.0, 0.0)])
    res = minimize_separable_plq(1, [(0, 1.0, g)], a_eq=[[1.0]], b_eq=[2.0])
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective - 4.0) < 1e-6
    assert abs(res.dual_eq[0] + 4.0) < 1e-4
    assert abs(res.dual_bound - 4.0) < 1e-5


def test_unbounded():
    g = from_slopes([], [-1.0])
    res = minimize_separable_plq(1, [(0, 1.0, g)])
    assert res.status == STATUS_UNBOUNDED


def test_infeasible_bounds_vs_domain():
    g = PlqFunction(0.0, 1.0, [], [(0.0, 0.0, 0.0)])
    res = minimize_separable_plq(1, [(0, 1.0, g)], bounds=[(2.0, 3.0)])
    assert res.status == STATUS_INFEASIBLE


def test_infeasible_constraints():
    g = absfun()
    res = minimize_separable_plq(
        1, [(0, 1.0, g)], a_eq=[[1.0]], b_eq=[5.0], bounds=[(0.0, 1.0)]
    )
    assert res.status == STATUS_INFEASIBLE


def test_free_variable_coupled_to_objective_variable():
    """min w^2 with w + 2x = 3 and x in [-1, 1]: x = 1, w = 1."""
    g = PlqFunction(-INF, INF, [], [(1.0, 0.0, 0.0)])
    res = minimize_separable_plq(
        2, [(0, 1.0, g)],
        a_eq=[[1.0, 2.0]], b_eq=[3.0],
        bounds=[(-INF, INF), (-1.0, 1.0)],
    )
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective - 1.0) < 1e-6
    assert abs(res.z[0] - 1.0) < 1e-6
    assert abs(res.z[1] - 1.0) < 1e-6


def test_staircase_one_period_lp():
    """The one-period staircase program solved as an LP.

    Variables (x, w_up, w_down) with w_up = -x and w_down = x express the
    terminal wealth shortfalls; the optimum value matches the exact
    projection computed by the PLQ calculus (frozen: -sum_{n<=N} 1/n^2).
    """
    n = 8
    v = remark3_disutility(n)
    s_n = sum(1.0 / k**2 for k in range(1, n + 1))
    a_eq = [[1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]
    b_eq = [0.0, 0.0]
    res = minimize_separable_plq(
        3, [(1, 0.75, v), (2, 0.25, v)], a_eq=a_eq, b_eq=b_eq
    )
    assert res.status == STATUS_OPTIMAL
    assert abs(res.objective + s_n) < 1e-7
    assert abs(res.dual_bound - res.objective) < 1e-6


def test_random_instances_against_grid():
    """Two variables, one equality: eliminate and scan the remaining dof."""
    rng = np.random.default_rng(SEED)
    for _ in range(5):
        s1 = np.sort(rng.uniform(-3, 3, 3))
        s2 = np.sort(rng.uniform(-3, 3, 2))
        g1 = from_slopes(list(np.sort(rng.uniform(-2, 2, 2))), s1, value=0.0)
        g2 = from_slopes([float(rng.uniform(-2, 2))], s2, value=float(rng.uniform(-1, 1)))
        alpha = float(rng.uniform(0.5, 2.0))
        rhs = float(rng.uniform(-1.5, 1.5))
        lo1, hi1 = -4.0, 4.0
        res = minimize_separable_plq(
            2, [(0, 1.0, g1), (1, 1.0, g2)],
            a_eq=[[1.0, alpha]], b_eq=[rhs],
            bounds=[(lo1, hi1), (-INF, INF)],
        )
        # grid oracle over z1
        zs = np.linspace(lo1, hi1, 200001)
        vals = np.array([g1(z) for z in zs]) + np.array(
            [g2((rhs - z) / alpha) for z in zs]
        )
        want = float(np.min(vals))
        if res.status != STATUS_OPTIMAL:
            assert not math.isfinite(want) or want > 1e10
            continue
        assert abs(res.objective - want) < 2e-4 * max(1.0, abs(want))
        assert res.dual_bound <= res.objective + 1e-9
        assert abs(res.dual_bound - res.objective) < 1e-5 * max(1.0, abs(want))


def test_certified_bound_with_garbage_multipliers():
    """Any multipliers give a valid lower bound, even nonsense ones."""
    g = absfun()
    terms = [(0, 1.0, g), (1, 1.0, g)]
    a_eq = np.array([[1.0, 1.0]])
    b_eq = np.array([2.0])
    for y in (-5.0, -1.0, 0.0, 0.3, 2.0):
        lb = certified_dual_bound(2, terms, a_eq, b_eq, None, None, None, [y], None)
        assert lb <= 2.0 + 1e-12
    best = certified_dual_bound(2, terms, a_eq, b_eq, None, None, None, [-1.0], None)
    assert abs(best - 2.0) < TOL
