"""Tests for arbitrage checks, martingale densities, the two-multiplier
condition, backward induction, and the growth test.

Numeric expectations were frozen from independent oracles: direct epigraph
linear programs (scipy.linprog on the raw inequalities, bypassing this
package's solver layer), brute-force 2-D grids for the growth condition,
and closed-form telescoping sums for the staircase model.
"""

import math

import numpy as np
import pytest

from gapless import (
    AdaptedProcess,
    PlqFunction,
    ScenarioTree,
    dp_backward,
    find_martingale_measure,
    gains_matrix,
    growth_condition_check,
    is_martingale_density,
    linear_kink,
    na_check,
    remark3_model,
    two_lambda_check,
)
from gapless.plq import INF, from_slopes, remark3_disutility

TOL = 1e-9
EXACT = 1e-12

S = np.cumsum(1.0 / np.arange(1, 301) ** 2)   # S[m-1] = sum_{n<=m} 1/n^2


def tree_from(rows, assets=1):
    nodes = []
    for i, (parent, prob, price) in enumerate(rows):
        price = price if isinstance(price, list) else [price]
        nodes.append({"id": i, "parent": parent, "prob": prob, "price": price})
    return ScenarioTree.from_dict(
        {"horizon": max(_depth(rows, i) for i in range(len(rows))),
         "assets": assets, "nodes": nodes})


def _depth(rows, i):
    d = 0
    while rows[i][0] is not None:
        i = rows[i][0]
        d += 1
    return d


@pytest.fixture
def strict_arb_tree():
    # both moves strictly up: riskless gain
    return tree_from([(None, 1.0, 1.0), (0, 0.5, 3.0), (0, 0.5, 2.0)])


@pytest.fixture
def weak_arb_tree():
    # up or flat: arbitrage, but an absolutely continuous density survives
    return tree_from([(None, 1.0, 1.0), (0, 0.5, 2.0), (0, 0.5, 1.0)])


@pytest.fixture
def flat_tree():
    return tree_from([(None, 1.0, 2.0), (0, 0.6, 2.0), (0, 0.4, 2.0)])


@pytest.fixture
def asym_tree():
    # two periods, one asset, asymmetric probabilities
    return tree_from([
        (None, 1.0, 4.0),
        (0, 0.75, 6.0), (0, 0.25, 2.0),
        (1, 0.6, 9.0), (1, 0.4, 3.0),
        (2, 0.5, 3.0), (2, 0.5, 1.0),
    ])


def random_tree(rng, horizon=2, max_children=3, assets=1):
    nodes = [{"id": 0, "parent": None, "prob": 1.0,
              "price": list(rng.uniform(1.0, 5.0, assets))}]
    frontier = [0]
    nid = 1
    for _ in range(horizon):
        nxt = []
        for m in frontier:
            k = rng.integers(2, max_children + 1)
            w = rng.uniform(0.2, 1.0, k)
            w /= w.sum()
            base = np.asarray(nodes[m]["price"])
            for i in range(k):
                step = rng.uniform(-0.9, 1.1, assets)
                nodes.append({"id": nid, "parent": m, "prob": float(w[i]),
                              "price": list(np.maximum(base + step, 0.05))})
                nxt.append(nid)
                nid += 1
        frontier = nxt
    return ScenarioTree.from_dict(
        {"horizon": horizon, "assets": assets, "nodes": nodes})


# ---------------------------------------------------------------------------
# na_check
# ---------------------------------------------------------------------------

def test_na_check_staircase_model():
    tree, _ = remark3_model(5)
    report = na_check(tree)
    assert report.no_arbitrage
    assert report.arbitrage is None
    assert report.optimum <= TOL


def test_na_check_strict_arbitrage(strict_arb_tree):
    report = na_check(strict_arb_tree)
    assert not report.no_arbitrage
    assert report.optimum > 0.5
    gains = gains_matrix(strict_arb_tree) @ np.array(
        [report.arbitrage.values[0][0]])
    assert gains.min() >= -TOL
    assert gains.max() > TOL


def test_na_check_weak_arbitrage(weak_arb_tree):
    report = na_check(weak_arb_tree)
    assert not report.no_arbitrage
    x = float(report.arbitrage.values[0][0])
    assert x > 0  # long the asset that cannot fall


def test_na_check_flat_prices(flat_tree):
    assert na_check(flat_tree).no_arbitrage


def test_na_check_two_period(asym_tree):
    assert na_check(asym_tree).no_arbitrage


# ---------------------------------------------------------------------------
# find_martingale_measure
# ---------------------------------------------------------------------------

def test_mm_staircase_density_is_paper_value():
    tree, _ = remark3_model(5)
    y = find_martingale_measure(tree, require_equivalent=True)
    arr = y.leaf_array()
    assert arr == pytest.approx([2.0 / 3.0, 2.0], abs=1e-9)
    assert is_martingale_density(tree, arr, tol=1e-9)


def test_mm_flat_tree_is_unit_density(flat_tree):
    y = find_martingale_measure(flat_tree)
    assert y.leaf_array() == pytest.approx([1.0, 1.0], abs=EXACT)


def test_mm_strict_arbitrage_returns_none(strict_arb_tree):
    assert find_martingale_measure(strict_arb_tree) is None
    assert find_martingale_measure(strict_arb_tree, require_equivalent=True) is None


def test_mm_weak_arbitrage_boundary_density(weak_arb_tree):
    assert find_martingale_measure(weak_arb_tree, require_equivalent=True) is None
    y = find_martingale_measure(weak_arb_tree, require_equivalent=False)
    assert y is not None
    assert y.leaf_array() == pytest.approx([0.0, 2.0], abs=1e-9)


def test_mm_matches_na_on_random_trees():
    rng = np.random.default_rng(1234)
    agree = 0
    for k in range(200):
        tree = random_tree(rng, horizon=int(rng.integers(1, 4)),
                           assets=int(rng.integers(1, 3)))
        na = na_check(tree).no_arbitrage
        y = find_martingale_measure(tree, require_equivalent=True)
        assert na == (y is not None), f"instance {k}"
        if y is not None:
            assert is_martingale_density(tree, y.leaf_array(), tol=1e-7)
        agree += 1
    assert agree == 200


# ---------------------------------------------------------------------------
# two_lambda_check
# ---------------------------------------------------------------------------

def test_two_lambda_staircase_single_pin():
    tree, V = remark3_model(50)
    report = two_lambda_check(tree, V)
    assert report.lambdas_finite == [1.5]
    assert not report.satisfied
    lo, hi = report.interval
    assert lo == pytest.approx(1.5, abs=EXACT)
    assert hi == pytest.approx(1.5, abs=EXACT)


def test_two_lambda_staircase_grid_alone_misses():
    # without the domain-edge pins no default grid point is feasible
    tree, V = remark3_model(50)
    report = two_lambda_check(tree, V, lam_grid=[2.0 ** k for k in range(-10, 11)])
    assert report.lambdas_finite == [1.5]   # pins are always added
    grid_only = [lam for lam, v in report.evaluations
                 if math.isfinite(v) and abs(lam - 1.5) > 1e-6]
    assert grid_only == []


def test_two_lambda_indicator_conjugate_interval():
    # V = max(0, u): the conjugate is 0 on [0, 1] and +inf outside
    tree, _ = remark3_model(5)
    V = linear_kink([0.0, 1.0])
    report = two_lambda_check(tree, V)
    assert report.satisfied
    assert len(report.lambdas_finite) >= 2
    assert max(report.lambdas_finite) <= 0.5 + EXACT   # 1 / max leaf weight
    assert report.rae_small
    assert not report.rae_large


def test_two_lambda_explicit_density_and_unbounded_conjugate():
    tree, _ = remark3_model(5)
    # quadratic disutility: conjugate has unbounded domain, all multipliers work
    V = PlqFunction(-INF, INF, [0.0], [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)])
    report = two_lambda_check(tree, V, y=np.array([2.0 / 3.0, 2.0]))
    assert report.satisfied
    assert report.rae_large
    assert len(report.lambdas_finite) > 10


def test_two_lambda_no_density_reports_unsatisfied(strict_arb_tree):
    report = two_lambda_check(strict_arb_tree, linear_kink([0.5, 2.0]))
    assert not report.satisfied
    assert report.via == "no-density"
    assert report.lambdas_finite == []


# ---------------------------------------------------------------------------
# dp_backward
# ---------------------------------------------------------------------------

def test_dp_staircase_root_value_matches_telescoping():
    n = 50
    tree, V = remark3_model(n)
    report = dp_backward(tree, V)
    assert report.ok and report.mode == "exact"
    root = report.functions[0]
    s_n = S[n - 1]
    for alpha in [0.0, 1.0, 2.5]:
        assert root.eval(alpha) == pytest.approx(1.5 * alpha - s_n, abs=1e-9)


def test_dp_flat_tree_returns_disutility(flat_tree):
    V = remark3_disutility(8)
    report = dp_backward(flat_tree, V)
    assert report.ok
    for u in [-3.3, -1.0, 0.0, 0.4, 2.7]:
        assert report.functions[0].eval(u) == pytest.approx(V.eval(u), abs=EXACT)


# oracle: direct epigraph LP over [x0, x1, x2, t3..t6], see notes; frozen
ASYM_ORACLE = [
    (-3.0, -2.7), (-1.5, -1.35), (-0.4, -0.36), (0.0, 0.0),
    (0.7, 1.4), (2.0, 4.0), (5.0, 10.0),
]


def test_dp_two_period_exact_matches_epigraph_lp(asym_tree):
    V = linear_kink([0.5, 4.0])
    report = dp_backward(asym_tree, V)
    assert report.ok
    for u, want in ASYM_ORACLE:
        assert report.functions[0].eval(u) == pytest.approx(want, abs=1e-9), u


def test_dp_two_period_grid_close_to_exact(asym_tree):
    V = linear_kink([0.5, 4.0])
    exact = dp_backward(asym_tree, V)
    grid = dp_backward(asym_tree, V, u_grid=np.linspace(-24.0, 24.0, 193))
    assert grid.ok and grid.mode == "grid"
    for u in np.linspace(-6.0, 6.0, 25):
        assert grid.functions[0].eval(u) == pytest.approx(
            exact.functions[0].eval(u), abs=1e-6)


def test_dp_detects_unbounded_recursion(asym_tree):
    # with slopes {1, 3} the asymmetric drift admits unbounded improvement
    report = dp_backward(asym_tree, linear_kink([1.0, 3.0]))
    assert not report.ok
    assert any(node == 0 for node, _ in report.unbounded_nodes)


def test_dp_grid_needs_grid_for_multiasset():
    rng = np.random.default_rng(7)
    tree = random_tree(rng, horizon=1, assets=2)
    with pytest.raises(ValueError):
        dp_backward(tree, linear_kink([0.5, 2.0]))


# ---------------------------------------------------------------------------
# remark3_model
# ---------------------------------------------------------------------------

def test_remark3_model_shape():
    tree, V = remark3_model(12)
    assert tree.horizon == 1 and tree.n_assets == 1
    assert tree.cond_prob[1] == 0.75 and tree.cond_prob[2] == 0.25
    assert tree.price_increment(1)[0] == 1.0
    assert tree.price_increment(2)[0] == -1.0
    assert V.eval(0.0) == 0.0
    with pytest.raises(ValueError):
        remark3_model(1)


# ---------------------------------------------------------------------------
# growth_condition_check
# ---------------------------------------------------------------------------

def test_growth_linear_disutility_fails():
    V = from_slopes([], [1.0])
    ok, witness = growth_condition_check(V, 0.5, -1.0, with_witness=True)
    assert not ok
    u, lam = witness["u"], witness["lam"]
    assert V.eval(lam * u) - lam ** 0.5 * V.eval(u) == pytest.approx(
        witness["violation"], rel=1e-9)
    assert witness["violation"] < 0


def test_growth_staircase_fails():
    V = remark3_disutility(50)
    ok, witness = growth_condition_check(V, 0.5, -2.0, with_witness=True)
    assert not ok
    u, lam = witness["u"], witness["lam"]
    assert lam >= 1.0 and u <= -2.0
    assert V.eval(lam * u) < lam ** 0.5 * V.eval(u)


def test_growth_zero_left_branch_holds():
    assert growth_condition_check(linear_kink([0.0, 1.0]), 0.5, -1.0)
    assert growth_condition_check(linear_kink([0.0, 1.0]), 0.01, -10.0)


def test_growth_constant_left_of_threshold_holds():
    # constant -3 left of -2, rising to the right: scaling only helps
    V = from_slopes([-2.0], [0.0, 1.0], anchor=-2.0, value=-3.0)
    assert growth_condition_check(V, 0.5, -2.5)


def test_growth_kink_below_threshold_fails():
    # flat at -3 left of -2 but still falling between -2 and -1
    V = from_slopes([-2.0], [0.0, 1.0], anchor=-2.0, value=-3.0)
    ok, witness = growth_condition_check(V, 0.5, -1.0, with_witness=True)
    assert not ok
    assert witness["violation"] < -TOL


def test_growth_quadratic_branch_fails():
    # 0.5u^2 + u left of zero, u to the right; brute 2-D oracle: min W = -0.0115
    V = PlqFunction(-INF, INF, [0.0], [(0.5, 1.0, 0.0), (0.0, 1.0, 0.0)])
    ok, witness = growth_condition_check(V, 0.5, -0.5, with_witness=True)
    assert not ok
    assert witness["violation"] == pytest.approx(-0.011480, abs=1e-4)
    assert 1.0 < witness["lam"] < 2.0


def test_growth_flattening_profile_holds():
    # secants of -(-u)^0.3 at -8,-4,-2,-1, constant further left; the true
    # power function satisfies the bound with room and the chords inherit it
    knots = [-8.0, -4.0, -2.0, -1.0]
    vals = [-((-k) ** 0.3) for k in knots]
    slopes = [0.0]
    for a, b, va, vb in zip(knots, knots[1:], vals, vals[1:]):
        slopes.append((vb - va) / (b - a))
    slopes.append((0.0 - vals[-1]) / (0.0 - knots[-1]))
    V = from_slopes(knots + [0.0], slopes + [slopes[-1] + 1.0],
                    anchor=-1.0, value=vals[-1])
    assert growth_condition_check(V, 0.5, -1.0)


def test_growth_validates_parameters():
    V = linear_kink([0.0, 1.0])
    with pytest.raises(ValueError):
        growth_condition_check(V, 1.5, -1.0)
    with pytest.raises(ValueError):
        growth_condition_check(V, 0.5, 1.0)
    with pytest.raises(ValueError):
        growth_condition_check(V, 0.0, -1.0)


def test_growth_domain_bounded_below():
    # +inf left of -1: nothing to check below the domain edge
    V = PlqFunction(-1.0, INF, [0.0], [(0.0, 1.0, 0.0), (0.0, 3.0, 0.0)])
    assert growth_condition_check(V, 0.5, -2.0)
    # but on [-1, -0.2] the linear fall still violates scaling
    ok = growth_condition_check(V, 0.5, -0.2)
    assert not ok
