"""Primal side of the tree program: value function, recession, attainment.

``solve_primal`` minimizes the expected disutility of the hedging shortfall
over adapted strategies confined to an expanding sequence of sup-norm boxes.
The reported value is the optimum on the largest box; when the optimizer
still sits on that box's boundary and a strictly larger box keeps improving,
the report is flagged ``non_attained_suspect`` instead of pretending the
infimum is reached.  Unboundedness below is decided exactly up front by a
recession linear program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    minimize_separable_plq,
)
from .integrand import AlmIntegrand, _leaf_values, alm_value
from .plq import INF, PlqFunction
from .tree import AdaptedProcess, gains_matrix, strategy_from_flat

STATUS_NON_ATTAINED = "non_attained_suspect"
STATUS_UNBOUNDED_BELOW = "unbounded_below"
STATUS_INFEASIBLE = "infeasible"

DEFAULT_RADII = (1.0, 10.0, 100.0, 1e3, 1e4)
DEFAULT_TOL = 1e-8
_ALPHAS = (1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass
class SolveReport:
    primal_value: float
    x_star: AdaptedProcess | None
    status: str
    iterations: int
    certificate: dict | None
    radius_trace: list[tuple[float, float]]


def _resolve_parameter(I: AlmIntegrand, u) -> np.ndarray:
    """The endowment parameter: explicit ``u`` wins over the stored liability."""
    if u is None:
        return I.liability
    arr = _leaf_values(I.tree, u)
    if np.any(np.isnan(arr)) or np.any(arr == -INF):
        raise ValueError("endowment entries must be finite or +inf")
    return arr


def _terms(I: AlmIntegrand, n_cols: int, fn: PlqFunction):
    p = I.tree.prob[I.tree.leaves]
    return [(n_cols + k, float(p[k]), fn) for k in range(len(p))]


def _shortfall_solve(I: AlmIntegrand, fn: PlqFunction, u: np.ndarray, radius: float):
    """min sum_k p_k fn(w_k)  s.t.  w + G x = u,  |x| <= radius."""
    G = gains_matrix(I.tree)
    L, n_cols = G.shape
    a_eq = np.hstack([G, np.eye(L)])
    bounds = [(-radius, radius)] * n_cols + [(-INF, INF)] * L
    return minimize_separable_plq(
        n_cols + L,
        _terms(I, n_cols, fn),
        a_eq=a_eq,
        b_eq=u,
        bounds=bounds,
    )


def _direct_value(I: AlmIntegrand, fn: PlqFunction, u: np.ndarray) -> float:
    p = I.tree.prob[I.tree.leaves]
    total = 0.0
    for pk, uk in zip(p, u):
        val = fn.eval(float(uk))
        if val == INF:
            return INF
        total += pk * val
    return total


def _empty_strategy(tree) -> AdaptedProcess:
    J, T = tree.n_assets, tree.horizon
    vals = {n: np.zeros(J) for n in range(tree.n_nodes) if tree.stage[n] < T}
    return AdaptedProcess.strategy(tree, vals)


def solve_primal(
    I: AlmIntegrand,
    u=None,
    tol: float = DEFAULT_TOL,
    m_values=None,
) -> SolveReport:
    """Minimize E V(u - gains(x)) over strategies in expanding boxes.

    ``m_values`` are the box radii probed (default 1, 10, 100, 1e3, 1e4);
    ``primal_value`` is the optimum on the last box.  Status is ``optimal``
    when that optimizer is interior or enlarging the box stops helping,
    ``non_attained_suspect`` when the boundary stays active and a doubled box
    still improves the value by more than ``tol``, ``unbounded_below`` when
    the recession program finds a descent direction, and ``infeasible`` when
    the endowment has +inf entries.
    """
    tree = I.tree
    u = _resolve_parameter(I, u)
    if np.any(u == INF):
        return SolveReport(INF, None, STATUS_INFEASIBLE, 0, None, [])
    radii = sorted(float(m) for m in (m_values or DEFAULT_RADII))
    if not radii or radii[0] <= 0.0:
        raise ValueError("box radii must be positive")
    G = gains_matrix(tree)
    solves = 0
    if G.shape[1] == 0:
        value = _direct_value(I, I.disutility, u)
        trace = [(m, value) for m in radii]
        return SolveReport(value, _empty_strategy(tree), STATUS_OPTIMAL, 0, None, trace)

    rec = I.disutility.recession()
    rec_res = _shortfall_solve(I, rec, np.zeros(len(tree.leaves)), 1.0)
    solves += 1
    unbounded = rec_res.status == STATUS_OPTIMAL and rec_res.objective < -1e-9

    trace: list[tuple[float, float]] = []
    last = None
    for m in radii:
        last = _shortfall_solve(I, I.disutility, u, m)
        solves += 1
        if last.status != STATUS_OPTIMAL:
            raise RuntimeError(f"box solve failed with status {last.status}")
        trace.append((m, last.objective))

    n_cols = G.shape[1]
    x_star = strategy_from_flat(tree, last.z[:n_cols])
    certificate = None
    if last.dual_eq is not None:
        certificate = {
            "dual_eq": [float(t) for t in last.dual_eq],
            "dual_bound": float(last.dual_bound),
        }
    if unbounded:
        return SolveReport(
            -INF, None, STATUS_UNBOUNDED_BELOW, solves, certificate, trace
        )

    m_max = radii[-1]
    value = trace[-1][1]
    active = float(np.max(np.abs(last.z[:n_cols]))) >= m_max * (1.0 - 1e-6)
    status = STATUS_OPTIMAL
    if active:
        probe = _shortfall_solve(I, I.disutility, u, 2.0 * m_max)
        solves += 1
        if probe.status == STATUS_OPTIMAL and probe.objective < value - max(
            tol, tol * abs(value)
        ):
            status = STATUS_NON_ATTAINED
    return SolveReport(value, x_star, status, solves, certificate, trace)


def value_function(I: AlmIntegrand, us, tol: float = DEFAULT_TOL, m_values=None):
    """Batch ``solve_primal`` values, with convexity asserted on collinear triples.

    Whenever one input endowment is the midpoint of two others, the midpoint
    value must not exceed the average of the endpoint values; a violation
    means the solver backend lied and raises.
    """
    points = [_resolve_parameter(I, u) for u in us]
    vals = [solve_primal(I, u, tol=tol, m_values=m_values).primal_value for u in points]
    n = len(points)
    for i in range(n):
        for k in range(i + 1, n):
            mid = 0.5 * (points[i] + points[k])
            scale = max(1.0, float(np.max(np.abs(mid))))
            for j in range(n):
                if j in (i, k) or np.max(np.abs(points[j] - mid)) > 1e-12 * scale:
                    continue
                avg = 0.5 * (vals[i] + vals[k])
                if math.isfinite(avg) and math.isfinite(vals[j]):
                    if vals[j] > avg + 1e-6 * max(1.0, abs(avg)):
                        raise RuntimeError(
                            f"value function not convex on triple ({i},{j},{k})"
                        )
    return vals


def recession_value(I: AlmIntegrand, u) -> float:
    """min E V_rec(u - gains(x)): the recession program of the value function.

    A linear program since the recession disutility is piecewise linear;
    -inf exactly when the tree admits an arbitrage strong enough to beat the
    direction ``u``.
    """
    u = _leaf_values(I.tree, u)
    if not np.all(np.isfinite(u)):
        raise ValueError("direction entries must be finite")
    rec = I.disutility.recession()
    if gains_matrix(I.tree).shape[1] == 0:
        return _direct_value(I, rec, u)
    res = _shortfall_solve(I, rec, u, INF)
    if res.status == STATUS_UNBOUNDED:
        return -INF
    if res.status != STATUS_OPTIMAL:
        raise RuntimeError(f"recession program failed with status {res.status}")
    return res.objective


def verify_recession_formula(
    I: AlmIntegrand,
    u,
    alphas=None,
    tol: float = DEFAULT_TOL,
    m_values=None,
) -> dict:
    """Difference quotients of the value function along ``u`` vs its recession.

    Computes (phi(u0 + a u) - phi(u0)) / a at the stored liability u0 for each
    step in ``alphas`` and checks the quotients are nondecreasing and below
    the recession value.  ``limit_estimate`` is the secant slope between the
    two largest steps, the natural numeric stand-in for the limit.
    """
    tree = I.tree
    u = _leaf_values(tree, u)
    alphas = sorted(float(a) for a in (alphas or _ALPHAS))
    if not alphas or alphas[0] <= 0.0:
        raise ValueError("steps must be positive")
    base = solve_primal(I, None, tol=tol, m_values=m_values).primal_value
    if not math.isfinite(base):
        raise ValueError("reference endowment has no finite value")
    u0 = I.liability
    values = [
        solve_primal(I, u0 + a * u, tol=tol, m_values=m_values).primal_value
        for a in alphas
    ]
    quotients = [(a, (v - base) / a) for a, v in zip(alphas, values)]
    rec = recession_value(I, u)
    qs = [q for _, q in quotients]
    # each quotient inherits the solver tolerance, so the monotonicity slack
    # must scale with it (two solves enter every quotient)
    slack = 2.0 * tol
    monotone = all(
        qs[i + 1] >= qs[i] - slack * max(1.0, abs(qs[i]))
        for i in range(len(qs) - 1)
        if math.isfinite(qs[i]) and math.isfinite(qs[i + 1])
    )
    below = all(
        q <= rec + tol * max(1.0, abs(rec) if math.isfinite(rec) else 1.0)
        for q in qs
        if math.isfinite(q)
    ) if math.isfinite(rec) else True
    if len(alphas) >= 2:
        limit = (values[-1] - values[-2]) / (alphas[-1] - alphas[-2])
    else:
        limit = qs[-1]
    return {
        "quotients": quotients,
        "recession_value": rec,
        "limit_estimate": limit,
        "monotone": monotone,
        "below_recession": below,
        "consistent": monotone and below,
    }
