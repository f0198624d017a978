"""Seeded random instances for property suites and batch reports.

Generators cover three needs: arbitrary trees for agreement checks, trees
that are arbitrage-free by construction (each node branches both up and
down), and full certified instances where the zero-gap hypotheses are
verified before the instance is handed out.  Randomness always flows through
a caller-provided generator or seed, so suites are reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .duality import dual_value
from .finance import find_martingale_measure, na_check, two_lambda_check
from .integrand import AlmIntegrand
from .plq import PlqFunction, from_slopes
from .solver import solve_primal
from .tree import ScenarioTree


def random_tree(
    rng: np.random.Generator,
    horizon: int | None = None,
    max_children: int = 3,
    n_assets: int = 1,
    force_na: bool = False,
) -> ScenarioTree:
    """A random scenario tree with positive prices and positive probabilities.

    With ``force_na`` every non-terminal node gets at least one price factor
    above 1 and one below 1 per asset; with one asset that makes the one-step
    increments straddle zero at every node, which rules out arbitrage by
    construction (zero sits in the convex hull of each node's increments).
    """
    if horizon is None:
        horizon = int(rng.integers(1, 4))
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if force_na and max_children < 2:
        raise ValueError("forcing no-arbitrage needs at least two children")
    parent: list[int | None] = [None]
    prob = [1.0]
    prices = [np.full(n_assets, 1.0) * rng.uniform(0.8, 1.2)]
    stage = [0]
    frontier = [0]
    for t in range(horizon):
        nxt: list[int] = []
        for node in frontier:
            k = int(rng.integers(2 if force_na else 1, max_children + 1))
            # floors on branch weights and moves keep martingale densities
            # within a couple of orders of magnitude, which keeps certified
            # optimizers well inside the solver's default search radii
            weights = rng.uniform(0.4, 1.0, size=k)
            weights /= weights.sum()
            factors = rng.uniform(0.78, 1.3, size=(k, n_assets))
            if force_na:
                for j in range(n_assets):
                    factors[0, j] = rng.uniform(1.05, 1.3)
                    factors[1, j] = rng.uniform(0.78, 0.95)
            for i in range(k):
                parent.append(node)
                prob.append(float(weights[i]))
                prices.append(np.maximum(prices[node] * factors[i], 0.05))
                stage.append(t + 1)
                nxt.append(len(parent) - 1)
        frontier = nxt
    price_arr = np.vstack(prices)
    return ScenarioTree(
        horizon=horizon,
        n_assets=n_assets,
        parent=np.array(
            [-1 if p is None else p for p in parent], dtype=int
        ),
        cond_prob=np.array(prob),
        prices=price_arr,
    )


def random_disutility(rng: np.random.Generator) -> PlqFunction:
    """A random valid disutility: convex, nondecreasing, nonconstant, V(0)=0.

    Mixes single kinks, double kinks, and a quadratic branch on the right;
    left slopes stay small and right slopes large so conjugate domains are
    wide and the two-multiplier condition has room to hold.
    """
    kind = int(rng.integers(0, 3))
    s_lo = float(rng.uniform(0.05, 0.5))
    s_hi = float(rng.uniform(1.6, 7.0))
    if kind == 0:
        return from_slopes([0.0], [s_lo, s_hi])
    if kind == 1:
        s_mid = float(rng.uniform(s_lo + 0.1, min(s_hi - 0.1, 1.4)))
        b = float(rng.uniform(0.3, 2.0))
        return from_slopes([-b, 0.0], [s_lo, s_mid, s_hi])
    q = float(rng.uniform(0.5, 1.5))
    return PlqFunction(
        -math.inf,
        math.inf,
        np.array([0.0]),
        [(0.0, s_lo, 0.0), (q, s_lo, 0.0)],
    )


def certified_instance(
    rng: np.random.Generator,
    horizon: int | None = None,
    max_children: int = 3,
    max_draws: int = 50,
):
    """An arbitrage-free instance whose two-multiplier condition holds.

    Returns ``(tree, disutility, density)`` where the density is equivalent
    and at least two multipliers keep the expected conjugate finite; draws
    are rejected until both hypotheses verify, so downstream code may rely
    on zero gap and attainment.
    """
    for _ in range(max_draws):
        tree = random_tree(rng, horizon=horizon, max_children=max_children,
                           force_na=True)
        V = random_disutility(rng)
        y = find_martingale_measure(tree, require_equivalent=True)
        if y is None:
            continue
        rep = two_lambda_check(tree, V, y=y.leaf_array())
        if rep.satisfied:
            return tree, V, y
    raise RuntimeError("no certified instance found within the draw budget")


def exact_path_instance(rng: np.random.Generator, max_draws: int = 50):
    """A single-asset certified instance for exact backward induction."""
    return certified_instance(rng, max_draws=max_draws)


def gap_suite_rows(
    seed: int, count: int, tol: float = 1e-8
) -> list[dict]:
    """Batch of independent random instances with primal/dual bookkeeping.

    Each row carries its own instance index; instances alternate between
    forced no-arbitrage draws and unconstrained ones so both certified and
    uncertified behavior shows up.  Per-instance seeds derive from the suite
    seed, so any row can be regenerated in isolation.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    rows = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        tree = random_tree(rng, force_na=bool(i % 2 == 0))
        V = random_disutility(rng)
        I = AlmIntegrand(tree, V)
        na = na_check(tree).no_arbitrage
        two_lam = two_lambda_check(tree, V).satisfied
        prep = solve_primal(I, tol=tol)
        drep = dual_value(I, tol=tol)
        rows.append(
            {
                "instance": i,
                "primal": prep.primal_value,
                "dual": drep.dual_value,
                "gap": drep.gap,
                "na": na,
                "two_lambda": two_lam,
                "attained": prep.status == "optimal",
            }
        )
    return rows
