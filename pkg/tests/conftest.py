"""Shared tree builders for the test suite."""

import numpy as np

from gapless.tree import ScenarioTree


def tree_from(rows, assets=1):
    """Build a tree from (id, parent, prob, price) rows; price may be scalar."""
    nodes = []
    for nid, parent, prob, price in rows:
        p = [float(price)] if np.isscalar(price) else list(price)
        nodes.append({"id": nid, "parent": parent, "prob": prob, "price": p})
    horizon = 0
    ids = {r[0]: r[1] for r in rows}
    for nid in ids:
        depth, cur = 0, nid
        while ids[cur] is not None:
            cur = ids[cur]
            depth += 1
        horizon = max(horizon, depth)
    return ScenarioTree.from_dict(
        {"horizon": horizon, "assets": assets, "nodes": nodes}
    )


def random_tree(rng, horizon=2, max_children=3, assets=1):
    """Random tree with positive prices; prices floored away from zero."""
    nodes = [{"id": 0, "parent": None, "prob": 1.0, "price": None}]
    nodes[0]["price"] = list(rng.uniform(0.5, 3.0, size=assets))
    frontier = [0]
    next_id = 1
    for _ in range(horizon):
        new_frontier = []
        for parent in frontier:
            k = rng.integers(2, max_children + 1)
            w = rng.uniform(0.2, 1.0, size=k)
            w = w / w.sum()
            base = np.array(nodes[parent]["price"])
            for i in range(k):
                price = np.maximum(base + rng.uniform(-0.9, 1.1, size=assets), 0.05)
                nodes.append(
                    {
                        "id": next_id,
                        "parent": parent,
                        "prob": float(w[i]),
                        "price": list(price),
                    }
                )
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return ScenarioTree.from_dict(
        {"horizon": horizon, "assets": assets, "nodes": nodes}
    )
