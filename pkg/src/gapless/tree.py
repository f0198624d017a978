"""Finite scenario trees and the processes that live on them.

A scenario tree is a finite filtered probability space: nodes are grouped by
stage, each non-root node carries the conditional probability of being reached
from its parent, and each node carries a price vector for the traded assets.
Information at stage t is "which stage-t node the path has reached", so an
adapted process is simply a vector attached to every node of the stages it
covers.

Dual elements (annihilators of adapted processes, martingale densities) are
carried by the same container.  The convention used throughout the package:

* a trading strategy x has one R^J vector per node of stages 0..T-1
  (terminal positions are structurally zero);
* a dual process v pairing with x can be stored *staggered* (the component
  v_t attached to the stage-(t+1) nodes) or *leaf-block* (all T components
  stored on each leaf as one flat (T*J,) vector).  Staggering is lossless
  for pairings, because E[x_t . v_t] only sees the stage-(t+1) conditional
  expectation of v_t; pointwise inequalities (certificates) see more, so
  they use the leaf-block form;
* densities y are scalars on the leaves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Relative tolerance for the annihilator test E[v_t | stage t] = 0.
ANNIHILATOR_TOL = 1e-9
# Relative tolerance for the martingale-density test.
MARTINGALE_TOL = 1e-9
# Tolerance for probability validation (children sums, positivity).
PROB_TOL = 1e-9


class TreeStructureError(ValueError):
    """Raised when raw node data cannot even be indexed as a tree."""


@dataclass(frozen=True)
class ScenarioTree:
    """Finite scenario tree with stage-major dense integer node ids.

    Parameters
    ----------
    horizon : terminal stage T >= 1.
    n_assets : number of traded assets J >= 1.
    parent : int array, parent[i] = parent id of node i, -1 for the root.
    cond_prob : float array, conditional probability of node i given its
        parent (1.0 for the root).
    prices : (n_nodes, n_assets) float array of asset prices.

    The constructor only checks that the arrays are mutually indexable;
    invariant violations (probabilities, stage ordering, ...) are data and
    are reported by :func:`validate_tree`.
    """

    horizon: int
    n_assets: int
    parent: np.ndarray
    cond_prob: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        cond_prob = np.asarray(self.cond_prob, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        n = parent.shape[0]
        if cond_prob.shape != (n,):
            raise TreeStructureError("cond_prob length does not match node count")
        if prices.ndim != 2 or prices.shape[0] != n:
            raise TreeStructureError("prices must be (n_nodes, n_assets)")
        for i, p in enumerate(parent):
            if i == 0:
                if p != -1:
                    raise TreeStructureError("node 0 must be the root (parent -1)")
            elif p < 0 or p >= i:
                raise TreeStructureError(
                    f"node {i}: parent id {p} must precede the node (stage-major order)"
                )
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "cond_prob", cond_prob)
        object.__setattr__(self, "prices", prices)

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @cached_property
    def stage(self) -> np.ndarray:
        st = np.zeros(self.n_nodes, dtype=int)
        for i in range(1, self.n_nodes):
            st[i] = st[self.parent[i]] + 1
        return st

    @cached_property
    def children(self) -> list[list[int]]:
        ch: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i in range(1, self.n_nodes):
            ch[self.parent[i]].append(i)
        return ch

    @cached_property
    def leaves(self) -> np.ndarray:
        return np.array([i for i in range(self.n_nodes) if not self.children[i]],
                        dtype=int)

    @cached_property
    def prob(self) -> np.ndarray:
        """Unconditional probability of reaching each node."""
        p = np.ones(self.n_nodes)
        for i in range(1, self.n_nodes):
            p[i] = p[self.parent[i]] * self.cond_prob[i]
        return p

    def nodes_at_stage(self, t: int) -> np.ndarray:
        return np.nonzero(self.stage == t)[0]

    def price_increment(self, node: int) -> np.ndarray:
        """Delta s at a non-root node: price(node) - price(parent)."""
        if node == 0:
            raise ValueError("root has no price increment")
        return self.prices[node] - self.prices[self.parent[node]]

    def path(self, leaf: int) -> list[int]:
        """Node ids from the root to ``leaf`` inclusive."""
        out = [leaf]
        while out[-1] != 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    @cached_property
    def leaf_index(self) -> dict[int, int]:
        return {int(l): k for k, l in enumerate(self.leaves)}

    def descendant_leaves(self, node: int) -> list[int]:
        if not self.children[node]:
            return [node]
        out = []
        stack = [node]
        while stack:
            m = stack.pop()
            if self.children[m]:
                stack.extend(self.children[m])
            else:
                out.append(m)
        return sorted(out)

    # -- serialization ------------------------------------------------

    @staticmethod
    def from_dict(data: dict) -> "ScenarioTree":
        try:
            horizon = int(data["horizon"])
            n_assets = int(data["assets"])
            nodes = data["nodes"]
        except (KeyError, TypeError) as exc:
            raise TreeStructureError(f"tree object missing field: {exc}") from exc
        nodes = sorted(nodes, key=lambda nd: nd["id"])
        ids = [nd["id"] for nd in nodes]
        if ids != list(range(len(nodes))):
            raise TreeStructureError("node ids must be dense integers 0..n-1")
        parent = np.array(
            [-1 if nd["parent"] is None else int(nd["parent"]) for nd in nodes]
        )
        cond_prob = np.array([float(nd["prob"]) for nd in nodes])
        prices = np.zeros((len(nodes), n_assets))
        for i, nd in enumerate(nodes):
            price = np.asarray(nd["price"], dtype=float)
            if price.shape != (n_assets,):
                raise TreeStructureError(
                    f"node {i}: price must have {n_assets} components"
                )
            prices[i] = price
        return ScenarioTree(horizon, n_assets, parent, cond_prob, prices)

    @staticmethod
    def from_json(text: str) -> "ScenarioTree":
        return ScenarioTree.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "assets": self.n_assets,
            "nodes": [
                {
                    "id": i,
                    "parent": None if i == 0 else int(self.parent[i]),
                    "prob": float(self.cond_prob[i]),
                    "price": [float(v) for v in self.prices[i]],
                }
                for i in range(self.n_nodes)
            ],
        }


def validate_tree(tree: ScenarioTree) -> list[str]:
    """Check the tree invariants and return a list of violations (data, not faults)."""
    bad: list[str] = []
    if tree.horizon < 1:
        bad.append(f"horizon must be >= 1, got {tree.horizon}")
    if tree.n_assets < 1:
        bad.append(f"assets must be >= 1, got {tree.n_assets}")
    if abs(tree.cond_prob[0] - 1.0) > PROB_TOL:
        bad.append("root conditional probability must be 1")
    for i in range(1, tree.n_nodes):
        if tree.cond_prob[i] <= PROB_TOL:
            bad.append(f"node {i}: conditional probability {tree.cond_prob[i]} not > 0")
    # stage-major id order and horizon consistency
    st = tree.stage
    if np.any(np.diff(st) < 0):
        first = int(np.nonzero(np.diff(st) < 0)[0][0]) + 1
        bad.append(f"node ids are not stage-major (stage drops at node {first})")
    for i in range(tree.n_nodes):
        kids = tree.children[i]
        if kids:
            s = float(sum(tree.cond_prob[k] for k in kids))
            if abs(s - 1.0) > PROB_TOL * max(1.0, abs(s)):
                bad.append(f"node {i}: children probabilities sum to {s!r}, expected 1")
            if st[i] >= tree.horizon:
                bad.append(f"node {i}: interior node at stage {st[i]} >= horizon")
        else:
            if st[i] != tree.horizon:
                bad.append(
                    f"node {i}: leaf at stage {st[i]}, expected horizon {tree.horizon}"
                )
    return bad


@dataclass(frozen=True)
class AdaptedProcess:
    """Vectors attached to tree nodes, with a per-stage dimension profile.

    ``dims[t]`` is the vector dimension carried by stage-t nodes (0 means the
    stage carries nothing).  ``values`` maps node id -> 1-D float array.
    """

    tree: ScenarioTree
    dims: tuple[int, ...]
    values: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.dims) != self.tree.horizon + 1:
            raise ValueError("dims must have one entry per stage 0..T")
        vals = {}
        for node, v in self.values.items():
            vals[int(node)] = np.asarray(v, dtype=float).reshape(-1)
        st = self.tree.stage
        for node in range(self.tree.n_nodes):
            d = self.dims[st[node]]
            if d == 0:
                continue
            if node not in vals:
                raise ValueError(f"missing value at node {node} (stage {st[node]})")
            if vals[node].shape != (d,):
                raise ValueError(
                    f"node {node}: value has dimension {vals[node].shape[0]}, "
                    f"stage {st[node]} carries {d}"
                )
        object.__setattr__(self, "values", vals)

    def __getitem__(self, node: int) -> np.ndarray:
        return self.values[node]

    @staticmethod
    def strategy(tree: ScenarioTree, values: dict[int, np.ndarray]) -> "AdaptedProcess":
        """A trading strategy: R^J per node of stages 0..T-1, nothing at T."""
        dims = tuple([tree.n_assets] * tree.horizon + [0])
        return AdaptedProcess(tree, dims, values)

    @staticmethod
    def leaf_field(tree: ScenarioTree, leaf_values) -> "AdaptedProcess":
        """A scalar per leaf (densities, liabilities, certificate offsets)."""
        arr = np.asarray(leaf_values, dtype=float).reshape(-1)
        if arr.shape[0] != len(tree.leaves):
            raise ValueError(
                f"expected {len(tree.leaves)} leaf values, got {arr.shape[0]}"
            )
        dims = tuple([0] * tree.horizon + [1])
        values = {int(l): arr[k : k + 1] for k, l in enumerate(tree.leaves)}
        return AdaptedProcess(tree, dims, values)

    def leaf_array(self) -> np.ndarray:
        """Leaf scalars in leaf order (requires a dims profile ending in 1)."""
        if self.dims[-1] != 1:
            raise ValueError("process does not carry leaf scalars")
        return np.array([self.values[int(l)][0] for l in self.tree.leaves])


def dual_step_process(tree: ScenarioTree, values: dict[int, np.ndarray]) -> AdaptedProcess:
    """A dual process v: component v_t stored on stage-(t+1) nodes, R^J each."""
    dims = tuple([0] + [tree.n_assets] * tree.horizon)
    return AdaptedProcess(tree, dims, values)


def leaf_block_process(tree: ScenarioTree, values: dict[int, np.ndarray]) -> AdaptedProcess:
    """A dual process with all components leaf-measurable.

    Each leaf carries one flat vector (v_0, ..., v_{T-1}) of length T*J; the
    slice [t*J:(t+1)*J] is the value of v_t on that leaf's atom.
    """
    dims = tuple([0] * tree.horizon + [tree.horizon * tree.n_assets])
    return AdaptedProcess(tree, dims, values)


def _is_leaf_block(tree: ScenarioTree, v: AdaptedProcess) -> bool:
    block = tuple([0] * tree.horizon + [tree.horizon * tree.n_assets])
    return v.dims == block


def _is_staggered(tree: ScenarioTree, v: AdaptedProcess) -> bool:
    return v.dims == tuple([0] + [tree.n_assets] * tree.horizon)


def path_increments(tree: ScenarioTree, leaf: int) -> np.ndarray:
    """(T, J) array of price increments along the path to ``leaf``."""
    nodes = tree.path(int(leaf))
    return np.array([tree.price_increment(c) for c in nodes[1:]])


def dual_block_matrix(tree: ScenarioTree, v: AdaptedProcess) -> np.ndarray:
    """A dual process as an (n_leaves, T, J) array, one row block per leaf.

    Accepts both storage conventions; a staggered v is broadcast along each
    path (its value on the atom of a leaf is the value at the path node).
    """
    T, J = tree.horizon, tree.n_assets
    out = np.zeros((len(tree.leaves), T, J))
    if _is_leaf_block(tree, v):
        for k, l in enumerate(tree.leaves):
            out[k] = v.values[int(l)].reshape(T, J)
    elif _is_staggered(tree, v):
        for k, l in enumerate(tree.leaves):
            nodes = tree.path(int(l))
            for t, c in enumerate(nodes[1:]):
                out[k, t] = v.values[c]
    else:
        raise ValueError(
            f"process with dims {v.dims} is not a dual process "
            "(expected staggered or leaf-block profile)"
        )
    return out


def dual_from_leaf_density(tree: ScenarioTree, y) -> AdaptedProcess:
    """The leaf-block dual process v_t = -y * (s_{t+1} - s_t) on each atom.

    For a martingale density y this lands in the annihilator of adapted
    strategies; it is the construction behind every certificate the package
    builds (the staggered :func:`annihilator_from_density` would lose the
    pointwise information that certificates need).
    """
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.shape[0] != len(tree.leaves):
        raise ValueError(f"expected {len(tree.leaves)} leaf weights")
    values = {}
    for k, l in enumerate(tree.leaves):
        values[int(l)] = (-arr[k] * path_increments(tree, int(l))).reshape(-1)
    return leaf_block_process(tree, values)


def conditional_expectation(tree: ScenarioTree, proc: AdaptedProcess, t: int) -> AdaptedProcess:
    """One-step conditional expectation: stage-(t+1) values averaged to stage t.

    Requires ``proc`` to carry values at stage t+1; the result carries the
    same dimension at stage t only.
    """
    if not 0 <= t < tree.horizon:
        raise ValueError(f"stage t={t} out of range for horizon {tree.horizon}")
    d = proc.dims[t + 1]
    if d == 0:
        raise ValueError(f"process carries no values at stage {t + 1}")
    out = {}
    for m in tree.nodes_at_stage(t):
        acc = np.zeros(d)
        for c in tree.children[m]:
            acc += tree.cond_prob[c] * proc.values[c]
        out[int(m)] = acc
    dims = tuple(d if s == t else 0 for s in range(tree.horizon + 1))
    return AdaptedProcess(tree, dims, out)


def expectation(tree: ScenarioTree, leaf_values) -> float:
    """E of a leaf scalar field."""
    arr = np.asarray(leaf_values, dtype=float).reshape(-1)
    return float(np.dot(tree.prob[tree.leaves], arr))


def is_annihilator(tree: ScenarioTree, v: AdaptedProcess, tol: float = ANNIHILATOR_TOL) -> bool:
    """True iff every component of v has zero conditional mean given stage t.

    Accepts both dual conventions.  Staggered: E[v_t | stage-t node] = 0 via
    one-step conditional expectations.  Leaf-block: E[v_t | stage-t node] is
    the probability-weighted average of the leaf blocks under the node.  The
    test is relative: |mean| <= tol * scale with scale the largest v
    magnitude (or 1 if v vanishes).
    """
    scale = 1.0
    for node, val in v.values.items():
        if val.size:
            scale = max(scale, float(np.max(np.abs(val))))
    if _is_leaf_block(tree, v):
        T, J = tree.horizon, tree.n_assets
        blocks = dual_block_matrix(tree, v)
        pl = tree.prob[tree.leaves]
        for t in range(T):
            for m in tree.nodes_at_stage(t):
                ks = [tree.leaf_index[l] for l in tree.descendant_leaves(int(m))]
                mean = pl[ks] @ blocks[ks, t, :] / tree.prob[m]
                if np.max(np.abs(mean)) > tol * scale:
                    return False
        return True
    for t in range(tree.horizon):
        if v.dims[t + 1] == 0:
            continue
        ce = conditional_expectation(tree, v, t)
        for m in tree.nodes_at_stage(t):
            if np.max(np.abs(ce.values[m])) > tol * scale:
                return False
    return True


def pairing(tree: ScenarioTree, x: AdaptedProcess, v: AdaptedProcess) -> float:
    """E(x . v) = sum over stages t of E[x_t . v_t].

    ``x`` is a strategy (values on stages 0..T-1); ``v`` is a dual process in
    either convention.  Staggered: each term pairs a stage-(t+1) node's
    v-value with the x-value of its parent.  Leaf-block: each leaf pairs its
    component blocks with the x-values along its path.
    """
    if _is_leaf_block(tree, v):
        blocks = dual_block_matrix(tree, v)
        total = 0.0
        for k, l in enumerate(tree.leaves):
            nodes = tree.path(int(l))
            for t in range(tree.horizon):
                if x.dims[t] == 0:
                    continue
                total += tree.prob[l] * float(np.dot(x.values[nodes[t]], blocks[k, t]))
        return total
    total = 0.0
    for t in range(tree.horizon):
        if v.dims[t + 1] == 0 or x.dims[t] == 0:
            continue
        for c in tree.nodes_at_stage(t + 1):
            m = tree.parent[c]
            total += tree.prob[c] * float(np.dot(x.values[m], v.values[c]))
    return total


def is_martingale_density(tree: ScenarioTree, y, tol: float = MARTINGALE_TOL) -> bool:
    """True iff leaf weights y are a change of measure making prices martingales.

    Checks E[y] = 1, y >= 0, and E[y * (s_{t+1} - s_t) | stage-t node] = 0 for
    every non-terminal node and every asset.  Negative weights raise.
    """
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.shape[0] != len(tree.leaves):
        raise ValueError(f"expected {len(tree.leaves)} leaf weights")
    if np.any(arr < -tol):
        raise ValueError("martingale density weights must be nonnegative")
    pl = tree.prob[tree.leaves]
    mass = float(np.dot(pl, arr))
    if abs(mass - 1.0) > tol * max(1.0, abs(mass)):
        return False
    scale = max(1.0, float(np.max(np.abs(tree.prices))), float(np.max(np.abs(arr))))
    # conditional density at every node: E[y | node] (leaf weights averaged up)
    cond = np.zeros(tree.n_nodes)
    for k, l in enumerate(tree.leaves):
        cond[l] = arr[k]
    for i in range(tree.n_nodes - 1, -1, -1):
        if tree.children[i]:
            cond[i] = sum(tree.cond_prob[c] * cond[c] for c in tree.children[i])
    for m in range(tree.n_nodes):
        if not tree.children[m]:
            continue
        drift = np.zeros(tree.n_assets)
        for c in tree.children[m]:
            drift += tree.cond_prob[c] * cond[c] * tree.price_increment(c)
        if np.max(np.abs(drift)) > tol * scale:
            return False
    return True


def conditional_density(tree: ScenarioTree, y) -> np.ndarray:
    """E[y | node] for a leaf weight field, at every node."""
    arr = np.asarray(y, dtype=float).reshape(-1)
    cond = np.zeros(tree.n_nodes)
    for k, l in enumerate(tree.leaves):
        cond[l] = arr[k]
    for i in range(tree.n_nodes - 1, -1, -1):
        if tree.children[i]:
            cond[i] = sum(tree.cond_prob[c] * cond[c] for c in tree.children[i])
    return cond


def annihilator_from_density(tree: ScenarioTree, y) -> AdaptedProcess:
    """The dual process v_t = -E[y | stage t+1] * (s_{t+1} - s_t).

    For a martingale density y this lands in the annihilator of adapted
    strategies; it is the construction used by every certificate the
    package builds.
    """
    cond = conditional_density(tree, y)
    values = {}
    for c in range(1, tree.n_nodes):
        values[c] = -cond[c] * tree.price_increment(c)
    return dual_step_process(tree, values)


def gains(tree: ScenarioTree, x: AdaptedProcess) -> np.ndarray:
    """Terminal trading gains sum_t x_t . (s_{t+1} - s_t) per leaf, leaf order."""
    acc = np.zeros(tree.n_nodes)
    for c in range(1, tree.n_nodes):
        m = tree.parent[c]
        acc[c] = acc[m] + float(np.dot(x.values[m], tree.price_increment(c)))
    return acc[tree.leaves]


def strategy_columns(tree: ScenarioTree) -> list[tuple[int, int]]:
    """Flat column order (node, asset) for the free entries of a strategy."""
    return [
        (int(m), j)
        for m in range(tree.n_nodes)
        if tree.children[int(m)]
        for j in range(tree.n_assets)
    ]


def gains_matrix(tree: ScenarioTree) -> np.ndarray:
    """Leaf gains as a linear map of strategy entries.

    Returns G of shape (n_leaves, n_columns) with columns ordered by
    :func:`strategy_columns`, so that ``G @ xflat`` equals :func:`gains`.
    Entry (leaf k, column (m, j)): the j-th price increment at the child of m
    on the path to leaf k, or 0 when m is not on that path.
    """
    cols = strategy_columns(tree)
    col_index = {mj: i for i, mj in enumerate(cols)}
    G = np.zeros((len(tree.leaves), len(cols)))
    for k, l in enumerate(tree.leaves):
        nodes = tree.path(int(l))
        for m, c in zip(nodes[:-1], nodes[1:]):
            ds = tree.price_increment(c)
            for j in range(tree.n_assets):
                G[k, col_index[(m, j)]] = ds[j]
    return G


def strategy_from_flat(tree: ScenarioTree, xflat) -> AdaptedProcess:
    """Inverse of the flattening used by :func:`gains_matrix` columns."""
    arr = np.asarray(xflat, dtype=float).reshape(-1)
    cols = strategy_columns(tree)
    if arr.shape[0] != len(cols):
        raise ValueError(f"expected {len(cols)} strategy entries, got {arr.shape[0]}")
    values: dict[int, np.ndarray] = {}
    for (m, j), val in zip(cols, arr):
        values.setdefault(m, np.zeros(tree.n_assets))[j] = val
    return AdaptedProcess.strategy(tree, values)
