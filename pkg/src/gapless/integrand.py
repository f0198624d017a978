"""Investment objective on a scenario tree, with checkable lower-bound certificates.

The objective couples a trading strategy ``x`` (rebalanced at stages
``0..T-1``) with a scalar endowment perturbation ``u`` carried by the leaves:
the realized shortfall in a scenario is ``u - sum_t x_t . ds_{t+1}`` along
that scenario's path, and the integrand applies a convex nondecreasing
disutility ``V`` to it.

Besides evaluating the objective, its recession function, and its conjugate,
the module builds and verifies per-scenario lower-bound certificates: a dual
process ``v``, a multiplier ``lam``, an offset ``beta``, and a penalty ``g``
such that

    V(u - sum_t x_t . ds) >= x.v + lam*[x.v]+ + beta - g(u)

holds for every strategy, every endowment, and every scenario.  The check is
exact for piecewise-linear-quadratic data: each leaf reduces to finitely many
one-dimensional convex minimizations, and every reported failure comes with a
concrete ``(x, u, leaf)`` witness at which the inequality is re-evaluated and
seen to fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .finance import na_check
from .plq import INF, PlqFunction, from_slopes, upper_envelope
from .tree import (
    AdaptedProcess,
    ScenarioTree,
    dual_block_matrix,
    dual_from_leaf_density,
    gains,
    is_annihilator,
    path_increments,
)

CONSTRAINT_TOL = 1e-9
ZERO_INCREMENT = 1e-12

_MAX_WITNESS_DOUBLINGS = 240


def _zero_plq() -> PlqFunction:
    return from_slopes([], [0.0], anchor=0.0, value=0.0)


def _affine_plq(slope: float) -> PlqFunction:
    return from_slopes([], [float(slope)], anchor=0.0, value=0.0)


def _leaf_values(tree: ScenarioTree, y) -> np.ndarray:
    if isinstance(y, AdaptedProcess):
        return y.leaf_array()
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.shape[0] == 1 and len(tree.leaves) > 1:
        arr = np.full(len(tree.leaves), arr[0])
    if arr.shape[0] != len(tree.leaves):
        raise ValueError(
            f"expected {len(tree.leaves)} leaf values, got {arr.shape[0]}"
        )
    return arr


def _conj_eval(conj: PlqFunction, s: float, rel: float = 1e-9) -> float:
    """Evaluate a conjugate with a tiny relative clamp at the domain edges.

    Multipliers produced by ratios (pinned densities, scaled densities) can
    land one rounding error outside a closed domain endpoint; snapping them
    back keeps the checks exact instead of spuriously infinite.
    """
    val = conj.eval(s)
    if val < INF:
        return val
    for edge in (conj.lo, conj.hi):
        if math.isfinite(edge) and abs(s - edge) <= rel * max(1.0, abs(edge)):
            return conj.eval(edge)
    return val


@dataclass
class AlmIntegrand:
    """Disutility of the hedging shortfall, as a convex integrand on a tree.

    ``disutility`` must be finite on the whole line, convex, nondescending,
    not constant, and normalized to ``V(0) = 0``.  ``liability`` is an
    optional scalar endowment per leaf (the ``u`` argument of the objective);
    it defaults to zero.
    """

    tree: ScenarioTree
    disutility: PlqFunction
    liability: np.ndarray | None = None
    _conj: PlqFunction | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        V = self.disutility
        if V.lo != -INF or V.hi != INF:
            raise ValueError("disutility must be finite on the whole line")
        slopes = [V.subgradient(b) for b in V.breaks]
        left, right = V.terminal_slopes()
        lows = [left] + [s[0] for s in slopes if s is not None]
        highs = [s[1] for s in slopes if s is not None] + [right]
        if min(lows) < -1e-12:
            raise ValueError("disutility must be nondecreasing")
        if max(highs) <= 1e-12:
            raise ValueError("disutility must not be constant")
        if abs(V.eval(0.0)) > 1e-12:
            raise ValueError("disutility must vanish at zero")
        if self.liability is None:
            u = np.zeros(len(self.tree.leaves))
        else:
            u = _leaf_values(self.tree, self.liability)
        if not np.all(np.isfinite(u)):
            raise ValueError("liability must be finite")
        self.liability = u

    @property
    def conjugate(self) -> PlqFunction:
        if self._conj is None:
            self._conj = self.disutility.conjugate()
        return self._conj


def _coerce_strategy(tree: ScenarioTree, x: AdaptedProcess) -> tuple[AdaptedProcess, bool]:
    """Return ``(strategy, terminal_nonzero)``.

    Accepts the plain strategy profile (nothing at stage T) and the padded
    profile carrying a stage-T vector; a nonzero terminal position makes the
    objective infinite rather than ill-formed.
    """
    J, T = tree.n_assets, tree.horizon
    plain = tuple([J] * T + [0])
    padded = tuple([J] * (T + 1))
    if x.dims == plain:
        return x, False
    if x.dims == padded:
        terminal = any(
            np.any(x[int(l)] != 0.0) for l in tree.leaves
        )
        vals = {n: x[n] for n in range(tree.n_nodes) if tree.stage[n] < T}
        return AdaptedProcess(tree, plain, vals), terminal
    raise ValueError(f"not a strategy profile: dims {x.dims}")


def alm_value(I: AlmIntegrand, x: AdaptedProcess) -> float:
    """E V(u - gains(x)); +inf when the strategy holds a terminal position."""
    xs, terminal = _coerce_strategy(I.tree, x)
    if terminal:
        return INF
    w = I.liability - gains(I.tree, xs)
    p = I.tree.prob[I.tree.leaves]
    total = 0.0
    for pk, wk in zip(p, w):
        val = I.disutility.eval(float(wk))
        if val == INF:
            return INF
        total += pk * val
    return total


def alm_recession(I: AlmIntegrand, x: AdaptedProcess) -> float:
    """Recession function of the objective along the strategy direction ``x``.

    The endowment component of the direction is zero, so this is the expected
    recession disutility of the lost gains: positions whose gains are
    nonnegative in every scenario contribute nonpositively.
    """
    xs, terminal = _coerce_strategy(I.tree, x)
    if terminal:
        return INF
    rec = I.disutility.recession()
    w = -gains(I.tree, xs)
    p = I.tree.prob[I.tree.leaves]
    total = 0.0
    for pk, wk in zip(p, w):
        val = rec.eval(float(wk))
        if val == INF:
            return INF
        total += pk * val
    return total


def _increment_blocks(tree: ScenarioTree) -> np.ndarray:
    rows = [path_increments(tree, int(l)) for l in tree.leaves]
    return np.stack(rows).reshape(len(rows), tree.horizon, tree.n_assets)


def alm_conjugate(
    I: AlmIntegrand, v: AdaptedProcess, y, tol: float = CONSTRAINT_TOL
) -> float:
    """Conjugate of the objective integrand at a dual pair ``(v, y)``.

    Finite only when ``y * ds_{t+1} + v_t = 0`` holds along every scenario
    (componentwise, within ``tol`` relative), in which case the value is the
    expected conjugate disutility E V*(y).
    """
    tree = I.tree
    yarr = _leaf_values(tree, y)
    blocks = dual_block_matrix(tree, v)
    incs = _increment_blocks(tree)
    lhs = yarr[:, None, None] * incs
    resid = lhs + blocks
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(blocks))))
    if float(np.max(np.abs(resid))) > tol * scale:
        return INF
    conj = I.conjugate
    p = tree.prob[tree.leaves]
    total = 0.0
    for pk, yk in zip(p, yarr):
        val = _conj_eval(conj, float(yk))
        if val == INF:
            return INF
        total += pk * val
    return total


def gamma(I: AlmIntegrand, v: AdaptedProcess, tol: float = CONSTRAINT_TOL) -> float:
    """Cheapest conjugate value compatible with the dual process ``v``.

    Minimizes E V*(y) over leaf densities ``y`` subject to
    ``y * ds_{t+1} + v_t = 0``.  On a leaf whose path has a nonzero price
    increment the constraint pins ``y`` to a single candidate (inconsistent
    components make the value +inf); on a leaf with no price movement ``y``
    is free and the conjugate is minimized outright.
    """
    tree = I.tree
    blocks = dual_block_matrix(tree, v)
    incs = _increment_blocks(tree)
    conj = I.conjugate
    p = tree.prob[tree.leaves]
    total = 0.0
    for k in range(len(tree.leaves)):
        ds = incs[k].ravel()
        vl = blocks[k].ravel()
        pinned = None
        for dsc, vc in zip(ds, vl):
            if abs(dsc) <= ZERO_INCREMENT:
                if abs(vc) > tol * max(1.0, abs(vc)):
                    return INF
                continue
            cand = -vc / dsc
            if pinned is None:
                pinned = cand
            elif abs(cand - pinned) > tol * max(1.0, abs(pinned)):
                return INF
        if pinned is None:
            val = conj.minimum().value
        else:
            val = _conj_eval(conj, pinned)
        if val == INF:
            return INF
        total += p[k] * val
    return total


@dataclass
class LowerBoundCertificate:
    """Data of one pointwise lower bound on the objective integrand.

    ``v`` is a dual process (leaf-block or stage-staggered), ``lam`` the
    positive-part multiplier, ``beta`` a finite scalar per leaf, and ``g``
    the endowment penalty: nothing (treated as zero), one function shared by
    every leaf, or a mapping from leaf id to a per-leaf function.

    The duality statements need ``lam > 0``; ``lam = 0`` is accepted and
    still certifies the lower bound itself, just nothing about attainment.
    """

    v: AdaptedProcess
    lam: float
    beta: np.ndarray
    g: PlqFunction | dict[int, PlqFunction] | None = None

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("certificate multiplier must be nonnegative")
        self.beta = _leaf_values(self.v.tree, self.beta)
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("certificate offsets must be finite")

    def g_at(self, leaf: int) -> PlqFunction:
        if self.g is None:
            return _zero_plq()
        if isinstance(self.g, PlqFunction):
            return self.g
        return self.g.get(int(leaf), _zero_plq())


@dataclass
class CertificateReport:
    valid: bool
    witness: dict | None
    annihilator_ok: bool
    worst_margin: float


def build_certificate(I: AlmIntegrand, y, lam: float) -> LowerBoundCertificate:
    """Certificate from a leaf density whose scalings keep the conjugate finite.

    Takes ``v = -y * ds`` (the aligned dual process), zero offsets, and the
    per-leaf penalty ``g(u) = max(-y u + V*(y), -(1+lam) y u + V*((1+lam) y))``
    built from the two multipliers the bound has to survive.  Raises when the
    conjugate disutility is infinite at either multiplier on some leaf.
    """
    if lam < 0.0:
        raise ValueError("certificate multiplier must be nonnegative")
    lam = float(lam)
    tree = I.tree
    yarr = _leaf_values(tree, y)
    conj = I.conjugate
    v = dual_from_leaf_density(tree, yarr)
    # the checker re-derives each leaf's multiplier from the stored dual
    # process; building the envelope at exactly that value (instead of the
    # nominal density entry, which can differ by an ulp) keeps the stored
    # certificate valid bit-for-bit, not just up to rounding
    blocks = dual_block_matrix(tree, v)
    incs = _increment_blocks(tree)
    gmap: dict[int, PlqFunction] = {}
    for k, (leaf, yk) in enumerate(zip(tree.leaves, yarr)):
        ds = incs[k].ravel()
        nrm2 = float(ds @ ds)
        if nrm2 <= ZERO_INCREMENT**2:
            y_leaf = float(yk)
        else:
            y_leaf = -float(blocks[k].ravel() @ ds) / nrm2
        lines = []
        for s in _distinct((y_leaf, (1.0 + lam) * y_leaf)):
            cs = _conj_eval(conj, s)
            if cs == INF:
                raise ValueError(
                    f"conjugate disutility is infinite at multiplier {s}; "
                    "certificate needs both scalings inside its domain"
                )
            lines.append((-s, cs))
        gmap[int(leaf)] = upper_envelope(lines)
    return LowerBoundCertificate(
        v=v, lam=lam, beta=np.zeros(len(tree.leaves)), g=gmap
    )


def _distinct(values) -> list[float]:
    out: list[float] = []
    for s in values:
        if not any(abs(s - t) <= 1e-15 * max(1.0, abs(t)) for t in out):
            out.append(s)
    return out


def _path_strategy(tree: ScenarioTree, leaf: int, xi: np.ndarray) -> AdaptedProcess:
    """Strategy equal to ``xi[t]`` along the path to ``leaf``, zero elsewhere."""
    J, T = tree.n_assets, tree.horizon
    vals = {
        n: np.zeros(J) for n in range(tree.n_nodes) if tree.stage[n] < T
    }
    path = tree.path(int(leaf))
    for t in range(T):
        vals[path[t]] = np.asarray(xi[t], dtype=float).reshape(J)
    return AdaptedProcess.strategy(tree, vals)


def _witness(
    I: AlmIntegrand,
    cert: LowerBoundCertificate,
    leaf_pos: int,
    xi_flat: np.ndarray,
    w: float,
    blocks: np.ndarray,
    incs: np.ndarray,
) -> dict | None:
    """Package ``(x, u, leaf)`` and keep it only if the inequality truly fails."""
    tree = I.tree
    leaf = int(tree.leaves[leaf_pos])
    T, J = tree.horizon, tree.n_assets
    xi = xi_flat.reshape(T, J) if T * J else np.zeros((T, J))
    t = float(xi_flat @ blocks[leaf_pos].ravel())
    lhs = I.disutility.eval(w - float(xi_flat @ incs[leaf_pos].ravel()))
    rhs = (
        t
        + cert.lam * max(t, 0.0)
        + cert.beta[leaf_pos]
        - cert.g_at(leaf).eval(w)
    )
    if not rhs > lhs + 1e-15 * max(1.0, abs(lhs) if math.isfinite(lhs) else 1.0):
        return None
    u = np.zeros(len(tree.leaves))
    u[leaf_pos] = w
    return {
        "x": _path_strategy(tree, leaf, xi),
        "u": u,
        "leaf": leaf,
        "lhs": lhs,
        "rhs": rhs,
    }


def _finite_arg(lo: float, hi: float) -> float:
    if math.isfinite(lo):
        return lo
    if math.isfinite(hi):
        return hi
    return 0.0


def _conj_argmax(V: PlqFunction, conj: PlqFunction, s: float) -> float | None:
    """A point where ``s*c - V(c)`` attains ``V*(s)``, if one exists."""
    sub = conj.subgradient(s)
    if sub is None:
        return None
    c = _finite_arg(*sub)
    if abs(s * c - V.eval(c) - _conj_eval(conj, s)) <= 1e-7 * max(
        1.0, abs(_conj_eval(conj, s))
    ):
        return c
    return None


def _misalignment_witness(I, cert, k, resid, blocks, incs) -> dict:
    nrm2 = float(resid @ resid)
    c = max(1.0, 1.0 / nrm2)
    for _ in range(_MAX_WITNESS_DOUBLINGS):
        wit = _witness(I, cert, k, c * resid, 0.0, blocks, incs)
        if wit is not None:
            return wit
        c *= 2.0
    raise AssertionError("misaligned dual failed to produce a witness")


def _endpoint_witness(I, cert, k, s, g_leaf, ds, nrm2, blocks, incs) -> dict:
    """Witness for a failed one-dimensional condition at multiplier ``s``.

    Walks the endowment toward the infimum of ``g + s m`` and the shortfall
    toward the supremum defining ``V*(s)``; the pair is mapped back to a
    strategy along the leaf's path.  Doubling both walks is guaranteed to
    cross the reported violation.
    """
    V, conj = I.disutility, I.conjugate
    h = g_leaf.add(_affine_plq(s))
    mres = h.minimum()
    if mres.attained:
        m0, m_dir = _finite_arg(mres.arg_lo, mres.arg_hi), 0.0
    else:
        left, _ = h.terminal_slopes()
        m0, m_dir = 0.0, (-1.0 if left > 0 else 1.0)
    c_fixed = _conj_argmax(V, conj, s)
    step = 1.0
    for _ in range(_MAX_WITNESS_DOUBLINGS):
        m = m0 + m_dir * step
        if c_fixed is not None:
            c = c_fixed
        else:
            c = max((s * cc - V.eval(cc), cc) for cc in (step, -step))[1]
        z = m - c
        xi = (z / nrm2) * ds
        wit = _witness(I, cert, k, xi, m, blocks, incs)
        if wit is not None:
            return wit
        step *= 2.0
    raise AssertionError("endpoint violation failed to produce a witness")


def _zero_increment_witness(I, cert, k, g_leaf, blocks, incs) -> dict:
    V = I.disutility
    h = V.add(g_leaf)
    mres = h.minimum()
    if mres.attained:
        w0, w_dir = _finite_arg(mres.arg_lo, mres.arg_hi), 0.0
    else:
        left, _ = h.terminal_slopes()
        w0, w_dir = 0.0, (-1.0 if left > 0 else 1.0)
    T, J = I.tree.horizon, I.tree.n_assets
    step = 1.0
    for _ in range(_MAX_WITNESS_DOUBLINGS):
        wit = _witness(
            I, cert, k, np.zeros(T * J), w0 + w_dir * step, blocks, incs
        )
        if wit is not None:
            return wit
        step *= 2.0
    raise AssertionError("still-scenario violation failed to produce a witness")


def check_certificate(
    I: AlmIntegrand, cert: LowerBoundCertificate, tol: float = CONSTRAINT_TOL
) -> CertificateReport:
    """Exact validity check of a lower-bound certificate, leaf by leaf.

    On each leaf the quantified inequality collapses to: the dual process
    must be a scalar multiple ``-y * ds`` of the path increments, and for
    both multipliers ``s`` in ``{y, (1+lam) y}`` the one-dimensional convex
    program ``min_m g(m) + s m`` must dominate ``beta + V*(s)``.  Scenarios
    without price movement instead need ``v = 0`` and
    ``min (V + g) >= beta``.  Every failure is returned with a concrete
    ``(x, u, leaf)`` witness re-verified against the original inequality.

    ``annihilator_ok`` reports separately whether ``v`` is orthogonal to all
    strategies in expectation, which the duality statements require but the
    pointwise bound itself does not.
    """
    tree = I.tree
    V, conj = I.disutility, I.conjugate
    blocks = dual_block_matrix(tree, cert.v)
    incs = _increment_blocks(tree)
    ann_ok = is_annihilator(tree, cert.v)
    worst = INF
    for k, leaf in enumerate(tree.leaves):
        ds = incs[k].ravel()
        vl = blocks[k].ravel()
        g_leaf = cert.g_at(int(leaf))
        nrm2 = float(ds @ ds)
        y_leaf = 0.0 if nrm2 <= ZERO_INCREMENT**2 else -float(vl @ ds) / nrm2
        resid = vl + y_leaf * ds
        scale = max(1.0, float(np.max(np.abs(vl), initial=0.0)), abs(y_leaf))
        if float(np.max(np.abs(resid), initial=0.0)) > tol * scale:
            wit = _misalignment_witness(I, cert, k, resid, blocks, incs)
            return CertificateReport(False, wit, ann_ok, -INF)
        if nrm2 <= ZERO_INCREMENT**2:
            val = V.add(g_leaf).minimum().value
            margin = val - cert.beta[k]
            if margin < -tol * max(1.0, abs(cert.beta[k])):
                wit = _zero_increment_witness(I, cert, k, g_leaf, blocks, incs)
                return CertificateReport(False, wit, ann_ok, margin)
            worst = min(worst, margin)
            continue
        for s in _distinct((y_leaf, (1.0 + cert.lam) * y_leaf)):
            vstar = _conj_eval(conj, s)
            if vstar == INF:
                wit = _endpoint_witness(
                    I, cert, k, s, g_leaf, ds, nrm2, blocks, incs
                )
                return CertificateReport(False, wit, ann_ok, -INF)
            val = g_leaf.add(_affine_plq(s)).minimum().value
            bound = cert.beta[k] + vstar
            margin = val - bound
            if margin < -tol * max(1.0, abs(bound)):
                wit = _endpoint_witness(
                    I, cert, k, s, g_leaf, ds, nrm2, blocks, incs
                )
                return CertificateReport(False, wit, ann_ok, margin)
            worst = min(worst, margin)
    return CertificateReport(True, None, ann_ok, worst)


@dataclass
class LinealityReport:
    is_linear: bool
    violating_direction: AdaptedProcess | None
    optimum: float


def lineality_check(I: AlmIntegrand) -> LinealityReport:
    """Decide whether the objective's lineality space is linear.

    A strategy direction lies in the lineality space exactly when its gains
    are nonnegative in every scenario (the recession disutility is
    nonpositive precisely on nonpositive shortfalls, since the disutility is
    nondecreasing and not constant).  The space is linear iff every such
    direction has identically zero gains, i.e. iff the tree admits no
    arbitrage, which one linear program decides exactly.
    """
    rep = na_check(I.tree)
    return LinealityReport(
        is_linear=rep.no_arbitrage,
        violating_direction=rep.arbitrage,
        optimum=rep.optimum,
    )
