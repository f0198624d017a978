"""Exact calculus for convex piecewise linear-quadratic (PLQ) functions of one variable.

A PLQ function is +infinity outside an interval domain [lo, hi] and equals
a*u^2 + b*u + c with a >= 0 on each piece of a finite breakpoint partition.
The class is closed under the operations the package needs -- addition,
positive scaling, affine pre-composition, Legendre-Fenchel conjugation,
recession functions, upper envelopes of lines and exact partial minimization
of sums f_k(u + x*d_k) over a scalar x -- and all of them are computed in
closed form on the piece data, not by sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

# Relative tolerance for coalescing breakpoints and comparing coefficients.
COALESCE_TOL = 1e-12
# Relative tolerance accepted for continuity / convexity of supplied pieces.
VALID_TOL = 1e-9
# Snap distance (relative) used when classifying a point as "at a kink".
KINK_SNAP = 1e-9


class PlqValidationError(ValueError):
    """The supplied piece data does not describe a proper closed convex PLQ."""


class ImproperFunctionError(ValueError):
    """An operation produced an improper function (empty domain)."""


class PartialMinUnboundedError(ValueError):
    """Partial minimization is -infinity for every parameter value."""

    def __init__(self, direction: float):
        self.direction = direction
        super().__init__(
            f"objective decreases without bound along x -> {'+' if direction > 0 else '-'}inf"
        )


def _pval(piece, u: float) -> float:
    a, b, c = piece
    return (a * u + b) * u + c


def _pder(piece, u: float) -> float:
    return 2.0 * piece[0] * u + piece[1]


class PlqFunction:
    """Proper closed convex piecewise linear-quadratic function on an interval.

    Parameters
    ----------
    lo, hi : domain endpoints, either may be infinite; lo <= hi and the
        domain is nonempty (lo == hi gives a one-point function).
    breaks : strictly increasing interior breakpoints, all in (lo, hi).
    pieces : one (a, b, c) triple per piece, len(breaks) + 1 of them, with
        a >= 0, values matching at the breakpoints and one-sided slopes
        nondecreasing across them.

    Nearly-coincident breakpoints are coalesced and adjacent identical
    pieces merged (1e-12 relative), then the convexity invariants are
    checked; violations raise PlqValidationError.
    """

    __slots__ = ("lo", "hi", "breaks", "pieces")

    def __init__(self, lo: float, hi: float, breaks, pieces):
        lo = float(lo)
        hi = float(hi)
        if math.isnan(lo) or math.isnan(hi):
            raise PlqValidationError("domain endpoints must not be NaN")
        if lo > hi:
            raise PlqValidationError(f"empty domain [{lo}, {hi}]")
        if math.isinf(lo) and lo > 0 or math.isinf(hi) and hi < 0:
            raise PlqValidationError("domain endpoints out of order")
        br = [float(t) for t in breaks]
        pc = [(float(a), float(b), float(c)) for (a, b, c) in pieces]
        if len(pc) != len(br) + 1:
            raise PlqValidationError(
                f"{len(br)} breakpoints require {len(br) + 1} pieces, got {len(pc)}"
            )
        for a, b, c in pc:
            if math.isnan(a) or math.isnan(b) or math.isnan(c):
                raise PlqValidationError("piece coefficients must be finite")
            if a < -1e-14:
                raise PlqValidationError(f"piece curvature a={a} is negative")
        pc = [(0.0 if abs(a) <= 1e-14 else a, b, c) for (a, b, c) in pc]

        if lo == hi:
            # one-point domain: collapse to a single piece
            if br:
                raise PlqValidationError("one-point domain admits no breakpoints")
            self.lo, self.hi = lo, hi
            self.breaks = np.empty(0)
            self.pieces = [pc[0]]
            return

        # scale used for relative comparisons
        finite = [abs(t) for t in br + [lo, hi] if math.isfinite(t)]
        xscale = max([1.0] + finite)

        # drop breakpoints out of the open interval or too close to a neighbour
        keep_br: list[float] = []
        keep_pc: list[tuple] = [pc[0]]
        for i, t in enumerate(br):
            if i and t <= br[i - 1]:
                raise PlqValidationError("breakpoints must be strictly increasing")
            prev = keep_br[-1] if keep_br else lo
            if t - prev <= COALESCE_TOL * xscale or hi - t <= COALESCE_TOL * xscale:
                # sliver piece: skip the breakpoint, keep the outer piece
                keep_pc[-1] = keep_pc[-1] if t - prev <= COALESCE_TOL * xscale else pc[i + 1]
                continue
            keep_br.append(t)
            keep_pc.append(pc[i + 1])

        # merge adjacent identical pieces
        br2: list[float] = []
        pc2: list[tuple] = [keep_pc[0]]
        for t, piece in zip(keep_br, keep_pc[1:]):
            last = pc2[-1]
            cscale = max(1.0, *(abs(v) for v in last + piece))
            if all(abs(last[j] - piece[j]) <= COALESCE_TOL * cscale for j in range(3)):
                continue
            br2.append(t)
            pc2.append(piece)

        # continuity and nondecreasing slopes at the surviving breakpoints
        for i, t in enumerate(br2):
            vl = _pval(pc2[i], t)
            vr = _pval(pc2[i + 1], t)
            vscale = max(1.0, abs(vl), abs(vr))
            if abs(vl - vr) > VALID_TOL * vscale:
                raise PlqValidationError(
                    f"discontinuity at breakpoint {t}: {vl} vs {vr}"
                )
            dl = _pder(pc2[i], t)
            dr = _pder(pc2[i + 1], t)
            dscale = max(1.0, abs(dl), abs(dr))
            if dr < dl - VALID_TOL * dscale:
                raise PlqValidationError(
                    f"slope drops from {dl} to {dr} at breakpoint {t}: not convex"
                )

        self.lo, self.hi = lo, hi
        self.breaks = np.array(br2)
        self.pieces = pc2

    # -- basic queries --------------------------------------------------

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    def _bounds(self, i: int) -> tuple[float, float]:
        l = self.lo if i == 0 else self.breaks[i - 1]
        r = self.hi if i == len(self.pieces) - 1 else self.breaks[i]
        return float(l), float(r)

    def _locate(self, u: float) -> int:
        return int(np.searchsorted(self.breaks, u, side="left"))

    def eval(self, u: float) -> float:
        """Function value; +inf outside [lo, hi]."""
        u = float(u)
        if math.isnan(u):
            raise ValueError("cannot evaluate at NaN")
        if u < self.lo or u > self.hi:
            return INF
        if math.isinf(u):
            # limit value along an unbounded domain end
            piece = self.pieces[0] if u < 0 else self.pieces[-1]
            a, b, _ = piece
            if a > 0:
                return INF
            s = b if u > 0 else -b
            return INF if s > 0 else (-INF if s < 0 else piece[2])
        return _pval(self.pieces[self._locate(u)], u)

    __call__ = eval

    def subgradient(self, u: float) -> tuple[float, float] | None:
        """Closed subdifferential interval at u, or None outside the domain."""
        u = float(u)
        if u < self.lo or u > self.hi:
            return None
        if self.lo == self.hi:
            return (-INF, INF)
        lo_side = -INF if u == self.lo else None
        hi_side = INF if u == self.hi else None
        i = self._locate(u)
        if lo_side is None:
            left = i
            if u == (self.breaks[i - 1] if i else None):  # pragma: no cover
                left = i - 1
            lo_side = _pder(self.pieces[left], u)
        if hi_side is None:
            right = i
            if i < len(self.breaks) and u == self.breaks[i]:
                right = i + 1
            hi_side = _pder(self.pieces[right], u)
        return (float(lo_side), float(hi_side))

    def terminal_slopes(self) -> tuple[float, float]:
        """Limiting slopes toward the two domain ends (-inf at a left edge
        that is finite, mirroring the subdifferential)."""
        if self.lo == self.hi:
            return (-INF, INF)
        a0, b0, _ = self.pieces[0]
        an, bn, _ = self.pieces[-1]
        s_lo = -INF if math.isfinite(self.lo) else (-INF if a0 > 0 else b0)
        s_hi = INF if math.isfinite(self.hi) else (INF if an > 0 else bn)
        return (s_lo, s_hi)

    # -- calculus --------------------------------------------------------

    def conjugate(self) -> "PlqFunction":
        """Exact Legendre-Fenchel transform.

        Quadratic pieces map to quadratic pieces with curvature 1/(4a),
        slope jumps at breakpoints map to linear pieces, finite domain ends
        map to unbounded linear tails.  The construction is an involution
        up to floating-point rounding.
        """
        segs: list[tuple[float, float, tuple]] = []
        n = len(self.pieces)
        if self.lo == self.hi:
            v = self.eval(self.lo)
            return PlqFunction(-INF, INF, [], [(0.0, self.lo, -v)])
        if math.isfinite(self.lo):
            d = _pder(self.pieces[0], self.lo)
            segs.append((-INF, d, (0.0, self.lo, -self.eval(self.lo))))
        for i, (a, b, c) in enumerate(self.pieces):
            l, r = self._bounds(i)
            if a > 0:
                yl = -INF if l == -INF else 2 * a * l + b
                yr = INF if r == INF else 2 * a * r + b
                segs.append((yl, yr, (1 / (4 * a), -b / (2 * a), b * b / (4 * a) - c)))
            if i + 1 < n:
                u0 = float(self.breaks[i])
                dm = _pder((a, b, c), u0)
                dp = _pder(self.pieces[i + 1], u0)
                if dp - dm > COALESCE_TOL * max(1.0, abs(dm), abs(dp)):
                    segs.append((dm, dp, (0.0, u0, -self.eval(u0))))
        if math.isfinite(self.hi):
            d = _pder(self.pieces[-1], self.hi)
            segs.append((d, INF, (0.0, self.hi, -self.eval(self.hi))))
        if not segs:
            # globally affine: conjugate is the one-point indicator at the slope
            _, b, c = self.pieces[0]
            return PlqFunction(b, b, [], [(0.0, 0.0, -c)])
        segs.sort(key=lambda s: (s[0], s[1]))
        ylo = segs[0][0]
        yhi = segs[-1][1]
        breaks = [s[0] for s in segs[1:]]
        pieces = [s[2] for s in segs]
        return PlqFunction(ylo, yhi, breaks, pieces)

    def recession(self) -> "PlqFunction":
        """Horizon function: positively homogeneous growth at infinity.

        Finite directions get the limiting slope; directions that leave the
        domain (or meet quadratic growth) are excluded from the result's
        domain entirely.
        """
        s_lo, s_hi = self.terminal_slopes()
        left_ok = s_lo > -INF   # moving to -inf stays finite
        right_ok = s_hi < INF
        if not left_ok and not right_ok:
            return PlqFunction(0.0, 0.0, [], [(0.0, 0.0, 0.0)])
        if left_ok and not right_ok:
            return PlqFunction(-INF, 0.0, [], [(0.0, s_lo, 0.0)])
        if right_ok and not left_ok:
            return PlqFunction(0.0, INF, [], [(0.0, s_hi, 0.0)])
        if s_lo == s_hi:
            return PlqFunction(-INF, INF, [], [(0.0, s_hi, 0.0)])
        return PlqFunction(-INF, INF, [0.0], [(0.0, s_lo, 0.0), (0.0, s_hi, 0.0)])

    def scale(self, w: float) -> "PlqFunction":
        """Positive multiple w*f."""
        w = float(w)
        if not w > 0:
            raise ValueError("scale factor must be > 0")
        return PlqFunction(
            self.lo, self.hi, self.breaks,
            [(w * a, w * b, w * c) for (a, b, c) in self.pieces],
        )

    def affine_precompose(self, alpha: float, beta: float) -> "PlqFunction":
        """The function u -> f(alpha*u + beta)."""
        alpha = float(alpha)
        beta = float(beta)
        if alpha == 0.0:
            v = self.eval(beta)
            if v == INF:
                raise ImproperFunctionError(
                    f"f({beta}) = +inf: constant pre-composition is improper"
                )
            return PlqFunction(-INF, INF, [], [(0.0, 0.0, v)])

        def _t(z: float) -> float:
            if math.isinf(z):
                return z / alpha  # keeps the sign right
            return (z - beta) / alpha

        pieces = [
            (a * alpha * alpha, 2 * a * alpha * beta + b * alpha,
             (a * beta + b) * beta + c)
            for (a, b, c) in self.pieces
        ]
        breaks = [_t(t) for t in self.breaks]
        lo, hi = _t(self.lo), _t(self.hi)
        if alpha < 0:
            lo, hi = hi, lo
            breaks = breaks[::-1]
            pieces = pieces[::-1]
        return PlqFunction(lo, hi, breaks, pieces)

    def add(self, other: "PlqFunction") -> "PlqFunction":
        return weighted_sum([(1.0, self), (1.0, other)])

    def minimum(self) -> "MinResult":
        """Exact global minimum with the full (closed) argmin interval.

        A PLQ function is bounded below iff both terminal slopes point
        outward (left one <= 0 <= right one after sign conventions); when it
        is, the minimum is attained.
        """
        if self.lo == self.hi:
            return MinResult(self.lo, self.lo, self.eval(self.lo), True)
        s_lo, s_hi = self.terminal_slopes()
        if self.lo == -INF and self.pieces[0][0] == 0 and self.pieces[0][1] > 0:
            return MinResult(math.nan, math.nan, -INF, False)
        if self.hi == INF and self.pieces[-1][0] == 0 and self.pieces[-1][1] < 0:
            return MinResult(math.nan, math.nan, -INF, False)
        # leftmost point with right-derivative >= 0
        arg_lo = None
        for i, piece in enumerate(self.pieces):
            l, r = self._bounds(i)
            a, b, _ = piece
            dl = -INF if l == -INF and a > 0 else _pder(piece, l) if l > -INF else b
            dr = INF if r == INF and a > 0 else _pder(piece, r) if r < INF else b
            if dr < 0:
                continue
            if dl >= 0:
                arg_lo = l
            else:
                arg_lo = -b / (2 * a)
            break
        if arg_lo is None:
            arg_lo = self.hi  # everything decreases: hi is finite here
        # rightmost point with left-derivative <= 0
        arg_hi = None
        for i in range(len(self.pieces) - 1, -1, -1):
            piece = self.pieces[i]
            l, r = self._bounds(i)
            a, b, _ = piece
            dl = -INF if l == -INF and a > 0 else _pder(piece, l) if l > -INF else b
            dr = INF if r == INF and a > 0 else _pder(piece, r) if r < INF else b
            if dl > 0:
                continue
            if dr <= 0:
                arg_hi = r
            else:
                arg_hi = -b / (2 * a)
            break
        if arg_hi is None:
            arg_hi = self.lo
        value = self.eval(arg_lo if math.isfinite(arg_lo) else arg_hi)
        if not math.isfinite(value):
            # flat tail at the minimum level: pick a finite representative
            rep = arg_hi if math.isfinite(arg_hi) else 0.0
            value = self.eval(rep)
        return MinResult(float(arg_lo), float(arg_hi), float(value), True)

    # -- misc -------------------------------------------------------------

    def __repr__(self) -> str:
        return (
            f"PlqFunction(lo={self.lo}, hi={self.hi}, "
            f"breaks={list(self.breaks)}, pieces={self.pieces})"
        )

    def to_dict(self) -> dict:
        def _edge(v: float):
            return None if math.isinf(v) else v

        return {
            "domain": [_edge(self.lo), _edge(self.hi)],
            "breaks": [float(t) for t in self.breaks],
            "pieces": [{"a": a, "b": b, "c": c} for (a, b, c) in self.pieces],
        }


@dataclass(frozen=True)
class MinResult:
    arg_lo: float
    arg_hi: float
    value: float
    attained: bool


def weighted_sum(terms: Iterable[tuple[float, PlqFunction]]) -> PlqFunction:
    """sum_k w_k * f_k with w_k > 0; raises ImproperFunctionError when the
    domains do not intersect."""
    terms = [(float(w), f) for (w, f) in terms]
    if not terms:
        raise ValueError("weighted_sum needs at least one term")
    for w, _ in terms:
        if not w > 0:
            raise ValueError("weights must be > 0")
    lo = max(f.lo for _, f in terms)
    hi = min(f.hi for _, f in terms)
    if lo > hi:
        raise ImproperFunctionError(
            f"domains do not intersect: [{lo}, {hi}] is empty"
        )
    if lo == hi:
        val = sum(w * f.eval(lo) for w, f in terms)
        return PlqFunction(lo, lo, [], [(0.0, 0.0, val)])
    cuts = sorted(
        {float(t) for _, f in terms for t in f.breaks if lo < t < hi}
    )
    bounds = [lo] + cuts + [hi]
    pieces = []
    for i in range(len(bounds) - 1):
        l, r = bounds[i], bounds[i + 1]
        if math.isinf(l) and math.isinf(r):
            mid = 0.0
        elif math.isinf(l):
            mid = r - 1.0
        elif math.isinf(r):
            mid = l + 1.0
        else:
            mid = 0.5 * (l + r)
        acc = [0.0, 0.0, 0.0]
        for w, f in terms:
            a, b, c = f.pieces[f._locate(mid)]
            acc[0] += w * a
            acc[1] += w * b
            acc[2] += w * c
        pieces.append(tuple(acc))
    return PlqFunction(lo, hi, cuts, pieces)


def upper_envelope(lines: Sequence[tuple[float, float]]) -> PlqFunction:
    """max of finitely many lines (slope, intercept), as a PLQ function on R."""
    if not lines:
        raise ValueError("upper_envelope needs at least one line")
    by_slope: dict[float, float] = {}
    for s, c in lines:
        s, c = float(s), float(c)
        if s not in by_slope or c > by_slope[s]:
            by_slope[s] = c
    cand = sorted(by_slope.items())
    hull: list[tuple[float, float]] = []
    cuts: list[float] = []
    for s, c in cand:
        while hull:
            s0, c0 = hull[-1]
            # intersection with the previous kept line
            x = (c0 - c) / (s - s0)
            if cuts and x <= cuts[-1]:
                hull.pop()
                cuts.pop()
                continue
            cuts.append(x)
            break
        hull.append((s, c))
    pieces = [(0.0, s, c) for (s, c) in hull]
    return PlqFunction(-INF, INF, cuts, pieces)


# ---------------------------------------------------------------------------
# partial minimization over a scalar
# ---------------------------------------------------------------------------


def _x_interval(constr: list[tuple[float, float, float]], u: float):
    """Feasible x-interval for sum-of-strips constraints lo_k <= u + x d_k <= hi_k."""
    xa, xb = -INF, INF
    for lo_k, hi_k, d in constr:
        if d > 0:
            if math.isfinite(lo_k):
                xa = max(xa, (lo_k - u) / d)
            if math.isfinite(hi_k):
                xb = min(xb, (hi_k - u) / d)
        else:
            if math.isfinite(hi_k):
                xa = max(xa, (hi_k - u) / d)
            if math.isfinite(lo_k):
                xb = min(xb, (lo_k - u) / d)
    return xa, xb


def _u_projection(constr: list[tuple[float, float, float]]) -> tuple[float, float]:
    """Interval of u for which some x satisfies lo_k <= u + x d_k <= hi_k for all k.

    Each lower/upper x-bound is affine in u, so feasibility is the
    intersection of pairwise affine inequalities: exact, no LP required.
    """
    lower = []  # x >= su*u + sc
    upper = []  # x <= su*u + sc
    for lo_k, hi_k, d in constr:
        if d > 0:
            if math.isfinite(lo_k):
                lower.append((-1.0 / d, lo_k / d))
            if math.isfinite(hi_k):
                upper.append((-1.0 / d, hi_k / d))
        else:
            if math.isfinite(hi_k):
                lower.append((-1.0 / d, hi_k / d))
            if math.isfinite(lo_k):
                upper.append((-1.0 / d, lo_k / d))
    ulo, uhi = -INF, INF
    for la, lb in lower:
        for ua, ub in upper:
            s = la - ua
            c = lb - ub
            # need s*u + c <= 0
            if abs(s) < 1e-300:
                if c > 0:
                    return (INF, -INF)
                continue
            bound = -c / s
            if s > 0:
                uhi = min(uhi, bound)
            else:
                ulo = max(ulo, bound)
    return (ulo, uhi)


def _locate_with_kink(f: PlqFunction, z: float):
    """Piece index at z plus the kink location if z sits on one (snapped)."""
    i = f._locate(z)
    scale = max(1.0, abs(z))
    kink = None
    if i < len(f.breaks) and abs(z - f.breaks[i]) <= KINK_SNAP * scale:
        kink = float(f.breaks[i])
    elif i > 0 and abs(z - f.breaks[i - 1]) <= KINK_SNAP * scale:
        kink = float(f.breaks[i - 1])
        i = i - 1 if z < f.breaks[i - 1] else i
    elif math.isfinite(f.lo) and abs(z - f.lo) <= KINK_SNAP * scale:
        kink = f.lo
    elif math.isfinite(f.hi) and abs(z - f.hi) <= KINK_SNAP * scale:
        kink = f.hi
    return i, kink


def _one_sided_slopes(f: PlqFunction, u: float) -> tuple[float, float]:
    sg = f.subgradient(u)
    if sg is None:
        raise ValueError("slope query outside the domain")
    return sg


class _Region:
    __slots__ = ("lo", "hi", "piece")

    def __init__(self, lo, hi, piece):
        self.lo, self.hi, self.piece = lo, hi, piece


def _affine_window(alpha: float, gamma: float, lo: float, hi: float):
    """u-interval on which lo <= alpha*u + gamma <= hi (with snap slack)."""
    if alpha == 0.0:
        pad = KINK_SNAP * max(1.0, abs(gamma))
        if gamma < lo - pad or gamma > hi + pad:
            return (INF, -INF)
        return (-INF, INF)
    # an infinite z-bound maps to the u-infinity matching the sign of alpha
    a = math.copysign(INF, -alpha) if math.isinf(lo) else (lo - gamma) / alpha
    b = math.copysign(INF, alpha) if math.isinf(hi) else (hi - gamma) / alpha
    return (min(a, b), max(a, b))


def partial_min(terms: Sequence[tuple[float, PlqFunction, float]]) -> PlqFunction:
    """Exact infimal projection h(u) = inf_x sum_k p_k * f_k(u + x*d_k), scalar x.

    The optimal-x path is followed analytically: at a probe value of u the
    one-dimensional minimizer is computed exactly, the active piece pattern
    identifies the local closed form of h (stationary interior, tracked kink
    or flat cell), and the u-interval on which that form stays valid is
    derived from the same data.  The intervals tile the projected domain, so
    the result is exact up to floating-point rounding.

    Raises PartialMinUnboundedError when the recession slope in x is
    negative (h would be -infinity everywhere on its domain) and
    ImproperFunctionError when the projected domain is empty.  Vector d_k
    are not supported: the exact path is scalar-only, multi-asset problems
    go through the numerical solver instead.
    """
    clean = []
    for p, f, d in terms:
        if np.ndim(d) != 0:
            raise TypeError(
                "partial_min handles a scalar displacement per term only; "
                "vector-valued trading steps are handled by the solver module"
            )
        p = float(p)
        if not p > 0:
            raise ValueError("term weights must be > 0")
        clean.append((p, f, float(d)))
    if not clean:
        raise ValueError("partial_min needs at least one term")

    fixed = [(p, f) for p, f, d in clean if d == 0.0]
    moving = [(p, f, d) for p, f, d in clean if d != 0.0]
    if not moving:
        return weighted_sum(fixed)

    # recession slopes in x are independent of u
    r_plus = sum(p * f.recession().eval(d) for p, f, d in moving)
    r_minus = sum(p * f.recession().eval(-d) for p, f, d in moving)
    if r_plus < 0:
        raise PartialMinUnboundedError(1.0)
    if r_minus < 0:
        raise PartialMinUnboundedError(-1.0)

    constr = [(f.lo, f.hi, d) for _, f, d in moving]
    ulo, uhi = _u_projection(constr)
    if ulo > uhi:
        raise ImproperFunctionError("projected domain is empty")

    def point_value(u: float) -> MinResult:
        psi = weighted_sum([(p, f.affine_precompose(d, u)) for p, f, d in moving])
        return psi.minimum()

    if ulo == uhi:
        m = point_value(ulo)
        h = PlqFunction(ulo, ulo, [], [(0.0, 0.0, m.value)])
        return weighted_sum(fixed + [(1.0, h)]) if fixed else h

    def region_at(u_p: float) -> _Region | None:
        """Closed form of h around u_p, or None when the probe is degenerate."""
        m = point_value(u_p)
        if not m.attained:  # pragma: no cover - excluded by recession check
            raise PartialMinUnboundedError(1.0)
        if math.isfinite(m.arg_lo) and math.isfinite(m.arg_hi):
            x_mid = 0.5 * (m.arg_lo + m.arg_hi)
        elif math.isfinite(m.arg_lo):
            x_mid = m.arg_lo + 1.0
        elif math.isfinite(m.arg_hi):
            x_mid = m.arg_hi - 1.0
        else:
            x_mid = 0.0
        info = []
        for p, f, d in moving:
            z = u_p + x_mid * d
            i, kink = _locate_with_kink(f, z)
            info.append((p, f, d, i, kink))
        flat = m.arg_hi - m.arg_lo > KINK_SNAP * max(
            1.0,
            abs(m.arg_lo) if math.isfinite(m.arg_lo) else 0.0,
            abs(m.arg_hi) if math.isfinite(m.arg_hi) else 0.0,
        )
        kinked = [t for t in info if t[4] is not None]

        win_lo, win_hi = -INF, INF
        A = B = C = 0.0

        if flat or not kinked:
            active_quad = any(f.pieces[i][0] > 0 for _, f, _, i, _ in info)
            if flat and not active_quad:
                # flat cell: value is independent of x inside the cell
                slope_x = sum(p * f.pieces[i][1] * d for p, f, d, i, _ in info)
                if abs(slope_x) > 1e-9 * max(
                    1.0, *(abs(f.pieces[i][1]) for _, f, _, i, _ in info)
                ):
                    return None
                cell = []
                for p, f, d, i, _ in info:
                    l, r = f._bounds(i)
                    a, b, c = f.pieces[i]
                    B += p * b
                    C += p * c
                    cell.append((l, r, d))
                w = _u_projection(cell)
                win_lo, win_hi = max(win_lo, w[0]), min(win_hi, w[1])
                return _Region(win_lo, win_hi, (0.0, B, C)) if win_lo < win_hi else None
            # stationary point inside quadratic pieces
            a2 = sum(2 * p * f.pieces[i][0] * d * d for p, f, d, i, _ in info)
            if a2 <= 0:
                return None
            a1 = sum(2 * p * f.pieces[i][0] * d for p, f, d, i, _ in info)
            b1 = sum(p * f.pieces[i][1] * d for p, f, d, i, _ in info)
            for p, f, d, i, _ in info:
                alpha = 1.0 - d * a1 / a2
                gamma = -d * b1 / a2
                a, b, c = f.pieces[i]
                A += p * a * alpha * alpha
                B += p * (2 * a * alpha * gamma + b * alpha)
                C += p * ((a * gamma + b) * gamma + c)
                l, r = f._bounds(i)
                w = _affine_window(alpha, gamma, l, r)
                win_lo, win_hi = max(win_lo, w[0]), min(win_hi, w[1])
            return _Region(win_lo, win_hi, (A, B, C)) if win_lo < win_hi else None

        # tracked kink: x*(u) = (beta_j - u) / d_j
        p_j, f_j, d_j, _, beta_j = max(kinked, key=lambda t: abs(t[2]))
        sL, sR = _one_sided_slopes(f_j, beta_j)
        C += p_j * f_j.eval(beta_j)
        d_plus = p_j * d_j * (sR if d_j > 0 else sL)
        d_minus = p_j * d_j * (sL if d_j > 0 else sR)
        # one-sided optimality: d_minus + lin(u) <= 0 <= d_plus + lin(u)
        lin_s = lin_c = 0.0
        for p, f, d, i, kink in info:
            if f is f_j and d == d_j and kink == beta_j:
                continue
            alpha = 1.0 - d / d_j
            gamma = beta_j * d / d_j
            a, b, c = f.pieces[i]
            A += p * a * alpha * alpha
            B += p * (2 * a * alpha * gamma + b * alpha)
            C += p * ((a * gamma + b) * gamma + c)
            l, r = f._bounds(i)
            w = _affine_window(alpha, gamma, l, r)
            win_lo, win_hi = max(win_lo, w[0]), min(win_hi, w[1])
            lin_s += p * d * 2 * a * alpha
            lin_c += p * d * (2 * a * gamma + b)
        # D_plus(u) = d_plus + lin_s*u + lin_c >= 0
        if math.isfinite(d_plus):
            if lin_s == 0.0:
                if d_plus + lin_c < -1e-12 * max(1.0, abs(d_plus), abs(lin_c)):
                    return None
            else:
                bound = -(d_plus + lin_c) / lin_s
                if lin_s > 0:
                    win_lo = max(win_lo, bound)
                else:
                    win_hi = min(win_hi, bound)
        # D_minus(u) = d_minus + lin_s*u + lin_c <= 0
        if math.isfinite(d_minus):
            if lin_s == 0.0:
                if d_minus + lin_c > 1e-12 * max(1.0, abs(d_minus), abs(lin_c)):
                    return None
            else:
                bound = -(d_minus + lin_c) / lin_s
                if lin_s > 0:
                    win_hi = min(win_hi, bound)
                else:
                    win_lo = max(win_lo, bound)
        return _Region(win_lo, win_hi, (A, B, C)) if win_lo < win_hi else None

    # cover (ulo, uhi) with closed-form regions
    finite_hints = [abs(t) for _, f, _ in moving for t in f.breaks] + [1.0]
    span = max(finite_hints)
    regions: list[_Region] = []
    work = [(ulo, uhi)]
    guard = 0
    max_iter = 200 + 60 * sum(f.n_pieces for _, f, _ in moving)
    while work:
        guard += 1
        if guard > max_iter:
            raise RuntimeError("partial_min failed to stabilize; please report")
        a, b = work.pop()
        width = b - a
        gap_scale = max(1.0, abs(a) if math.isfinite(a) else 0.0,
                        abs(b) if math.isfinite(b) else 0.0)
        if width <= 1e-12 * gap_scale:
            continue
        if math.isinf(a) and math.isinf(b):
            probe = 0.6180339887 * span
        elif math.isinf(a):
            probe = b - max(1.0, abs(b)) * 0.6180339887
        elif math.isinf(b):
            probe = a + max(1.0, abs(a)) * 0.6180339887
        else:
            probe = a + width * 0.6180339887 / 2
        reg = region_at(probe)
        if reg is None:
            # degenerate probe: nudge and retry once, then split
            for shift in (0.23606797, -0.1459, 0.0729):
                probe2 = probe + shift * min(width if math.isfinite(width) else 1.0, 1.0)
                if a < probe2 < b:
                    reg = region_at(probe2)
                    if reg is not None:
                        probe = probe2
                        break
        if reg is None:
            mid = probe
            work.append((a, mid))
            work.append((mid, b))
            continue
        lo_r = max(a, reg.lo)
        hi_r = min(b, reg.hi)
        if not lo_r <= probe <= hi_r:
            lo_r, hi_r = min(lo_r, probe), max(hi_r, probe)
        regions.append(_Region(lo_r, hi_r, reg.piece))
        if lo_r - a > 1e-12 * gap_scale:
            work.append((a, lo_r))
        if b - hi_r > 1e-12 * gap_scale:
            work.append((hi_r, b))

    regions.sort(key=lambda r: (r.lo, r.hi))
    merged: list[_Region] = []
    for r in regions:
        if merged:
            prev_hi = merged[-1].hi
            mtol = 1e-12 * max(
                1.0,
                abs(r.hi) if math.isfinite(r.hi) else 0.0,
                abs(prev_hi) if math.isfinite(prev_hi) else 0.0,
            )
            if r.hi <= prev_hi + mtol:
                continue
        merged.append(r)
    breaks = []
    pieces = []
    for i, r in enumerate(merged):
        if i:
            breaks.append(0.5 * (merged[i - 1].hi + r.lo))
        pieces.append(r.piece)
    h = PlqFunction(ulo, uhi, breaks, pieces)

    # verification: the closed form must agree with pointwise minimization
    checkpoints = []
    for i in range(h.n_pieces):
        l, r = h._bounds(i)
        if math.isinf(l) and math.isinf(r):
            checkpoints.append(0.3819660113)
        elif math.isinf(l):
            checkpoints.append(r - 0.7639320225)
        elif math.isinf(r):
            checkpoints.append(l + 0.7639320225)
        else:
            checkpoints.append(l + (r - l) * 0.3819660113)
    for u_t in checkpoints:
        got = h.eval(u_t)
        want = point_value(u_t).value
        if abs(got - want) > 5e-8 * max(1.0, abs(want)):
            raise RuntimeError(
                f"partial_min verification failed at u={u_t}: {got} vs {want}"
            )
    if fixed:
        h = weighted_sum(fixed + [(1.0, h)])
    return h


# ---------------------------------------------------------------------------
# asymptotic elasticity of a disutility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElasticityReport:
    rae1: bool
    rae2: bool
    basis: str
    notes: str


def _empirical_rae(vstar: PlqFunction, lam: float, ys: np.ndarray) -> float:
    """Largest observed ratio vstar(lam*y)/vstar(y) over a sample grid."""
    worst = 1.0
    for y in ys:
        den = vstar.eval(y)
        num = vstar.eval(lam * y)
        if den == INF:
            continue
        if num == INF:
            return INF
        if den <= 0:
            if num > 1e-12:
                return INF
            continue
        worst = max(worst, num / den)
    return worst

def asymptotic_elasticity(v: PlqFunction) -> ElasticityReport:
    """Scaling bounds on the conjugate of a nondecreasing disutility.

    Condition one asks for V*(lam*y) <= C*V*(y) near y = 0 for some
    lam in (0,1); condition two asks the same near y = +inf for some
    lam > 1, extended-real inequalities throughout.  A function with
    finitely many pieces has trivial scale asymptotics at both ends
    (the conjugate is either +inf near the end -- the bound is vacuous --
    or grows at a fixed polynomial order), so both conditions hold on
    this class; the report records which case produced the answer.
    """
    slopes = [p[1] for p in v.pieces] + [2 * p[0] * t + p[1]
                                         for p, t in zip(v.pieces, v.breaks)]
    if min(slopes) < -VALID_TOL or max(slopes) <= VALID_TOL or v.pieces[0][0] > 0:
        raise ValueError("expected a nondecreasing, nonconstant disutility")
    vstar = v.conjugate()
    notes = []
    if vstar.lo > 0:
        rae1 = True
        notes.append(
            f"conjugate is +inf on (0, {vstar.lo}): the near-zero bound is vacuous"
        )
    else:
        v0 = vstar.eval(0.0)
        rae1 = True
        if v0 > 0:
            notes.append("conjugate has a positive finite limit at 0: ratio -> 1")
        else:
            notes.append("conjugate vanishes at 0 and is nondecreasing: C = 1 works")
    if math.isfinite(vstar.hi):
        rae2 = True
        notes.append(
            f"conjugate is +inf beyond {vstar.hi}: the at-infinity bound is vacuous"
        )
    else:
        a, b, _ = vstar.pieces[-1]
        rae2 = True
        order = 2 if a > 0 else (1 if b > 0 else 0)
        notes.append(f"conjugate grows at polynomial order {order} at infinity")
    return ElasticityReport(rae1, rae2, "closed-form", "; ".join(notes))


# ---------------------------------------------------------------------------
# named families and JSON
# ---------------------------------------------------------------------------


def from_slopes(breakpoints: Sequence[float], slopes: Sequence[float],
                anchor: float = 0.0, value: float = 0.0) -> PlqFunction:
    """Piecewise linear convex function from its slope profile.

    ``slopes`` has one entry per piece (len(breakpoints) + 1, nondecreasing);
    the function is anchored by f(anchor) = value.
    """
    breakpoints = [float(t) for t in breakpoints]
    slopes = [float(s) for s in slopes]
    if len(slopes) != len(breakpoints) + 1:
        raise ValueError("need one slope per piece")
    i0 = int(np.searchsorted(breakpoints, anchor, side="left"))
    cs = [0.0] * len(slopes)
    cs[i0] = value - slopes[i0] * anchor
    for i in range(i0, len(slopes) - 1):
        t = breakpoints[i]
        cs[i + 1] = cs[i] + (slopes[i] - slopes[i + 1]) * t
    for i in range(i0 - 1, -1, -1):
        t = breakpoints[i]
        cs[i] = cs[i + 1] + (slopes[i + 1] - slopes[i]) * t
    return PlqFunction(-INF, INF, breakpoints,
                       [(0.0, s, c) for s, c in zip(slopes, cs)])


def remark3_disutility(n_pieces: int = 50) -> PlqFunction:
    """The staircase disutility of the built-in one-period counterexample.

    Slope 1 + 1/n^2 on (-n, -n+1] and 3 - 1/n^2 on (n-1, n] for
    n = 1..n_pieces, with tails of slope exactly 1 and 3 beyond.  The
    derivative therefore climbs from 1 to 3, the conjugate is finite
    exactly on [1, 3], and V(0) = 0.  Truncation at N pieces changes
    values by at most the tail of sum 1/n^2, i.e. less than 1/N.
    """
    n = int(n_pieces)
    if n < 1:
        raise ValueError("n_pieces must be >= 1")
    breakpoints = (
        [float(-k) for k in range(n, 0, -1)]
        + [0.0]
        + [float(k) for k in range(1, n + 1)]
    )
    slopes = (
        [1.0]
        + [1.0 + 1.0 / k**2 for k in range(n, 0, -1)]
        + [3.0 - 1.0 / k**2 for k in range(1, n + 1)]
        + [3.0]
    )
    return from_slopes(breakpoints, slopes, anchor=0.0, value=0.0)


def linear_kink(slopes: Sequence[float], kink: float = 0.0) -> PlqFunction:
    """Two-slope convex kink with value 0 at the kink."""
    s1, s2 = float(slopes[0]), float(slopes[1])
    if s2 < s1:
        raise ValueError("slopes must be nondecreasing")
    if s1 == s2:
        return from_slopes([], [s1], anchor=kink, value=0.0)
    return from_slopes([float(kink)], [s1, s2], anchor=float(kink), value=0.0)


def _edge_value(v) -> float:
    if v is None:
        return INF
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity", "+infinity"):
            return INF
        if s in ("-inf", "-infinity"):
            return -INF
        raise ValueError(f"unrecognized domain endpoint {v!r}")
    return float(v)


def plq_from_dict(data: dict) -> PlqFunction:
    """Parse the JSON form: a named family or a literal piece table."""
    if "family" in data:
        fam = data["family"]
        if fam == "remark3":
            return remark3_disutility(int(data.get("n_pieces", 50)))
        if fam == "linear_kink":
            return linear_kink(data["slopes"], float(data.get("kink", 0.0)))
        raise ValueError(f"unknown function family {fam!r}")
    dom = data.get("domain", [None, None])
    lo = _edge_value(dom[0])
    hi = _edge_value(dom[1])
    if lo == INF and dom[0] is None:
        lo = -INF
    pieces = [(p["a"], p["b"], p["c"]) for p in data["pieces"]]
    return PlqFunction(lo, hi, data.get("breaks", []), pieces)


def plq_from_json(text: str) -> PlqFunction:
    return plq_from_dict(json.loads(text))
