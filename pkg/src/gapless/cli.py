"""Command line interface: model ingestion, dispatch, machine-readable reports.

Reports are JSON on stdout with sorted keys and a fixed indent, so identical
invocations produce byte-identical output.  Strict JSON has no literals for
infinities, so non-finite numbers are written as the strings "inf", "-inf"
and "nan"; the same spellings are accepted on input.  Exit codes: 0 on
success, 2 on validation failure (including malformed JSON, reported with
line and column), 3 when --assert was given and the checked hypothesis
fails, 64 on usage errors such as unknown flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from .duality import CONE_TOL, dual_value, gap_suite, superhedge
from .finance import (
    DENSITY_TOL,
    GAIN_TOL,
    dp_backward,
    find_martingale_measure,
    na_check,
    remark3_model,
    two_lambda_check,
)
from .instances import gap_suite_rows
from .integrand import AlmIntegrand
from .plq import plq_from_dict
from .solver import DEFAULT_TOL, solve_primal
from .tree import AdaptedProcess, ScenarioTree, TreeStructureError, validate_tree

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_HYPOTHESIS = 3
EXIT_USAGE = 64

PIN_TOL = 1e-12
SUITE_TOL = 1e-8
CSV_COLUMNS = ["instance", "primal", "dual", "gap", "na", "two_lambda", "attained"]


class _Fail(Exception):
    """Carries a failure report and the exit code it should produce."""

    def __init__(self, code: int, report: dict):
        self.code = code
        self.report = report
        super().__init__(report.get("error", "failure"))


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with the usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- serialization -----------------------------------------------------------


def _plain(obj):
    """Recursively convert a report to strict-JSON-safe builtins."""
    if isinstance(obj, dict):
        return {key: _plain(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        if math.isnan(v):
            return "nan"
        return "inf" if v > 0 else "-inf"
    return obj


def _emit(report: dict) -> None:
    print(json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False))


def _number(value, what: str) -> float:
    if isinstance(value, bool):
        raise _Fail(EXIT_INVALID, {"ok": False, "error": f"{what} must be a number"})
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and value in ("inf", "-inf", "nan"):
        return float(value)
    raise _Fail(EXIT_INVALID, {"ok": False, "error": f"{what} must be a number"})


def _strategy_dict(proc: AdaptedProcess | None):
    if proc is None:
        return None
    return {
        "dims": list(proc.dims),
        "values": {int(k): [float(v) for v in arr] for k, arr in proc.values.items()},
    }


# -- input loading -----------------------------------------------------------


def _load_json(path: str, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _Fail(
            EXIT_INVALID, {"ok": False, "error": f"cannot read {what}: {exc}"}
        ) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise _Fail(
            EXIT_INVALID,
            {
                "ok": False,
                "error": f"malformed JSON in {what}: {exc.msg}",
                "line": exc.lineno,
                "column": exc.colno,
            },
        ) from exc


def _leaf_values(data, n_leaves: int, what: str) -> np.ndarray:
    if isinstance(data, dict):
        if "leaf_values" not in data:
            raise _Fail(
                EXIT_INVALID,
                {"ok": False, "error": f"{what} object needs a leaf_values array"},
            )
        data = data["leaf_values"]
    if not isinstance(data, list):
        raise _Fail(EXIT_INVALID, {"ok": False, "error": f"{what} must be an array"})
    vals = [_number(v, f"{what} entry") for v in data]
    if len(vals) != n_leaves:
        raise _Fail(
            EXIT_INVALID,
            {
                "ok": False,
                "error": f"{what} carries {len(vals)} values for {n_leaves} leaves",
            },
        )
    return np.array(vals)


class _Model:
    def __init__(self, tree, utility, liability):
        self.tree = tree
        self.utility = utility
        self.liability = liability

    def integrand(self) -> AlmIntegrand:
        if self.utility is None:
            raise _Fail(
                EXIT_INVALID,
                {"ok": False, "error": "model needs a utility for this command"},
            )
        return AlmIntegrand(self.tree, self.utility, liability=self.liability)


def _load_model(path: str, need_utility: bool) -> _Model:
    data = _load_json(path, "model")
    if not isinstance(data, dict) or "tree" not in data:
        raise _Fail(
            EXIT_INVALID, {"ok": False, "error": "model needs a tree object"}
        )
    try:
        tree = ScenarioTree.from_dict(data["tree"])
    except (TreeStructureError, ValueError, TypeError, KeyError) as exc:
        raise _Fail(
            EXIT_INVALID, {"ok": False, "error": f"invalid tree: {exc}"}
        ) from exc
    violations = validate_tree(tree)
    if violations:
        raise _Fail(
            EXIT_INVALID,
            {"ok": False, "error": "invalid tree", "violations": violations},
        )
    utility = None
    if "utility" in data:
        try:
            utility = plq_from_dict(data["utility"])
        except (ValueError, TypeError, KeyError) as exc:
            raise _Fail(
                EXIT_INVALID, {"ok": False, "error": f"invalid utility: {exc}"}
            ) from exc
    elif need_utility:
        raise _Fail(
            EXIT_INVALID,
            {"ok": False, "error": "model needs a utility for this command"},
        )
    liability = None
    if data.get("liability") is not None:
        liability = _leaf_values(data["liability"], len(tree.leaves), "liability")
    model = _Model(tree, utility, liability)
    if utility is not None:
        try:
            model.integrand()
        except ValueError as exc:
            raise _Fail(
                EXIT_INVALID, {"ok": False, "error": f"invalid model: {exc}"}
            ) from exc
    return model


# -- subcommands -------------------------------------------------------------


def _cmd_validate(args) -> int:
    model = _load_model(args.model, need_utility=False)
    tree = model.tree
    _emit(
        {
            "ok": True,
            "command": "validate",
            "horizon": tree.horizon,
            "assets": tree.n_assets,
            "nodes": tree.n_nodes,
            "leaves": len(tree.leaves),
            "utility_pieces": None if model.utility is None else model.utility.n_pieces,
            "liability_present": model.liability is not None,
        }
    )
    return EXIT_OK


def _radii(mmax: float | None):
    if mmax is None:
        return None
    if mmax <= 0:
        raise _Fail(EXIT_INVALID, {"ok": False, "error": "--mmax must be positive"})
    radii = []
    m = 1.0
    while m < mmax:
        radii.append(m)
        m *= 10.0
    radii.append(float(mmax))
    return radii


def _cmd_solve(args) -> int:
    model = _load_model(args.model, need_utility=True)
    rep = solve_primal(model.integrand(), tol=args.tol, m_values=_radii(args.mmax))
    _emit(
        {
            "ok": True,
            "command": "solve",
            "primal_value": rep.primal_value,
            "status": rep.status,
            "iterations": rep.iterations,
            "radius_trace": [[m, v] for m, v in rep.radius_trace],
            "x_star": _strategy_dict(rep.x_star),
            "certificate": rep.certificate,
            "tol": args.tol,
        }
    )
    return EXIT_OK


def _cmd_gap(args) -> int:
    model = _load_model(args.model, need_utility=True)
    I = model.integrand()
    probes = None
    if args.probes is not None:
        data = _load_json(args.probes, "probes")
        if not isinstance(data, list):
            raise _Fail(
                EXIT_INVALID, {"ok": False, "error": "probes must be an array"}
            )
        probes = [_leaf_values(row, len(model.tree.leaves), "probe") for row in data]
    suite = gap_suite(I, probe_us=probes, tol=args.tol)
    suite.update({"ok": True, "command": "gap", "tol": args.tol})
    _emit(suite)
    if args.require and not suite["certified"]:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_na(args) -> int:
    model = _load_model(args.model, need_utility=False)
    rep = na_check(model.tree)
    _emit(
        {
            "ok": True,
            "command": "na",
            "no_arbitrage": rep.no_arbitrage,
            "optimum": rep.optimum,
            "arbitrage": _strategy_dict(rep.arbitrage),
            "tol": GAIN_TOL,
        }
    )
    if args.require and not rep.no_arbitrage:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_mm(args) -> int:
    model = _load_model(args.model, need_utility=False)
    y = find_martingale_measure(model.tree, require_equivalent=args.equivalent)
    _emit(
        {
            "ok": True,
            "command": "mm",
            "found": y is not None,
            "equivalent_required": bool(args.equivalent),
            "density": None if y is None else y.leaf_array(),
            "tol": DENSITY_TOL,
        }
    )
    if args.require and y is None:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_twolambda(args) -> int:
    model = _load_model(args.model, need_utility=True)
    grid = None
    if args.grid is not None:
        data = _load_json(args.grid, "grid")
        if not isinstance(data, list) or not data:
            raise _Fail(
                EXIT_INVALID,
                {"ok": False, "error": "grid must be a nonempty array of multipliers"},
            )
        grid = [_number(v, "grid entry") for v in data]
    rep = two_lambda_check(model.tree, model.utility, lam_grid=grid)
    _emit(
        {
            "ok": True,
            "command": "twolambda",
            "satisfied": rep.satisfied,
            "lambdas_finite": rep.lambdas_finite,
            "interval": None if rep.interval is None else list(rep.interval),
            "evaluations": [[lam, val] for lam, val in rep.evaluations],
            "density": rep.density,
            "rae_small": rep.rae_small,
            "rae_large": rep.rae_large,
            "via": rep.via,
            "pin_tol": PIN_TOL,
        }
    )
    if args.require and not rep.satisfied:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_dp(args) -> int:
    model = _load_model(args.model, need_utility=True)
    try:
        rep = dp_backward(model.tree, model.utility)
    except ValueError as exc:
        raise _Fail(EXIT_INVALID, {"ok": False, "error": str(exc)}) from exc
    functions = {
        int(node): None if fn is None else fn.to_dict()
        for node, fn in rep.functions.items()
    }
    _emit(
        {
            "ok": True,
            "command": "dp",
            "mode": rep.mode,
            "backward_ok": rep.ok,
            "unbounded_nodes": [[int(n), d] for n, d in rep.unbounded_nodes],
            "root_function": functions.get(0),
            "node_functions": functions,
        }
    )
    if args.require and not rep.ok:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_superhedge(args) -> int:
    model = _load_model(args.model, need_utility=False)
    claim = _leaf_values(
        _load_json(args.claim, "claim"), len(model.tree.leaves), "claim"
    )
    try:
        rep = superhedge(model.tree, claim)
    except ValueError as exc:
        raise _Fail(EXIT_INVALID, {"ok": False, "error": str(exc)}) from exc
    _emit(
        {
            "ok": True,
            "command": "superhedge",
            "price": rep.price,
            "dual_price": rep.dual_price,
            "gap": rep.price - rep.dual_price
            if math.isfinite(rep.price) and math.isfinite(rep.dual_price)
            else 0.0,
            "status": rep.status,
            "q_star": rep.q_star,
            "hedge": _strategy_dict(rep.hedge),
            "tol": CONE_TOL,
        }
    )
    if args.require and rep.status != "optimal":
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_remark3(args) -> int:
    if args.pieces < 2:
        raise _Fail(
            EXIT_INVALID, {"ok": False, "error": "--pieces must be at least 2"}
        )
    tree, v = remark3_model(args.pieces)
    I = AlmIntegrand(tree, v)
    y = find_martingale_measure(tree, require_equivalent=True)
    dens = None if y is None else y.leaf_array()
    tl = two_lambda_check(tree, v, y=dens)
    prep = solve_primal(I)
    drep = dual_value(I)
    partial = -sum(1.0 / n**2 for n in range(1, args.pieces))
    _emit(
        {
            "ok": True,
            "command": "remark3",
            "pieces": args.pieces,
            "density": dens,
            "two_lambda": {
                "satisfied": tl.satisfied,
                "lambdas_finite": tl.lambdas_finite,
                "pin_tol": PIN_TOL,
            },
            "primal": {
                "value": prep.primal_value,
                "status": prep.status,
                "radius_trace": [[m, val] for m, val in prep.radius_trace],
                "tol": DEFAULT_TOL,
            },
            "dual": {"value": drep.dual_value, "gap": drep.gap, "tol": DEFAULT_TOL},
            "truncation": {
                "partial_sum": partial,
                "tail_bound": 1.0 / args.pieces,
            },
        }
    )
    return EXIT_OK


def _cmd_suite(args) -> int:
    if args.count < 0:
        raise _Fail(
            EXIT_INVALID, {"ok": False, "error": "--count must be nonnegative"}
        )
    rows = gap_suite_rows(args.seed, args.count, tol=SUITE_TOL)
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_csv_cell(row[col]) for col in CSV_COLUMNS])
        sys.stdout.write(buf.getvalue())
    else:
        _emit(
            {
                "ok": True,
                "command": "suite",
                "seed": args.seed,
                "count": args.count,
                "tol": SUITE_TOL,
                "rows": rows,
            }
        )
    return EXIT_OK


def _csv_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value


# -- parser ------------------------------------------------------------------


def _add_assert(sub):
    sub.add_argument(
        "--assert",
        dest="require",
        action="store_true",
        help="exit 3 when the checked hypothesis fails",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="gapless",
        description="Scenario-tree convex programs with duality diagnostics.",
    )
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("validate", help="validate a model file")
    p.add_argument("model")
    p.set_defaults(func=_cmd_validate)

    p = subs.add_parser("solve", help="minimize expected disutility")
    p.add_argument("model")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--mmax", type=float, default=None,
                   help="largest search-box radius")
    p.set_defaults(func=_cmd_solve)

    p = subs.add_parser("gap", help="primal/dual gap report over probes")
    p.add_argument("model")
    p.add_argument("--probes", default=None,
                   help="JSON file with an array of probe endowments")
    p.add_argument("--tol", type=float, default=1e-6)
    _add_assert(p)
    p.set_defaults(func=_cmd_gap)

    p = subs.add_parser("na", help="no-arbitrage check")
    p.add_argument("model")
    _add_assert(p)
    p.set_defaults(func=_cmd_na)

    p = subs.add_parser("mm", help="martingale density search")
    p.add_argument("model")
    p.add_argument("--equivalent", action="store_true",
                   help="require a strictly positive density")
    _add_assert(p)
    p.set_defaults(func=_cmd_mm)

    p = subs.add_parser("twolambda", help="two-multiplier finiteness check")
    p.add_argument("model")
    p.add_argument("--grid", default=None,
                   help="JSON file with extra multipliers to test")
    _add_assert(p)
    p.set_defaults(func=_cmd_twolambda)

    p = subs.add_parser("dp", help="backward-induction value functions")
    p.add_argument("model")
    _add_assert(p)
    p.set_defaults(func=_cmd_dp)

    p = subs.add_parser("superhedge", help="superhedging price of a claim")
    p.add_argument("model")
    p.add_argument("--claim", required=True,
                   help="JSON file with the claim's leaf values")
    _add_assert(p)
    p.set_defaults(func=_cmd_superhedge)

    p = subs.add_parser(
        "remark3", help="staircase model: density, multiplier scan, primal trace"
    )
    p.add_argument("--pieces", type=int, default=200)
    p.set_defaults(func=_cmd_remark3)

    p = subs.add_parser("suite", help="randomized gap/attainment batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--csv", action="store_true", help="tabular output")
    p.set_defaults(func=_cmd_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _Fail as fail:
        _emit(fail.report)
        return fail.code


if __name__ == "__main__":
    raise SystemExit(main())
