"""End-to-end tests of the command line interface (in-process)."""

import json

import numpy as np
import pytest

from gapless import remark3_model
from gapless.cli import main

PIN_TOL = 1e-12


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")

    def dump(name, obj):
        path = root / name
        path.write_text(json.dumps(obj))
        return str(path)

    two_leaf_tree = {
        "horizon": 1,
        "assets": 1,
        "nodes": [
            {"id": 0, "parent": None, "prob": 1.0, "price": [1.0]},
            {"id": 1, "parent": 0, "prob": 0.75, "price": [2.0]},
            {"id": 2, "parent": 0, "prob": 0.25, "price": [0.5]},
        ],
    }
    arb_tree = {
        "horizon": 1,
        "assets": 1,
        "nodes": [
            {"id": 0, "parent": None, "prob": 1.0, "price": [1.0]},
            {"id": 1, "parent": 0, "prob": 0.5, "price": [2.0]},
            {"id": 2, "parent": 0, "prob": 0.5, "price": [1.5]},
        ],
    }
    bad_tree = {
        "horizon": 1,
        "assets": 1,
        "nodes": [
            {"id": 0, "parent": None, "prob": 1.0, "price": [1.0]},
            {"id": 1, "parent": 0, "prob": 0.8, "price": [2.0]},
            {"id": 2, "parent": 0, "prob": 0.25, "price": [0.5]},
        ],
    }
    stair_tree, _ = remark3_model(60)
    out = {
        "model": dump(
            "model.json",
            {
                "tree": two_leaf_tree,
                "utility": {"family": "linear_kink", "slopes": [0.3, 2.0]},
                "liability": {"leaf_values": [0.0, 0.0]},
            },
        ),
        "treeonly": dump("treeonly.json", {"tree": two_leaf_tree}),
        "arb": dump("arb.json", {"tree": arb_tree}),
        "badprob": dump("badprob.json", {"tree": bad_tree}),
        "staircase": dump(
            "staircase.json",
            {
                "tree": stair_tree.to_dict(),
                "utility": {"family": "remark3", "n_pieces": 60},
            },
        ),
        "claim": dump("claim.json", {"leaf_values": [1.0, 0.0]}),
        "probes": dump("probes.json", [[0.0, 0.0], [1.0, -1.0]]),
        "grid": dump("grid.json", [0.7, 5.0]),
    }
    bad = root / "malformed.json"
    bad.write_text('{"tree": {\n  "horizon": 1,,\n}}')
    out["malformed"] = str(bad)
    return out


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out


def run_json(capsys, argv):
    code, out = run(capsys, argv)
    return code, json.loads(out)


# -- validation and failure modes ---------------------------------------------


def test_validate_ok(files, capsys):
    code, rep = run_json(capsys, ["validate", files["model"]])
    assert code == 0
    assert rep["ok"] is True
    assert rep["horizon"] == 1
    assert rep["assets"] == 1
    assert rep["nodes"] == 3
    assert rep["leaves"] == 2
    assert rep["utility_pieces"] == 2
    assert rep["liability_present"] is True


def test_validate_malformed_json(files, capsys):
    code, rep = run_json(capsys, ["validate", files["malformed"]])
    assert code == 2
    assert rep["ok"] is False
    assert rep["line"] == 2
    assert rep["column"] == 16


def test_validate_bad_probabilities(files, capsys):
    code, rep = run_json(capsys, ["validate", files["badprob"]])
    assert code == 2
    assert rep["ok"] is False
    assert any("probabilities" in v for v in rep["violations"])


def test_missing_file(capsys):
    code, rep = run_json(capsys, ["validate", "/nonexistent/m.json"])
    assert code == 2
    assert "cannot read" in rep["error"]


def test_unknown_flag(files, capsys):
    assert main(["solve", files["model"], "--bogus"]) == 64
    capsys.readouterr()


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 64
    capsys.readouterr()


def test_solve_requires_utility(files, capsys):
    code, rep = run_json(capsys, ["solve", files["treeonly"]])
    assert code == 2
    assert "utility" in rep["error"]


# -- solve ---------------------------------------------------------------------


def test_solve_report(files, capsys):
    code, rep = run_json(capsys, ["solve", files["model"], "--tol", "1e-9"])
    assert code == 0
    assert rep["status"] == "optimal"
    assert rep["tol"] == 1e-9
    assert abs(rep["primal_value"]) < 1e-9  # x = 0 is optimal for this model
    assert [m for m, _ in rep["radius_trace"]] == [1.0, 10.0, 100.0, 1000.0, 10000.0]
    assert rep["x_star"]["dims"] == [1, 0]


def test_solve_mmax_controls_radii(files, capsys):
    code, rep = run_json(capsys, ["solve", files["model"], "--mmax", "50"])
    assert code == 0
    assert [m for m, _ in rep["radius_trace"]] == [1.0, 10.0, 50.0]


# -- hypothesis commands ---------------------------------------------------------


def test_na_clean_and_arbitrage(files, capsys):
    code, rep = run_json(capsys, ["na", files["model"]])
    assert code == 0
    assert rep["no_arbitrage"] is True
    assert rep["arbitrage"] is None

    code, rep = run_json(capsys, ["na", files["arb"], "--assert"])
    assert code == 3
    assert rep["no_arbitrage"] is False
    assert rep["arbitrage"]["values"], "violating strategy expected"


def test_mm_density_and_equivalent(files, capsys):
    code, rep = run_json(capsys, ["mm", files["model"], "--equivalent"])
    assert code == 0
    assert rep["found"] is True
    dens = np.array(rep["density"])
    assert dens.min() > 0
    # risk-neutral weights q for moves (+1, -0.5) under p = (3/4, 1/4)
    q = dens * np.array([0.75, 0.25])
    assert abs(q.sum() - 1.0) < 1e-9
    assert abs(q @ np.array([1.0, -0.5])) < 1e-9

    code, rep = run_json(capsys, ["mm", files["arb"], "--assert"])
    assert code == 3
    assert rep["found"] is False
    assert rep["density"] is None


def test_twolambda_grid_merge(files, capsys):
    code, rep = run_json(capsys, ["twolambda", files["model"], "--grid", files["grid"]])
    assert code == 0
    assert rep["satisfied"] is True
    tested = [lam for lam, _ in rep["evaluations"]]
    assert any(abs(t - 0.7) < 1e-12 for t in tested)
    assert any(abs(t - 5.0) < 1e-12 for t in tested)


def test_dp_exact_root(files, capsys):
    code, rep = run_json(capsys, ["dp", files["model"]])
    assert code == 0
    assert rep["mode"] == "exact"
    assert rep["backward_ok"] is True
    assert rep["root_function"]["pieces"]
    assert set(rep["node_functions"]) == {"0", "1", "2"}


def test_superhedge_twin_prices(files, capsys):
    code, rep = run_json(
        capsys, ["superhedge", files["treeonly"], "--claim", files["claim"]]
    )
    assert code == 0
    assert rep["status"] == "optimal"
    assert abs(rep["price"] - rep["dual_price"]) < 1e-8
    assert abs(rep["price"] - 1.0 / 3.0) < 1e-8

    code, rep = run_json(
        capsys, ["superhedge", files["arb"], "--claim", files["claim"], "--assert"]
    )
    assert code == 3
    assert rep["status"] == "unbounded"
    assert rep["price"] == "-inf"


def test_superhedge_claim_required(files, capsys):
    assert main(["superhedge", files["treeonly"]]) == 64
    capsys.readouterr()


def test_gap_certified_with_probes(files, capsys):
    code, rep = run_json(
        capsys,
        ["gap", files["model"], "--probes", files["probes"], "--assert"],
    )
    assert code == 0
    assert rep["certified"] is True
    assert len(rep["rows"]) == 2
    for row in rep["rows"]:
        assert abs(row["gap"]) <= rep["tol"]


def test_gap_assert_fails_on_staircase(files, capsys):
    code, rep = run_json(capsys, ["gap", files["staircase"], "--assert"])
    assert code == 3
    assert rep["certified"] is False
    assert rep["certificate_found"] is False


# -- the counterexample command ---------------------------------------------------


def test_remark3_report(files, capsys):
    code, rep = run_json(capsys, ["remark3", "--pieces", "60"])
    assert code == 0
    dens = rep["density"]
    assert abs(dens[0] - 2.0 / 3.0) < PIN_TOL
    assert abs(dens[1] - 2.0) < PIN_TOL
    assert rep["two_lambda"]["satisfied"] is False
    assert rep["two_lambda"]["lambdas_finite"] == [1.5]
    partial = rep["truncation"]["partial_sum"]
    bound = rep["truncation"]["tail_bound"]
    assert abs(rep["primal"]["value"] - partial) <= bound
    assert abs(rep["dual"]["value"] - partial) <= bound
    values = [v for _, v in rep["primal"]["radius_trace"]]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


# -- batch suite -------------------------------------------------------------------


def test_suite_json_deterministic(files, capsys):
    code, first = run(capsys, ["suite", "--seed", "4", "--count", "3"])
    assert code == 0
    code, second = run(capsys, ["suite", "--seed", "4", "--count", "3"])
    assert first == second
    rep = json.loads(first)
    assert rep["seed"] == 4
    assert len(rep["rows"]) == 3


def test_suite_csv_shape(files, capsys):
    code, out = run(capsys, ["suite", "--seed", "2", "--count", "4", "--csv"])
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "instance,primal,dual,gap,na,two_lambda,attained"
    assert len(lines) == 5
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 7
        assert cells[4] in ("true", "false")
        assert cells[6] in ("true", "false")
    code, again = run(capsys, ["suite", "--seed", "2", "--count", "4", "--csv"])
    assert out == again


def test_suite_negative_count(capsys):
    code, rep = run_json(capsys, ["suite", "--count", "-1"])
    assert code == 2
    assert "nonnegative" in rep["error"]
