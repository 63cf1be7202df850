"""Experiment harness: scenarios, CSV contract, plot data, CLI behavior."""

import csv
import json
import os

import pytest

from agaloha.bench import (
    BUILTIN_SCENARIOS,
    CSV_COLUMNS,
    Scenario,
    ScenarioError,
    emit_plotdata,
    load_scenario,
    run_scenario,
    scenario_from_dict,
    scenario_tasks,
)
from agaloha.cli import EXIT_CONFIG, EXIT_SOLVER, main


def _read_csv(path):
    with open(path) as handle:
        lines = handle.read().splitlines()
    assert lines[0].startswith("# generated ")
    rows = list(csv.DictReader(lines[1:]))
    return lines, rows


def _smoke(tmp_path, sub):
    scenario = scenario_from_dict(BUILTIN_SCENARIOS["smoke"])
    out = str(tmp_path / sub)
    return run_scenario(scenario, out)


def test_smoke_scenario_hits_closed_forms(tmp_path):
    rows, csv_path = _smoke(tmp_path, "a")
    lines, parsed = _read_csv(csv_path)
    assert lines[1] == ",".join(CSV_COLUMNS)
    values = {
        (row["scheme"], row["D"]): float(row["aaoi_mean"]) for row in parsed
    }
    assert values[("basic", "1")] == 1.0
    assert values[("basic", "2")] == 1.5
    assert values[("lower-bound", "1")] == 1.0
    assert values[("lower-bound", "2")] == 1.5
    for row in parsed:
        assert row["error"] == ""
        assert row["scenario"] == "smoke"
        if row["scheme"] == "basic":
            assert float(row["aaoi_ci95"]) == 0.0  # deterministic dynamics
            assert row["episodes"] == "10"
            assert row["slots_per_episode"] == "2000"


def test_rerun_is_byte_identical_modulo_timing(tmp_path):
    _, first_path = _smoke(tmp_path, "a")
    _, second_path = _smoke(tmp_path, "b")

    def normalized(path):
        lines, _ = _read_csv(path)
        wall = CSV_COLUMNS.index("wall_ms")
        out = []
        for line in lines[1:]:
            cells = line.split(",")
            if cells[0] != "scenario":
                cells[wall] = "X"  # wall-clock timing is the one free field
            out.append(",".join(cells))
        return out

    assert normalized(first_path) == normalized(second_path)


def test_plotdata_files_and_series_order(tmp_path):
    rows, csv_path = _smoke(tmp_path, "a")
    out = str(tmp_path / "a")
    paths = emit_plotdata(rows, out)
    assert [os.path.basename(p) for p in paths] == [
        "plot_D1_N1.tsv",
        "plot_D2_N1.tsv",
    ]
    with open(paths[0]) as handle:
        header, line = handle.read().splitlines()
    assert header == "lambda\tbasic_mean\tbasic_ci\tlower-bound_mean\tlower-bound_ci"
    cells = line.split("\t")
    assert cells[0] == "1.0"
    assert float(cells[3]) == 1.0  # lower-bound mean for D=1, lambda=1


def test_plotdata_groups_cover_the_grid(tmp_path):
    rows = []
    for d in (1, 10):
        for n in (10, 30, 100):
            for lam, scheme in ((0.5, "zeta"), (0.5, "alpha"), (1.0, "zeta")):
                rows.append(
                    {
                        "error": "",
                        "D": d,
                        "N": n,
                        "lambda": lam,
                        "scheme": scheme,
                        "aaoi_mean": 2.0,
                        "aaoi_ci95": 0.1,
                    }
                )
    paths = emit_plotdata(rows, str(tmp_path))
    assert len(paths) == 6
    with open(paths[0]) as handle:
        header = handle.readline().rstrip("\n").split("\t")
    assert header == ["lambda", "alpha_mean", "alpha_ci", "zeta_mean", "zeta_ci"]


def test_lower_bound_series_formula(tmp_path):
    doc = {
        "name": "floor-check",
        "grid": {"N": [2], "lambda": [0.25, 1.0], "D": [1, 4]},
        "schemes": ["lower-bound"],
        "sim": {"horizon_slots": 10, "replications": 1},
    }
    rows, csv_path = run_scenario(scenario_from_dict(doc), str(tmp_path))
    _, parsed = _read_csv(csv_path)
    for row in parsed:
        lam, d = float(row["lambda"]), int(row["D"])
        expected = d / lam + (1 - d) / 2
        assert float(row["aaoi_mean"]) == expected
        assert float(row["lower_bound"]) == expected


def test_aoi_threshold_rows_only_for_single_slot_frames():
    doc = {
        "name": "aoi-coverage",
        "grid": {"N": [3], "lambda": [0.5], "D": [1, 2]},
        "schemes": ["aoi-threshold", "lower-bound"],
        "sim": {"horizon_slots": 10, "replications": 1},
    }
    tasks = scenario_tasks(scenario_from_dict(doc))
    combos = {(point[2], scheme) for _, point, scheme in tasks}
    assert (1, "aoi-threshold") in combos
    assert (2, "aoi-threshold") not in combos
    assert (2, "lower-bound") in combos


def test_aoi_threshold_row_executes_with_pilot_tuning(tmp_path):
    doc = {
        "name": "aoi-exec",
        "grid": {"N": [3], "lambda": [0.5], "D": [1]},
        "schemes": ["aoi-threshold"],
        "sim": {"horizon_slots": 2000, "replications": 2, "base_seed": 5},
        "aoi_grid": {"thresholds": [2, 4], "tx_probs": [0.5]},
    }
    rows, _ = run_scenario(scenario_from_dict(doc), str(tmp_path))
    [row] = rows
    assert not row["error"]
    assert row["gamma"] in (2, 4) and row["p"] == 0.5  # picked from the pilot grid
    assert row["episodes"] == 2
    assert row["aaoi_mean"] > 0.0


def test_scenario_validation():
    good = {
        "name": "x",
        "grid": {"N": [2], "lambda": [0.5], "D": [1]},
        "schemes": ["basic"],
    }
    scenario_from_dict(good)
    for mutate in (
        lambda d: d.pop("grid"),
        lambda d: d.pop("schemes"),
        lambda d: d.update(schemes=[]),
        lambda d: d.update(schemes=["warp-drive"]),
        lambda d: d["grid"].update(N=[0]),
        lambda d: d["grid"].update(**{"lambda": [1.5]}),
        lambda d: d.update(sim={"horizon_slots": 0}),
        lambda d: d.update(params={"basic": {"threshold": 0, "tx_prob": 0.5}}),
    ):
        doc = json.loads(json.dumps(good))
        mutate(doc)
        with pytest.raises(ScenarioError):
            scenario_from_dict(doc)
    with pytest.raises(ScenarioError):
        scenario_from_dict(["not", "a", "dict"])


def test_load_scenario_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ScenarioError):
        load_scenario(str(missing))
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ScenarioError):
        load_scenario(str(bad))


def test_cli_scenarios_list(capsys):
    assert main(["scenarios", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("smoke", "fig4-desk", "fig5-desk", "fig6-desk"):
        assert name in out


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["run", "no-such-scenario", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["solve", "--N", "0", "--lambda", "1", "--D", "1",
                 "--gamma", "1", "--p", "0.5"]) == EXIT_CONFIG
    capsys.readouterr()


def test_cli_solver_failures_exit_3(tmp_path, capsys):
    code = main(["solve", "--N", "5", "--lambda", "0.001", "--D", "1",
                 "--gamma", "1", "--p", "0.5"])
    assert code == EXIT_SOLVER
    doc = {
        "name": "failing",
        "grid": {"N": [5], "lambda": [0.001], "D": [1]},
        "schemes": ["analytic-basic", "lower-bound"],
        "sim": {"horizon_slots": 10, "replications": 1},
        "search": {"budget": 500},
    }
    cfg_path = tmp_path / "failing.json"
    cfg_path.write_text(json.dumps(doc))
    out = str(tmp_path / "o")
    assert main(["run", str(cfg_path), "--out", out]) == EXIT_SOLVER
    _, parsed = _read_csv(os.path.join(out, "failing.csv"))
    by_scheme = {row["scheme"]: row for row in parsed}
    assert by_scheme["analytic-basic"]["error"] != ""
    assert by_scheme["analytic-basic"]["aaoi_mean"] == ""
    assert by_scheme["lower-bound"]["error"] == ""  # partial results retained
    capsys.readouterr()


def test_cli_run_smoke_and_out_env(tmp_path, monkeypatch, capsys):
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("AGALOHA_OUT", str(env_dir))
    assert main(["run", "smoke"]) == 0
    assert (env_dir / "smoke.csv").exists()
    assert (env_dir / "plot_D1_N1.tsv").exists()
    out = capsys.readouterr().out
    assert "smoke.csv" in out


def test_cli_solve_and_optimize_values(capsys, tmp_path):
    dump = tmp_path / "dump"
    assert main(["solve", "--N", "2", "--lambda", "1", "--D", "1",
                 "--gamma", "1", "--p", "0.5", "--dump", str(dump)]) == 0
    out = capsys.readouterr().out
    printed = {
        line.split(" ", 1)[0]: line.split(" ", 1)[1] for line in out.splitlines()
    }
    assert float(printed["aaoi"]) == pytest.approx(4.0, abs=1e-9)
    assert float(printed["beta"]) == pytest.approx(0.25, abs=1e-9)
    pi_lines = (dump / "pi.csv").read_text().splitlines()
    assert pi_lines[0] == "l,k,mass"
    pi = {}
    for line in pi_lines[1:]:
        l, k, mass = line.split(",")
        pi[int(l), int(k)] = float(mass)
    assert (0, 0) not in pi
    assert all(mass > 0.0 for mass in pi.values())
    assert sum(pi.values()) == pytest.approx(1.0, abs=1e-8)
    alpha_lines = (dump / "alpha.csv").read_text().splitlines()
    assert alpha_lines[0] == "nu,alpha"
    alpha = [float(line.split(",")[1]) for line in alpha_lines[1:]]
    assert len(alpha) == 1  # one delivery slot per frame at D=1
    assert sum(alpha) == pytest.approx(float(printed["beta"]), abs=1e-12)
    assert main(["optimize", "--N", "1", "--lambda", "1", "--D", "1"]) == 0
    out = capsys.readouterr().out
    printed = dict(line.split(" ", 1) for line in out.splitlines())
    assert printed["threshold_slots"] == "1"
    assert printed["gamma_frames"] == "1"
    assert float(printed["p"]) == 1.0
    assert float(printed["aaoi"]) == pytest.approx(1.0, abs=1e-9)


def test_seed_override_changes_rows(tmp_path):
    doc = {
        "name": "seeded",
        "grid": {"N": [3], "lambda": [1.0], "D": [1]},
        "schemes": ["basic"],
        "sim": {"horizon_slots": 4000, "replications": 2},
        "params": {"basic": {"threshold": 1, "tx_prob": 0.5}},
    }
    scenario = scenario_from_dict(doc)
    rows_a, _ = run_scenario(scenario, str(tmp_path / "a"))
    rows_b, _ = run_scenario(scenario, str(tmp_path / "b"), seed=99)
    assert rows_a[0]["seed"] == 0
    assert rows_b[0]["seed"] == 99
    assert rows_a[0]["aaoi_mean"] != rows_b[0]["aaoi_mean"]
