import json
import subprocess
import sys

import numpy as np
import pytest

from memroute import reports
from memroute.cli import EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from memroute.network import ScenarioError
from memroute.scenario import dump_scenario, load_scenario, preset, read_scenario


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scen") / "sample.json"
    assert run("generate", "--seed", 0, "--out", path) == EXIT_OK
    return path


def test_generate_loads_back(scenario_file):
    s = read_scenario(scenario_file)
    assert (len(s.network.nodes), s.network.n_edges) == (12, 54)


def test_generate_is_deterministic(tmp_path, scenario_file):
    again = tmp_path / "again.json"
    run("generate", "--seed", 0, "--out", again)
    assert read_scenario(again).digest == read_scenario(scenario_file).digest
    assert again.read_bytes() == scenario_file.read_bytes()


def test_generate_bad_path(tmp_path):
    assert run("generate", "--seed", 0, "--out", tmp_path / "missing" / "x.json") == EXIT_IO


def test_invalid_scenario_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [1]}')
    assert run("solve", bad, "--out", tmp_path / "o") == EXIT_VALIDATION


def test_bad_weights_exit_code(tmp_path, scenario_file):
    assert run("solve", scenario_file, "--weights", "0.7,0.7", "--out", tmp_path) == EXIT_VALIDATION


def test_missing_scenario_file(tmp_path):
    assert run("solve", tmp_path / "nope.json", "--out", tmp_path) == EXIT_IO


def test_solve_record_rechecks(tmp_path, scenario_file):
    out = tmp_path / "solve"
    assert run("solve", scenario_file, "--weights", "0.5,0.5", "--ncr", 0.2, "--out", out) == EXIT_OK
    record = reports.read_json(out / "run_record.json")
    s = read_scenario(scenario_file)
    demands = s.demands.with_ncr(s.modes, 0.2)
    assert record["scenario_digest"] == s.digest
    assert record["status"] == "converged"
    assert reports.check_run_record(record, s.network, demands, s.modes) == []
    for key in ("toolkit", "parameters", "result", "travel_times", "mem", "delta_pv", "timing"):
        assert key in record
    rows = reports.read_csv(out / "travel_times.csv")
    assert len({r["trip"] for r in rows}) == 10


def test_solve_without_noncompliance(tmp_path, scenario_file):
    out = tmp_path / "ncr0"
    assert run("solve", scenario_file, "--ncr", 0, "--out", out) == EXIT_OK
    rows = reports.read_csv(out / "travel_times.csv")
    assert not [r for r in rows if r["group"].startswith("npv")]
    assert reports.read_json(out / "run_record.json")["delta_pv"] == 0.0


def test_solve_all_noncompliant_without_transit(tmp_path, scenario_file):
    data = json.loads(scenario_file.read_text())
    data["demand"]["compliant"].pop("public")
    path = tmp_path / "private_only.json"
    path.write_text(json.dumps(data))
    out = tmp_path / "ncr1"
    assert run("solve", path, "--ncr", 1, "--out", out) == EXIT_OK
    record = reports.read_json(out / "run_record.json")
    assert record["result"]["compliant_flows"] == []
    assert record["status"] == "converged"
    q = np.array(record["result"]["npv_level_flows"]).sum(axis=1)
    np.testing.assert_allclose(q, record["result"]["edge_totals"])
    assert record["delta_pv"] == 0.0


def test_sweep_small_grid(tmp_path, scenario_file):
    out = tmp_path / "sweep"
    code = run("sweep", scenario_file, "--grid-step", 0.5, "--ncr-list", "0.2", "--out", out)
    assert code == EXIT_OK
    rows = reports.read_csv(out / "results.csv")
    assert len(rows) == 3
    assert list(rows[0]) == ["w_public", "w_cpv", "ncr", "mem", "delta_pv", "feasible", "status"]
    best = reports.read_json(out / "best_weights.json")
    top = max(float(r["mem"]) for r in rows if r["feasible"] == "true")
    scan = min((r for r in rows if r["feasible"] == "true" and float(r["mem"]) == top),
               key=lambda r: float(r["w_public"]))
    assert best[0]["weights"] == {"public": float(scan["w_public"]), "cpv": float(scan["w_cpv"])}


def test_sweep_infeasible_everywhere(tmp_path, scenario_file):
    out = tmp_path / "none"
    code = run("sweep", scenario_file, "--grid-step", 0.5, "--ncr-list", "0.2,0.4", "--gap-limit", -100,
               "--out", out)
    assert code == EXIT_INFEASIBLE
    assert len(reports.read_csv(out / "results.csv")) == 6
    assert [b["feasible"] for b in reports.read_json(out / "best_weights.json")] == [False, False]


def test_default_sweep_mem_trend_at_equal_weights(tmp_path):
    out = tmp_path / "default"
    assert run("sweep", "preset:sample", "--out", out) == EXIT_OK
    rows = reports.read_csv(out / "results.csv")
    assert len(rows) == 84
    at_half = [float(r["mem"]) for r in rows if r["w_public"] == "0.5"]
    assert len(at_half) == 4
    assert all(b <= a for a, b in zip(at_half, at_half[1:]))


def test_emitted_files_round_trip(tmp_path):
    out = tmp_path / "rt"
    run("sweep", "preset:sample", "--grid-step", 0.5, "--ncr-list", "0.2", "--out", out)
    for name in ("results.csv", "travel_times.csv"):
        rows = reports.read_csv(out / name)
        header = list(rows[0])
        copy = tmp_path / f"copy_{name}"
        reports.write_csv(copy, header, [[r[h] for h in header] for r in rows])
        assert copy.read_bytes() == (out / name).read_bytes()
    for name in ("best_weights.json", "run_record.json"):
        copy = tmp_path / f"copy_{name}"
        reports.write_json(copy, reports.read_json(out / name))
        assert copy.read_bytes() == (out / name).read_bytes()
    scen = tmp_path / "s.json"
    run("generate", "--out", scen)
    assert dump_scenario(load_scenario(scen.read_text())) == scen.read_text()


def test_iterate_demo_on_chatter_preset(tmp_path):
    out = tmp_path / "demo"
    assert run("iterate-demo", "preset:chatter", "--out", out) == EXIT_OK
    rows = {r["group"]: r for r in reports.read_csv(out / "iterations.csv")}
    pub = rows["public"]
    assert float(pub["after_redistribution"]) <= float(pub["before_redistribution"])
    for g, r in rows.items():
        if g.startswith("npv_level_"):
            assert float(r["after_redistribution"]) == pytest.approx(float(r["before_redistribution"]),
                                                                     rel=1e-12)
    checks = reports.read_json(out / "run_record.json")["checks"]
    assert all(checks[k] for k in ("totals_preserved", "npv_paths_unchanged", "npv_times_unchanged",
                                   "objective_non_increasing", "public_time_non_increasing"))


def test_iterate_demo_without_chatter(tmp_path, capsys):
    out = tmp_path / "calm"
    assert run("iterate-demo", "preset:sample", "--out", out) == EXIT_OK
    assert "no chattering" in capsys.readouterr().err
    text = (out / "iterations.csv").read_text().splitlines()
    assert text[0] == "group,final"
    assert reports.read_json(out / "run_record.json")["notice"]


def test_console_entry_and_log_variable(tmp_path):
    env = {"MEMROUTE_LOG": "debug", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "memroute.cli", "solve", "preset:chatter", "--out",
                           str(tmp_path)], capture_output=True, text=True, env=env)
    assert proc.returncode == EXIT_OK
    assert "DEBUG memroute.game" in proc.stderr


def test_presets_are_loadable():
    assert preset("chatter").weights == (0.8, 0.2)
    with pytest.raises(ScenarioError):
        preset("nothing")
