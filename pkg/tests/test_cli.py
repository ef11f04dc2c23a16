import json
import time

import pytest

from gridcascade import SynthSpec, fixture_paths, save_grid, synth_grid
from gridcascade.cli import main

TABLE2 = (2.30, 2.46, 0.68, 1.00)


@pytest.fixture(scope="module")
def small_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("grid")
    g = synth_grid(SynthSpec(n_nodes=30, n_edges=40, alpha=5.0, seed=1))
    save_grid(g, d / "n.csv", d / "e.csv")
    return ["--grid-nodes", str(d / "n.csv"), "--grid-edges", str(d / "e.csv")]


def files_of(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_fit_limits_recovers_model(tmp_path):
    g = synth_grid(SynthSpec(n_nodes=80, n_edges=110, linear_model=TABLE2, seed=3))
    save_grid(g, tmp_path / "n.csv", tmp_path / "e.csv")
    out = tmp_path / "fit"
    code = main(["fit-limits", "--grid-nodes", str(tmp_path / "n.csv"), "--grid-edges", str(tmp_path / "e.csv"),
                 "--out", str(out), "--alphas", "2,5"])
    assert code == 0
    report = json.loads((out / "accuracy.json").read_text())
    assert report["volt_pf"]["r_squared"] == pytest.approx(1.0, abs=1e-12)
    assert set(report) == {"volt_pf", "pf", "pl:2", "pl:5"}
    assert (out / "limits_pl_5.csv").exists()


def test_fit_limits_validation_exits(tmp_path, small_files):
    assert main(["fit-limits", "--grid-nodes", str(tmp_path / "missing.csv"), "--grid-edges",
                 str(tmp_path / "x.csv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["fit-limits", *small_files, "--out", str(tmp_path / "o"), "--alpha", "0"]) == 2


def test_simulate_seed_repeat_identical(tmp_path, small_files):
    args = ["simulate", *small_files, "--sims", "2", "--seed", "4", "--alphas", "1.5,5", "--alpha-trace"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")
    assert main(["simulate", "--config", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "c")]) == 0
    assert files_of(tmp_path / "a") == files_of(tmp_path / "c")


def test_topological_alpha_trace_rejected(tmp_path, small_files, capsys):
    code = main(["simulate", *small_files, "--physics", "topological", "--alpha-trace", "--out", str(tmp_path)])
    assert code == 2 and "alpha traces" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, small_files):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pearl": {"physics": "dc", "colour": "red"}}))
    assert main(["simulate", *small_files, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"pearl": {"load_profile": "timeseries"}}))
    assert main(["simulate", *small_files, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_report_and_tamper(tmp_path, small_files, capsys):
    out = tmp_path / "r"
    assert main(["simulate", *small_files, "--sims", "1", "--alphas", "2", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert "best method (blackout)" in capsys.readouterr().out
    traces = out / "traces.csv"
    traces.write_text(traces.read_text() + "x\n")
    assert main(["report", str(out)]) == 2
    assert "checksum" in capsys.readouterr().err


def test_changed_grid_rejected_on_replay(tmp_path, small_files):
    out = tmp_path / "r"
    assert main(["simulate", *small_files, "--sims", "1", "--alphas", "2", "--out", str(out)]) == 0
    cfg = json.loads((out / "config.json").read_text())
    cfg["grid_hash"] = "0" * 64
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "x")]) == 2


def test_fixture_smoke_run_is_fast(tmp_path):
    nodes, edges = fixture_paths()
    start = time.perf_counter()
    code = main(["simulate", "--grid-nodes", str(nodes), "--grid-edges", str(edges), "--sims", "1",
                 "--alphas", "5", "--out", str(tmp_path)])
    assert code == 0
    assert time.perf_counter() - start < 5.0
