import csv
import json

import numpy as np
import pytest

from dersim.cli import EXIT_GATE, EXIT_OK, EXIT_USAGE, default_workers, main
from dersim.io import read_json, read_obj_counts, read_trace_csv


def _sim_config(tmp_path):
    doc = {
        "rod": {"nodes": [[0.1 * i, 0.0, 1.0] for i in range(6)]},
        "params": {"damping": 0.2},
        "boundary": {"fixed_nodes": [0], "fixed_positions": [[0, 0, 1.0]]},
        "dt": 0.002, "steps": 30, "record_every": 10,
    }
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(doc))
    return path


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["validate", "buckling", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
    assert main(["fling", "eval", "--out", str(tmp_path / "f")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus_key": 1}))
    assert main(["validate", "michell", "--config", str(bad), "--out", str(tmp_path / "m")]) == EXIT_USAGE


def test_thread_override(monkeypatch):
    monkeypatch.setenv("DERSIM_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("DERSIM_THREADS", "zero")
    with pytest.raises(Exception):
        default_workers()


def test_simulate_then_export(tmp_path):
    trace = tmp_path / "out" / "trace.csv"
    assert main(["simulate", "--config", str(_sim_config(tmp_path)), "--out", str(trace)]) == EXIT_OK
    frames = read_trace_csv(trace)
    assert len(frames) == 4 and frames[0][1].shape == (6, 3)
    manifest = read_json(tmp_path / "out" / "trace.manifest.json")
    assert manifest["outputs"] == [str(trace)]

    obj = tmp_path / "trace.obj"
    assert main(["export", str(trace), "--format", "obj", "--out", str(obj)]) == EXIT_OK
    assert read_obj_counts(obj) == [(6, 5)] * 4
    again = tmp_path / "again.csv"
    assert main(["export", str(trace), "--format", "csv", "--out", str(again)]) == EXIT_OK
    assert again.read_text() == trace.read_text()
    assert main(["export", str(trace), "--format", "ply", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_simulate_is_reproducible(tmp_path):
    cfg = _sim_config(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", str(cfg), "--out", str(a)])
    main(["simulate", "--config", str(cfg), "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_bench_single_repeat_emits_all_columns(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--n", "6", "8", "--repeats", "1", "--steps", "3", "--out", str(out)]) == EXIT_OK
    with open(out / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["n", "time_without", "time_with", "overhead_pct"]
    assert [int(r["n"]) for r in rows] == [6, 8]
    for r in rows:
        assert all(np.isfinite(float(v)) for v in r.values())
    assert read_json(out / "manifest.json")["config"]["repeats"] == 1


def test_validate_michell_gate(tmp_path):
    # a coarse ring, one ratio: exercises the sweep CSV and both gate outcomes
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"twist_step": 0.5, "steps_per_increment": 300, "max_deviation_pct": 100.0}))
    out = tmp_path / "m"
    code = main(["validate", "michell", "--config", str(cfg), "--n", "12", "--ratios", "1.5", "--out", str(out)])
    assert code == EXIT_OK
    with open(out / "michell.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and float(rows[0]["theta_measured"]) > 0
    summary = read_json(out / "summary.json")
    assert summary["pass"]
    cfg.write_text(json.dumps({"twist_step": 0.5, "steps_per_increment": 300, "max_deviation_pct": 0.0}))
    assert main(["validate", "michell", "--config", str(cfg), "--n", "12", "--ratios", "1.5",
                 "--out", str(out)]) == EXIT_GATE


def test_fling_train_and_eval(tmp_path):
    tc = tmp_path / "tc.json"
    tc.write_text(json.dumps({"epochs": 2, "eval_every": 1, "eval_episodes": 1}))
    out = tmp_path / "f"
    args = ["fling", "train", "--train-config", str(tc), "--episodes", "4", "--batch-size", "2",
            "--seed", "3", "--out", str(out)]
    assert main(args) == EXIT_OK
    first = (out / "checkpoint.json").read_text()
    assert main(args) == EXIT_OK
    assert (out / "checkpoint.json").read_text() == first
    with open(out / "learning_curve.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
    manifest = read_json(out / "manifest.json")
    assert set(manifest["outputs"]) >= {str(out / "checkpoint.json"), str(out / "learning_curve.csv")}

    ev = tmp_path / "e"
    code = main(["fling", "eval", "--policy", str(out / "checkpoint.json"), "--episodes", "2",
                 "--export-traces", "--min-success", "0.0", "--out", str(ev)])
    assert code == EXIT_OK
    assert sorted(p.name for p in (ev / "traces").iterdir()) == ["episode_000.csv", "episode_001.csv"]
    lines = (ev / "episodes.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "reward" in json.loads(lines[0])
    summary = read_json(ev / "summary.json")
    assert 0.0 <= summary["success_rate"] <= 1.0
    # an untrained policy cannot clear a strict floor
    assert main(["fling", "eval", "--policy", str(out / "policy.json"), "--episodes", "1",
                 "--min-success", "1.0", "--out", str(ev)]) == EXIT_GATE
