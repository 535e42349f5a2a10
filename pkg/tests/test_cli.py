import json
import subprocess
import sys

import pytest

from ovreserve.cli import main


def test_simulate_train_evaluate(tmp_path, capsys):
    data = tmp_path / "sim.csv"
    model = tmp_path / "model.json"
    assert main(["simulate", "--n", "300", "--seed", "3", "--out", str(data)]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grids": {"sigma": [0.1], "lam": [0.01], "max_iters": 10}, "n_train": 200, "n_valid": 100}))
    assert main(["train", "--method", "ov-linear", "--data", str(data), "--config", str(cfg), "--seed", "1", "--out", str(model)]) == 0
    assert model.with_suffix(".trace.png").exists()
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--data", str(data)]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == "n,revenue,oracle_revenue,pct_of_max"
    assert 0 < float(row.split(",")[3]) <= 100


def test_experiment_writes_report(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"method": "nof", "replications": 2, "data": {"simulated": {"n_total": 400}},
                               "n_train": 200, "n_valid": 100, "n_test": 100}))
    out = tmp_path / "rep"
    assert main(["experiment", "--config", str(cfg), "--seed", "5", "--out", str(out), "-q"]) == 0
    assert "nof" in capsys.readouterr().out
    res = json.loads((out / "results.json").read_text())
    assert res["config"]["seed"] == 5 and len(res["results"]["nof"]["test_pct"]) == 2
    for name in ("replications.csv", "summary.txt", "timings.json", "replications.png"):
        assert (out / name).exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--model", "/nonexistent.json", "--data", "/nonexistent.csv"],
        ["experiment", "--method", "bogus", "--out", "/tmp/never"],
        ["train", "--method", "ov-linear", "--out", "/tmp/never.json"],
    ],
)
def test_errors_exit_nonzero(argv, capsys):
    assert main(argv) != 0
    assert "error" in capsys.readouterr().err


def test_module_entry_point_usage_error():
    r = subprocess.run([sys.executable, "-m", "ovreserve.cli"], capture_output=True, text=True)
    assert r.returncode != 0 and "usage" in r.stderr
