import json
import subprocess
import sys

import numpy as np
import pytest

from gmra_regression import generate, save_csv
from gmra_regression.cli import check_acceptance, main

from helpers import make_spec


@pytest.fixture()
def files(tmp_path):
    spec = make_spec({"kind": "sphere", "d": 2, "D": 4}, {"kind": "smooth_sine"}, 1500, 0.05,
                     seed=1)
    save_csv(generate(spec), tmp_path / "train.csv")
    q = generate(make_spec({"kind": "sphere", "d": 2, "D": 4}, {"kind": "smooth_sine"}, 200,
                           seed=2, embedding_seed=1))
    save_csv(q, tmp_path / "query.csv")
    return tmp_path


def test_fit_then_predict(files):
    model = files / "model.json"
    assert main(["fit", "--data", str(files / "train.csv"), "--mode", "adaptive", "--order", "1",
                 "-d", "2", "--out", str(model)]) == 0
    assert json.loads(model.read_text())["format"] == "gmra-regression-model"
    out = files / "pred.csv"
    assert main(["predict", "--model", str(model), "--points", str(files / "query.csv"),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "y_pred" and len(lines) == 201
    pred = np.array(lines[1:], dtype=float)
    truth = np.loadtxt(files / "query.csv", delimiter=",", skiprows=1)[:, -1]
    assert np.mean((pred - truth) ** 2) < 0.3 * np.var(truth)


def test_uniform_fit_with_rate_parameters(files):
    model = files / "u.json"
    assert main(["fit", "--data", str(files / "train.csv"), "--mode", "uniform", "--order", "0",
                 "-d", "2", "--s", "1", "--mu", "0.5", "--out", str(model)]) == 0
    data = json.loads(model.read_text())
    assert data["partition"]["kind"] == "uniform"


def test_bad_inputs_exit_with_code_2(files, capsys):
    (files / "bad.csv").write_text("x1,y\n1,nan\n")
    assert main(["fit", "--data", str(files / "bad.csv"), "-d", "1",
                 "--out", str(files / "m.json")]) == 2
    assert "row 2" in capsys.readouterr().err
    assert main(["predict", "--model", str(files / "missing.json"),
                 "--points", str(files / "query.csv"), "--out", str(files / "p.csv")]) == 2


def write_config(path, acceptance):
    cfg = {
        "synthetic": {"manifold": {"kind": "affine", "d": 1, "D": 3},
                      "function": {"kind": "smooth_sine"}, "sigma": 0.1},
        "n_grid": [500, 1000, 2000], "repetitions": 1, "n_test": 500, "order": 1,
        "mode": "adaptive", "acceptance": acceptance,
    }
    path.write_text(json.dumps(cfg))
    return path


def test_bench_run_and_slope(tmp_path, capsys):
    config = write_config(tmp_path / "cfg.json", {"slope_max": 0.0})
    csv_path, json_path = tmp_path / "r.csv", tmp_path / "r.json"
    assert main(["bench", "run", "--config", str(config), "--csv", str(csv_path),
                 "--json", str(json_path), "--assert"]) == 0
    assert "acceptance: pass" in capsys.readouterr().out
    summary = json.loads(json_path.read_text())
    assert summary["slope"] < 0
    assert main(["bench", "slope", "--input", str(csv_path), "--d", "1"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["slope"] == pytest.approx(summary["slope"])


def test_bench_assert_fails_on_violation(tmp_path):
    config = write_config(tmp_path / "cfg.json", {"mse_max": 1e-12})
    assert main(["bench", "run", "--config", str(config), "--assert"]) == 1
    # without --assert the same run succeeds
    assert main(["bench", "run", "--config", str(config)]) == 0


def test_check_acceptance():
    summary = {"slope": -0.6, "slope_note": "", "mse": {"10": {"mean": 0.5}},
               "seconds": {"10": {"seconds_total": 3.0}}}
    assert check_acceptance(summary, {"slope_min": -1, "slope_max": -0.45}) == []
    assert len(check_acceptance(summary, {"slope_max": -0.7, "mse_max": 0.1,
                                          "seconds_max": 1.0})) == 3
    assert check_acceptance({**summary, "slope": None}, {"slope_min": -1})


def test_console_module_entry(files):
    res = subprocess.run([sys.executable, "-m", "gmra_regression", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "bench" in res.stdout
