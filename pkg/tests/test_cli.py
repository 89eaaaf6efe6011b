import json
import subprocess
import sys

import numpy as np
import pytest

from locconv import data
from locconv.cli import main
from locconv.experiment import read_csv
from locconv.ltf import load_ltf


def test_param_count_li_cnn(capsys):
    assert main(["param-count", "--model", "li_cnn", "--balls-scale"]) == 0
    assert capsys.readouterr().out.strip() == "237841"


def test_param_count_describe(capsys):
    assert main(["param-count", "--model", "CNN", "--W", "8", "--H", "8", "--T", "4", "--describe"]) == 0
    out = capsys.readouterr().out
    assert "C(5×5×30)" in out


def test_unknown_flag_exits_2():
    proc = subprocess.run([sys.executable, "-m", "locconv", "train", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_unreadable_input_exits_1(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["embed-grid", "--csv", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_config_from_other_command_rejected(tmp_path):
    assert main(["gen-windgrid", "--W", "3", "--H", "3", "--T", "20", "--out", str(tmp_path / "w")]) == 0
    assert main(["gen-balls", "--config", str(tmp_path / "w" / "config.json")]) == 1


def test_gen_balls_writes_three_datasets(tmp_path):
    out = tmp_path / "d"
    assert main(["gen-balls", "--train", "6", "--test", "3", "--bounce", "2", "--seed", "1", "--out", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    shapes = [load_ltf(out / meta[k]["frames"]).shape for k in ("train", "test_all", "test_bounce")]
    assert shapes == [(6, 30, 30, 30), (3, 30, 30, 30), (2, 30, 30, 30)]
    assert json.loads((out / "config.json").read_text())["command"] == "gen-balls"


def test_train_then_eval_reproduces_metrics(tmp_path):
    gen = tmp_path / "wind"
    assert main(["gen-windgrid", "--W", "4", "--H", "4", "--T", "90", "--out", str(gen)]) == 0
    run = tmp_path / "run"
    assert main(["train", "--task", "windgrid", "--models", "PR,LI_CNN", "--W", "4", "--H", "4", "--l", "3",
                 "--epochs", "2", "--seeds", "0,1", "--batch-size", "16", "--data-dir", str(gen),
                 "--out", str(run)]) == 0
    results = read_csv(run / "results.csv")
    assert [r["model"] for r in results] == ["PR", "PR", "LI_CNN", "LI_CNN"]
    assert {"valid_rmse", "test_rmse", "valid_mae", "test_mae", "epochs", "params", "wall_ms"} <= set(results[0])
    assert all(r["wall_ms"] == "0" for r in results)
    assert main(["eval", "--run", str(run)]) == 0
    for r, e in zip(results, read_csv(run / "eval.csv")):
        assert float(r["test_rmse"]) == pytest.approx(float(e["test_rmse"]), rel=1e-12)
    for name in ("aggregate.csv", "learning_curves.csv", "learning_curves.svg", "curves_raw.csv"):
        assert (run / name).exists()


def test_embed_grid_outputs(tmp_path):
    series = np.random.default_rng(0).normal(size=(5, 300))
    src = tmp_path / "stations.csv"
    from locconv.embedding import write_station_csv
    write_station_csv(src, series)
    out = tmp_path / "e"
    assert main(["embed-grid", "--csv", str(src), "--W", "2", "--H", "3", "--pop", "10",
                 "--generations", "5", "--out", str(out)]) == 0
    grid = np.loadtxt(out / "assignment.csv", delimiter=",", dtype=int)
    assert grid.shape == (2, 3) and sorted(grid.ravel()) == [-1, 0, 1, 2, 3, 4]
    assert len((out / "fitness_trace.csv").read_text().splitlines()) == 7
    assert np.loadtxt(out / "mi_matrix.csv", delimiter=",", skiprows=1).shape == (5, 5)


def test_windgrid_cli_matches_library(tmp_path):
    assert main(["gen-windgrid", "--W", "3", "--H", "4", "--T", "25", "--seed", "5", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    ds = data.load_dataset(tmp_path, meta["series"])
    ref = data.generate_windgrid(3, 4, 25, 1.0, seed=5)
    assert np.array_equal(ds.frames, ref.frames.astype(np.float32).astype(np.float64))
