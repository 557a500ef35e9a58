import json
from pathlib import Path

import numpy as np
import pytest

from kancl import report
from kancl.cli import grid_from, load_config, main, peaks_configs, run_config_from
from kancl.datasets import MNIST_FILES, write_idx

from synth import blocks


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("mnist")
    train, test = blocks(20, seed=0), blocks(8, seed=1)
    write_idx(d / MNIST_FILES["train_images"][0], train.images)
    write_idx(d / MNIST_FILES["train_labels"][0], train.labels)
    write_idx(d / MNIST_FILES["test_images"][0], test.images)
    write_idx(d / MNIST_FILES["test_labels"][0], test.labels)
    return d


def write_cfg(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


TRAIN_CFG = "model: kan\nwidths: [784, 6, 10]\nkan_mode: effkan\nepochs_per_task: 2\nlr: 3.0e-3\ndecay: 0.8\nbatch_size: 32\n"


def test_train_writes_artifacts(tmp_path, data_dir, capsys):
    out = tmp_path / "run"
    rc = main(["train", "--config", write_cfg(tmp_path, TRAIN_CFG), "--data-dir", str(data_dir), "--out", str(out)])
    assert rc == 0
    names = [p.name for p in out.iterdir()]
    assert sum(n.endswith(".json") for n in names) == 1
    assert sum(n.startswith("confusion_epoch_") for n in names) == 10
    assert "accuracy.svg" in names and "metrics.csv" in names and "model.npz" in names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["network"]["widths"] == [784, 6, 10]
    assert "best final-task accuracy" in capsys.readouterr().out
    assert main(["verify", str(out)]) == 0


def test_env_data_dir(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("KANCL_DATA_DIR", str(data_dir))
    cfg = write_cfg(tmp_path, TRAIN_CFG.replace("epochs_per_task: 2", "epochs_per_task: 1"))
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["config"]["seed"] == 3


@pytest.mark.parametrize("text,msg", [
    (TRAIN_CFG.replace("epochs_per_task: 2", "epochs_per_task: 0"), "epochs_per_task"),
    (TRAIN_CFG + "colour: red\n", "colour"),
    (TRAIN_CFG.replace("model: kan", "model: resnet"), "model"),
    (TRAIN_CFG.replace("decay: 0.8", "decay: 1.5"), "decay"),
    (TRAIN_CFG.replace("widths: [784, 6, 10]", "widths: [784]"), "widths"),
    ("- just\n- a list\n", "mapping"),
    ("model: [unclosed\n", "YAML"),
])
def test_config_errors_exit_1(tmp_path, data_dir, capsys, text, msg):
    rc = main(["train", "--config", write_cfg(tmp_path, text), "--data-dir", str(data_dir), "--out", str(tmp_path)])
    assert rc == 1
    assert msg in capsys.readouterr().err


def test_missing_data_exit_2(tmp_path, capsys):
    rc = main(["train", "--config", write_cfg(tmp_path, TRAIN_CFG), "--data-dir", str(tmp_path / "nope")])
    assert rc == 2
    assert "nope" in capsys.readouterr().err
    assert main(["check-data", "--data-dir", str(tmp_path / "nope")]) == 2


def test_check_data_ok(data_dir, capsys):
    assert main(["check-data", "--data-dir", str(data_dir)]) == 0
    out = capsys.readouterr().out
    assert "train-images-idx3-ubyte" in out and "loaded 200 training" in out


def test_numeric_failure_exit_3(tmp_path, data_dir):
    cfg = write_cfg(tmp_path, "model: mlp\nwidths: [784, 4, 10]\nepochs_per_task: 1\nlr: 1.0e+200\noptimizer: sgd\n")
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["train", "--config", cfg, "--data-dir", str(data_dir), "--out", str(tmp_path / "o")]) == 3


GRID_CFG = ("model: kan\nwidths: [784, 4, 10]\nbatch_size: 32\n"
            "lrs: [1.0e-3, 3.0e-3]\ndecays: [0.8, 1.0]\nepoch_counts: [1, 2]\n")


def test_grid_jobs_identical_and_best(tmp_path, data_dir):
    cfg = write_cfg(tmp_path, GRID_CFG)
    for jobs in ("1", "3"):
        assert main(["grid", "--config", cfg, "--data-dir", str(data_dir), "--out", str(tmp_path / jobs),
                     "--jobs", jobs]) == 0
    a = (tmp_path / "1" / "results.csv").read_text()
    assert a == (tmp_path / "3" / "results.csv").read_text()
    rows = report.read_grid_csv(tmp_path / "1" / "results.csv")
    assert len(rows) == 8
    summary = json.loads((tmp_path / "1" / "grid_summary.json").read_text())
    assert summary["best"]["best_final_task_accuracy"] == max(r["best_final_task_accuracy"] for r in rows)
    assert main(["verify", str(tmp_path / "1")]) == 0


def test_peaks_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "steps_per_task: 30\nG: 40\npoints_per_peak: 40\neval_points: 200\n")
    assert main(["peaks", "--config", cfg, "--out", str(tmp_path / "pk")]) == 0
    subdirs = sorted(p.name for p in (tmp_path / "pk").iterdir() if p.is_dir())
    assert subdirs == ["bias_trainable", "frozen", "scales_bias_trainable", "scales_trainable"]
    for d in subdirs:
        assert (tmp_path / "pk" / d / "fit.svg").exists()
    assert main(["verify", str(tmp_path / "pk")]) == 0
    cfg = write_cfg(tmp_path, "n_peaks: 1\nsteps_per_task: 10\nablations: [frozen]\n", "one.yaml")
    assert main(["peaks", "--config", cfg, "--out", str(tmp_path / "one")]) == 0
    rmse = (tmp_path / "one" / "frozen" / "rmse.csv").read_text().splitlines()
    assert rmse[0] == "after_task,window1,total" and len(rmse) == 3
    bad = write_cfg(tmp_path, "ablations: [nothing]\n", "bad.yaml")
    assert main(["peaks", "--config", bad]) == 1


@pytest.mark.parametrize("text,total", [
    ("model: kan\nwidths: [784, 128, 10]\nkan_mode: cl_ws_trainable\n", 914_688),
    ("model: kan\nwidths: [784, 128, 10]\nkan_mode: cl\n", 813_056),
    ("model: mlp\nwidths: [784, 784, 285, 256, 10]\n", 914_951),
    ("model: convnet\n", 159_661),
])
def test_params(tmp_path, capsys, text, total):
    out = tmp_path / "p.json"
    assert main(["params", "--config", write_cfg(tmp_path, text), "--out", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == total
    assert json.loads(out.read_text()) == doc
    assert main(["verify", str(out)]) == 0


def test_params_rejects_invalid(tmp_path):
    assert main(["params", "--config", write_cfg(tmp_path, "model: kkan\nkan_mode: pykan_full\n")]) == 1


def test_verify_reports_failure(tmp_path, capsys):
    (tmp_path / "summary.json").write_text("{not json")
    assert main(["verify", str(tmp_path / "summary.json")]) == 1
    assert "FAIL" in capsys.readouterr().out


CONFIG_DIR = Path(__file__).parents[1] / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    if path.name.startswith("grid"):
        assert len(grid_from(cfg, None)) in (8, 200)
    elif path.name.startswith("peaks"):
        assert len(peaks_configs(cfg, None)) == 4
    else:
        run_config_from(cfg, None)
