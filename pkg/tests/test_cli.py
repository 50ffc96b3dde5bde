import json

import pytest

from linconn.cli import main

SMALL = {
    "stream": {"num_classes": 4, "num_tasks": 2, "input_dim": 6, "per_class_train": 30, "per_class_test": 20},
    "train": {"epochs": 2, "batch_size": 16, "lr_milestones": [1]},
    "hidden": [8],
    "save_checkpoints": False,
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_run_metrics_export(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_file), "--seed", "3", "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    snapshot = json.loads((out / "config.snapshot").read_text())
    assert snapshot["stream"]["seed"] == 3 and snapshot["output_dir"] == str(out)

    assert main(["metrics", "--record", str(out)]) == 0
    assert json.loads(capsys.readouterr().out) == report

    assert main(["export", "--record", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out.strip() == str(out / "metrics.csv")
    assert (out / "metrics.csv").read_text().startswith("metric,task,value")
    assert main(["export", "--record", str(out), "--format", "json"]) == 0
    assert "matrix" in json.loads(capsys.readouterr().out)


def test_overrides_take_precedence(cfg_file, tmp_path):
    out = tmp_path / "run"
    args = ["run", "--config", str(cfg_file), "--out", str(out), "--variant", "fixed-beta", "--beta", "0.25",
            "--set", "train.epochs=1", "--set", "joint_oracle=false"]
    assert main(args) == 0
    snap = json.loads((out / "config.snapshot").read_text())
    assert snap["variant"] == "fixed-beta" and snap["beta"] == 0.25
    assert snap["train"]["epochs"] == 1 and snap["joint_oracle"] is False


def test_multi_seed_writes_summary(cfg_file, tmp_path, capsys):
    out = tmp_path / "multi"
    assert main(["run", "--config", str(cfg_file), "--seed", "0", "--seed", "1", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["seeds"] == [0, 1]
    assert (out / "summary.json").exists() and (out / "seed1" / "matrix.csv").exists()


def test_sweep(cfg_file, capsys):
    assert main(["sweep", "--config", str(cfg_file), "--grid", "3", "--set", "joint_oracle=false"]) == 0
    assert capsys.readouterr().out.startswith("task 1:")


def test_bad_config_exits_nonzero(cfg_file, capsys):
    assert main(["run", "--config", str(cfg_file), "--beta", "0.5"]) == 2
    assert "beta" in capsys.readouterr().err


def test_stage_failure_names_stage(cfg_file, tmp_path, capsys, monkeypatch):
    from linconn import runner

    def broken(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(runner, "accumulate_covariance", broken)
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "x")]) == 1
    assert "covariance_task0" in capsys.readouterr().err
    assert (tmp_path / "x" / "FAILED").exists()
