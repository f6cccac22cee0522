import json

import pytest

from spectrumrl import cli, harness

TINY = {
    "K": 1,
    "N": 2,
    "M": 2,
    "episodes": 1,
    "slots_per_episode": 40,
    "test_deployments": 1,
    "test_slots": 20,
    "test_warmup": 2,
    "hidden": [8],
    "batch_size": 8,
    "warmup": 8,
    "memory_size": 200,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def test_train_then_test(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--seed", "2", "--out", str(out), "--scheme", "proposed"]) == 0
    for name in ("training_curve.csv", "training_curve.png", "checkpoint.npz", "config.json"):
        assert (out / name).exists(), name
    code = cli.main(
        ["test", "--config", config, "--seed", "2", "--out", str(out), "--scheme", "proposed,random", "--dump"]
    )
    assert code == 0
    rows = harness.read_table(out / "test_table.csv")
    assert [r["scheme"] for r in rows] == ["proposed", "random"]
    assert rows[0]["q_output_size"] == "2 + 1"
    assert (out / "test_table.png").stat().st_size > 0
    assert (out / "metrics_dump.csv").exists()
    assert "sum-rate/link" in capsys.readouterr().out


def test_missing_checkpoint_exit_code(tmp_path, config, capsys):
    code = cli.main(["test", "--config", config, "--out", str(tmp_path / "empty"), "--scheme", "joint"])
    assert code == 2
    assert "checkpoint" in capsys.readouterr().err


def test_unknown_scheme_exit_code(tmp_path, config):
    assert cli.main(["test", "--config", config, "--out", str(tmp_path), "--scheme", "greedy"]) == 2


def test_benchmark_and_table(tmp_path, config):
    out = tmp_path / "bench"
    assert cli.main(["benchmark", "--config", config, "--seed", "0", "--out", str(out), "--workers", "1"]) == 0
    rows = harness.read_table(out / "test_table.csv")
    assert [r["scheme"] for r in rows] == list(harness.SCHEMES)
    assert (out / "proposed" / "checkpoint.npz").exists()
    assert (out / "joint" / "training_curve.csv").exists()
    assert (out / "training_curves.png").exists()
    merged = tmp_path / "merged"
    assert cli.main(["table", "--out", str(merged), str(out)]) == 0
    assert harness.read_table(merged / "test_table.csv") == rows
    assert (merged / "test_table.png").exists()


def test_benchmark_is_reproducible(tmp_path, config):
    for name in ("a", "b"):
        args = ["benchmark", "--config", config, "--seed", "5", "--out", str(tmp_path / name)]
        assert cli.main(args + ["--scheme", "joint,random", "--workers", "2"]) == 0
    for f in ("test_table.csv", "joint/training_curve.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
