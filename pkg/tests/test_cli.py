import json
import subprocess
import sys

import pytest

from lifeevents import config
from lifeevents.cli import main
from lifeevents.config import ConfigError, RunConfig

from conftest import SMALL_CONFIG


def test_small_pipeline_happy_path(small_runs):
    code, out = small_runs[0]
    assert code == 0
    reports = out / "reports"
    for name in ("table_random.txt", "table_by_user.txt", "metrics_random_embedding.json",
                 "metrics_random_aggregated.json", "effects.csv", "effects_overall.json", "effects_by_category.json"):
        assert (reports / name).exists(), name
    table = (reports / "table_random.txt").read_text().splitlines()
    assert [line.split()[0] for line in table[2:]] == ["Random", "Embedding", "Aggregated"]
    assert (out / "artifacts" / "classifier.json").exists()
    meta = json.loads((reports / "metrics_random_embedding.json").read_text())["meta"]
    assert meta["config_hash"] == RunConfig.load(SMALL_CONFIG).config_hash()


def test_reports_byte_identical_across_runs(small_runs):
    (_, a), (_, b) = small_runs
    files = sorted(p.relative_to(a / "reports") for p in (a / "reports").iterdir())
    assert files
    for f in files:
        assert (a / "reports" / f).read_bytes() == (b / "reports" / f).read_bytes(), f


def test_report_refuses_hash_mismatch(small_runs, capsys):
    _, out = small_runs[0]
    code = main(["report", "--config", str(SMALL_CONFIG), "--seed", "8", "--out", str(out)])
    assert code == 2
    assert "config hash" in capsys.readouterr().err


def test_missing_input_exits_2_with_path(tmp_path, capsys):
    code = main(["ingest", "--config", str(SMALL_CONFIG), "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 2
    assert str(tmp_path / "data") in err


def test_bad_configs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nk_fold: 3\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 2
    noseed = tmp_path / "noseed.yaml"
    noseed.write_text("k_folds: 3\n")
    assert main(["synth", "--config", str(noseed), "--out", str(tmp_path)]) == 2
    assert main(["synth", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["synth", "--config", str(SMALL_CONFIG), "--threads", "0", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_3(tmp_path, monkeypatch):
    import lifeevents.cli as cli

    def boom(*a):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.HANDLERS, "synth", boom)
    assert main(["synth", "--config", str(SMALL_CONFIG), "--out", str(tmp_path)]) == 3


def test_config_hash_ignores_paths_and_tracks_seed():
    a = RunConfig.load(SMALL_CONFIG)
    b = RunConfig.from_dict({**a.to_dict(), "paths": {"data": "/elsewhere", "artifacts": "x", "reports": "y"}})
    assert a.config_hash() == b.config_hash()
    b.seed += 1
    assert a.config_hash() != b.config_hash()
    assert config.stage_seed(1, "hmm") == config.stage_seed(1, "hmm") != config.stage_seed(1, "synth")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": 1, "k_folds": 1})


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "lifeevents.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "lifeevents" in res.stdout
