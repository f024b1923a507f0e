import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from igrsr import cli
from igrsr.trainer import TrainingDivergence

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.toml"


def run(*args):
    return cli.main([str(a) for a in args])


def test_every_command_runs(tmp_path):
    assert run("synth", "--config", SMOKE, "--out", tmp_path / "synth") == 0
    assert (tmp_path / "synth" / "dataset.json").exists()
    assert run("pretrain", "--config", SMOKE, "--out", tmp_path / "pre") == 0
    backbone = tmp_path / "pre" / "backbone_seed0.npz"
    assert run("train", "--config", SMOKE, "--out", tmp_path / "train", "--backbone", backbone) == 0
    assert run("eval", "--config", SMOKE, "--out", tmp_path / "eval", "--checkpoint", tmp_path / "train" / "igrsr_seed0.npz") == 0
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert set(report["metrics"]) == {"val", "test"}
    for cmd in ("ablate", "noise", "sweep"):
        assert run(cmd, "--config", SMOKE, "--out", tmp_path / cmd) == 0
        report = json.loads((tmp_path / cmd / "report.json").read_text())
        assert report["schema_version"] == "1.0" and report["kind"] in (cmd, "ablation")
        logged = {json.loads(line)["run_id"] for line in (tmp_path / cmd / "train_log.jsonl").read_text().splitlines()}
        assert {r["run_id"] for r in report["runs"]} <= logged
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "sweep.csv")))
    assert len(rows) == 2 and list(rows[0]) == ["k", "m", "seed", "recall@10", "ndcg@10"]


def test_sweep_shares_one_backbone(tmp_path):
    run("sweep", "--config", SMOKE, "--out", tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["backbone_fingerprints"]) == 1
    assert len(report["grid"]) == 2


def test_report_is_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        assert run("train", "--config", SMOKE, "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_zero_noise_reproduces_clean_runs(tmp_path):
    cfg = tmp_path / "zero.toml"
    cfg.write_text(SMOKE.read_text().replace("seeds = [0]", "seeds = [0]\nnoise_ratio = 0.0"))
    assert run("noise", "--config", cfg, "--out", tmp_path / "out") == 0
    robust = json.loads((tmp_path / "out" / "report.json").read_text())["robustness"]
    for entry in robust.values():
        assert entry["relative_drop"] == 0.0


def test_exit_codes(tmp_path, monkeypatch):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nprefix_tokens = 99\n")
    assert run("train", "--config", bad, "--out", tmp_path / "x") == 2
    missing = tmp_path / "missing.toml"
    missing.write_text('[data]\npath = "/nonexistent/log.tsv"\n')
    assert run("synth", "--config", missing, "--out", tmp_path / "y") == 3
    garbage = tmp_path / "log.tsv"
    garbage.write_text("only\ttwo\n")
    cfg = tmp_path / "garbage.toml"
    cfg.write_text(f'[data]\npath = "{garbage}"\nformat = "tsv"\n')
    assert run("synth", "--config", cfg, "--out", tmp_path / "z") == 3

    def diverge(*a, **k):
        raise TrainingDivergence("nan")

    monkeypatch.setattr("igrsr.experiments.fit", diverge)
    assert run("train", "--config", SMOKE, "--out", tmp_path / "w") == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "igrsr", "synth", "--config", str(SMOKE), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "synth"
