from __future__ import annotations

import json
import math
from pathlib import Path

import pytest
import torch
from PIL import Image

from masksteer.cli import main
from masksteer.data import mask_to_uint8

from test_data import tree_digest
from conftest import disk_mask


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_synth_data_deterministic_trees(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth-data", "--out", a, "--seed", "7", "--n-clips", "3",
               "--clip-len", "3") == 0
    assert run("synth-data", "--out", b, "--seed", "7", "--n-clips", "3",
               "--clip-len", "3") == 0
    assert tree_digest(a) == tree_digest(b)
    assert (a / "run_manifest.json").exists()


def test_synth_data_invalid_config_nonzero(tmp_path, capsys):
    rc = run("synth-data", "--out", tmp_path / "x", "--radius-min", "40",
             "--radius-max", "40")
    assert rc != 0
    assert "does not fit" in capsys.readouterr().err


def test_train_stage2_without_checkpoint_fails(tmp_path, capsys):
    data = tmp_path / "d"
    assert run("synth-data", "--out", data, "--n-clips", "2", "--clip-len", "3") == 0
    rc = run("train", "--stage", "2", "--data", data, "--out", tmp_path / "o")
    assert rc != 0
    assert "--from-checkpoint" in capsys.readouterr().err


def test_train_then_eval_writes_report(tmp_path, capsys):
    data = tmp_path / "d"
    assert run("synth-data", "--out", data, "--n-clips", "3", "--clip-len", "3",
               "--seed", "1") == 0
    out = tmp_path / "run"
    assert run("train", "--stage", "1", "--data", data, "--out", out,
               "--iters", "4", "--set", "train.batch_size=2") == 0
    ckpt = out / "ckpt_stage1_final.pt"
    assert ckpt.exists()
    assert (out / "run_manifest.json").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["train.iterations"] == 4
    assert "data" in manifest["inputs"]

    report_path = tmp_path / "report.json"
    assert run("eval", "--ckpt", ckpt, "--data", data, "--out", report_path,
               "--max-clips", "2") == 0
    report = json.loads(report_path.read_text())
    assert set(report) == {"rmsed_px", "rmsed_norm", "mean_iou", "mean_psnr",
                           "n_clips"}
    assert report["n_clips"] == 2


def test_train_stage2_via_cli(tmp_path):
    data = tmp_path / "d"
    assert run("synth-data", "--out", data, "--n-clips", "2", "--clip-len", "3") == 0
    out1 = tmp_path / "s1"
    assert run("train", "--stage", "1", "--data", data, "--out", out1,
               "--iters", "3", "--set", "train.batch_size=2") == 0
    out2 = tmp_path / "s2"
    assert run("train", "--stage", "2", "--data", data, "--out", out2,
               "--from-checkpoint", out1 / "ckpt_stage1_final.pt",
               "--iters", "2", "--set", "train.batch_size=2",
               "--set", "train.fit_iters=10",
               "--set", "train.fit_skip_residual=1.0") == 0
    assert (out2 / "ckpt_stage2_final.pt").exists()


def test_fit_control_command(tmp_path, capsys):
    m1 = disk_mask(64, 25.0, 30.0, 9, dtype=torch.float32)
    m2 = torch.zeros_like(m1)
    m2[:, 4:] = m1[:, :-4]   # shift +4 px in x
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    Image.fromarray(mask_to_uint8(m1), mode="L").save(a)
    Image.fromarray(mask_to_uint8(m2), mode="L").save(b)
    out = tmp_path / "theta.json"
    assert run("fit-control", "--mask-a", a, "--mask-b", b,
               "--mode", "positional", "--iters", "500", "--out", out) == 0
    rec = json.loads(out.read_text())
    assert abs(rec["dx"] - 4.0) < 0.5 and abs(rec["dy"]) < 0.5
    assert rec["residual"] < 0.01


def test_rollout_command(tmp_path):
    data = tmp_path / "d"
    assert run("synth-data", "--out", data, "--n-clips", "2", "--clip-len", "3") == 0
    out1 = tmp_path / "s1"
    assert run("train", "--stage", "1", "--data", data, "--out", out1,
               "--iters", "2", "--set", "train.batch_size=2") == 0
    controls = [{"mode": "positional", "dx": 2, "dy": 0}] * 3
    cfile = tmp_path / "controls.json"
    cfile.write_text(json.dumps(controls))
    out = tmp_path / "ro"
    assert run("rollout", "--ckpt", out1 / "ckpt_stage1_final.pt",
               "--frame", data / "clip_0000" / "000000.png",
               "--controls", cfile, "--out", out) == 0
    assert sorted(p.name for p in out.glob("frame_*.png")) == [
        "frame_000.png", "frame_001.png", "frame_002.png"]
    assert len(list(out.glob("mask_*.png"))) == 3


def test_missing_checkpoint_is_diagnosed(tmp_path, capsys):
    rc = run("rollout", "--ckpt", tmp_path / "nope.pt",
             "--frame", tmp_path / "f.png", "--controls", tmp_path / "c.json",
             "--out", tmp_path / "o")
    assert rc != 0
    assert "checkpoint" in capsys.readouterr().err


def test_mimic_command(tmp_path):
    data = tmp_path / "d"
    assert run("synth-data", "--out", data, "--n-clips", "2", "--clip-len", "3") == 0
    out1 = tmp_path / "s1"
    assert run("train", "--stage", "1", "--data", data, "--out", out1,
               "--iters", "2", "--set", "train.batch_size=2") == 0
    out = tmp_path / "mi"
    assert run("mimic", "--ckpt", out1 / "ckpt_stage1_final.pt",
               "--driving", data / "clip_0000",
               "--target-frame", data / "clip_0001" / "000000.png",
               "--out", out) == 0
    assert len(list(out.glob("frame_*.png"))) == 2
