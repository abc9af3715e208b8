"""Design-choice toggle grid: mask losses, the dynamic prior, single-stage.

Each arm retrains at a reduced budget and reports the quantities the toggles
act on: the mean mask value trajectory for the mask-loss arms, and rollout
control error for the training-strategy arms.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import TrainConfig, LossWeights
from .trainer import train_stage1, train_stage2, load_checkpoint

ARM_NAMES = ("full", "no_bg", "no_fg", "no_bin", "fixed_prior", "single_stage")


def _arm_config(arm: str, iterations: int, seed: int, overrides: dict) -> TrainConfig:
    weights = LossWeights()
    if arm == "no_bg":
        weights.use_loss_bg = False
    elif arm == "no_fg":
        weights.use_loss_fg = False
    elif arm == "no_bin":
        weights.use_loss_bin = False
    elif arm == "fixed_prior":
        weights.fixed_prior = 0.15
    cfg = TrainConfig(stage=1, iterations=iterations, seed=seed, weights=weights)
    for key, val in overrides.items():
        if key.startswith("train.") and key != "train.stage":
            setattr(cfg, key[len("train."):], val)
        elif key.startswith("loss."):
            setattr(cfg.weights, key[len("loss."):], val)
    return cfg


def mean_mask_trail(metrics_csv: Path, window: int = 50) -> float:
    """Mean of the mask_mean scalar over the last `window` logged iterations."""
    by_iter: dict[int, float] = {}
    with metrics_csv.open() as fh:
        for row in csv.DictReader(fh):
            if row["loss_name"] == "mask_mean":
                by_iter[int(row["iter"])] = float(row["value"])
    tail = [by_iter[k] for k in sorted(by_iter)[-window:]]
    return float(np.mean(tail)) if tail else float("nan")


def control_error(ckpt_path: Path, data_root: str | Path, clip_ids: list[str],
                  tau: float = 0.1, steps: int = 8) -> float:
    """Positional-control RMSED over short commanded rollouts."""
    from .control import ControlParams
    from .data import load_clip
    from .metrics import (change_trajectory, commanded_positions,
                          midpoint_trajectory, rmsed)
    from .trainer import rollout

    models, _ = load_checkpoint(ckpt_path)
    models.eval_()
    errs = []
    rng = np.random.Generator(np.random.PCG64(0))
    for clip_id in clip_ids:
        clip = load_clip(data_root, clip_id)
        if not clip.gt_centers:
            continue
        start = clip.gt_centers[0]
        h, w = clip.frames[0].shape[-2:]
        cmds = []
        x, y = start
        for _ in range(steps):
            dx = int(rng.integers(2, 5)) * (1 if x < w / 2 else -1)
            dy = int(rng.integers(-2, 3))
            cmds.append((dx, dy))
            x += dx
            y += dy
        controls = [ControlParams(mode="positional", dx=c[0], dy=c[1]) for c in cmds]
        frames, _ = rollout(models, clip.frames[0], controls)
        gt_mid = midpoint_trajectory(commanded_positions(start, cmds))
        meas = change_trajectory([clip.frames[0]] + frames, tau)
        errs.append(rmsed(gt_mid, meas))
    return float(np.mean(errs)) if errs else float("nan")


def run_ablation_grid(data_root: str | Path, out_dir: str | Path, *,
                      iterations: int = 400, seed: int = 0,
                      arms: list[str] | None = None,
                      overrides: dict | None = None,
                      eval_clips: int = 8) -> dict:
    from .data import list_clip_ids

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arms = list(arms or ARM_NAMES)
    overrides = overrides or {}
    clip_ids = list_clip_ids(data_root)[:eval_clips]
    report: dict[str, dict] = defaultdict(dict)

    for arm in arms:
        if arm not in ARM_NAMES:
            raise ValueError(f"unknown ablation arm {arm!r}")
        arm_dir = out / arm
        if arm == "single_stage":
            cfg = _arm_config("full", iterations, seed, overrides)
            cfg.stage = 2
            cfg.single_stage = True
            ckpt = train_stage2(cfg, data_root, arm_dir, None)
            report[arm]["rmsed_px"] = control_error(ckpt, data_root, clip_ids)
        elif arm == "full":
            cfg = _arm_config(arm, iterations, seed, overrides)
            ckpt1 = train_stage1(cfg, data_root, arm_dir / "stage1")
            cfg2 = _arm_config(arm, iterations, seed, overrides)
            cfg2.stage = 2
            ckpt2 = train_stage2(cfg2, data_root, arm_dir / "stage2", ckpt1)
            report[arm]["mean_mask"] = mean_mask_trail(arm_dir / "stage1" / "metrics.csv")
            report[arm]["rmsed_px"] = control_error(ckpt2, data_root, clip_ids)
        else:
            cfg = _arm_config(arm, iterations, seed, overrides)
            train_stage1(cfg, data_root, arm_dir)
            report[arm]["mean_mask"] = mean_mask_trail(arm_dir / "metrics.csv")
    return dict(report)
