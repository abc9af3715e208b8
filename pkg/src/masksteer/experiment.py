"""The desk-scale end-to-end experiment: data recipe, training, evaluation.

One canonical configuration (64x64 sprites, ~2000 clips, stage I 3000 iters,
stage II 2000 iters) with held-out evaluation of mask quality, positional
control precision and background stability. The acceptance suite runs this
module; the README shows how to reproduce it from the CLI.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .control import ControlParams, binarize
from .data import SpriteConfig, generate_sprite_dataset, list_clip_ids, load_clip
from .metrics import (change_trajectory, commanded_positions, mask_iou,
                      midpoint_trajectory, rmsed)
from .trainer import ModelBundle, load_checkpoint, rollout, train_stage1, train_stage2

log = logging.getLogger(__name__)

HOLDOUT_CLIPS = 100
EVAL_MARGIN = 16   # commanded trajectories keep this many px from the border


def desk_sprite_config(n_clips: int = 2000, seed: int = 1234) -> SpriteConfig:
    return SpriteConfig(
        image_size=(64, 64),
        radius_range=(8, 13),
        step_range=(1, 5),
        clip_len=6,
        n_clips=n_clips,
        seed=seed,
    )


def desk_stage1_config(iterations: int = 3000, seed: int = 0) -> TrainConfig:
    return TrainConfig(stage=1, iterations=iterations, batch_size=8, lr=1e-4,
                       seed=seed, checkpoint_every=1000)


def desk_stage2_config(iterations: int = 2000, seed: int = 0) -> TrainConfig:
    return TrainConfig(stage=2, iterations=iterations, batch_size=8, lr=1e-4,
                       seed=seed, checkpoint_every=1000)


def prepare_dataset(root: str | Path, n_clips: int = 2000,
                    seed: int = 1234) -> tuple[list[str], list[str]]:
    """Generate (if missing) and split into (train_ids, holdout_ids)."""
    root = Path(root)
    if not (root / "manifest.jsonl").exists():
        generate_sprite_dataset(desk_sprite_config(n_clips, seed), root)
    ids = list_clip_ids(root)
    return ids[:-HOLDOUT_CLIPS], ids[-HOLDOUT_CLIPS:]


def run_two_stage(data_root: str | Path, out_dir: str | Path,
                  train_ids: list[str], *, stage1_iters: int = 3000,
                  stage2_iters: int = 2000, seed: int = 0) -> Path:
    out = Path(out_dir)
    ckpt1 = out / "stage1" / "ckpt_stage1_final.pt"
    if not ckpt1.exists():
        ckpt1 = train_stage1(desk_stage1_config(stage1_iters, seed), data_root,
                             out / "stage1", train_ids)
    ckpt2 = out / "stage2" / "ckpt_stage2_final.pt"
    if not ckpt2.exists():
        ckpt2 = train_stage2(desk_stage2_config(stage2_iters, seed), data_root,
                             out / "stage2", ckpt1, train_ids)
    return ckpt2


def run_single_stage(data_root: str | Path, out_dir: str | Path,
                     train_ids: list[str], *, iterations: int = 5000,
                     seed: int = 0) -> Path:
    """Ablation: the stage-2 objective trained from scratch, same budget."""
    out = Path(out_dir)
    ckpt = out / "ckpt_stage2_final.pt"
    if ckpt.exists():
        return ckpt
    cfg = desk_stage2_config(iterations, seed)
    cfg.single_stage = True
    return train_stage2(cfg, data_root, out, None, train_ids)


def load_bundle(ckpt: str | Path) -> ModelBundle:
    models, _ = load_checkpoint(ckpt)
    return models.eval_()


def eval_mask_iou(models: ModelBundle, data_root: str | Path,
                  clip_ids: list[str]) -> float:
    ious = []
    with torch.no_grad():
        for cid in clip_ids:
            clip = load_clip(data_root, cid)
            for frame, gt in zip(clip.frames, clip.gt_masks):
                m = binarize(models.masknet(frame.unsqueeze(0))[0, 0])
                ious.append(mask_iou(m, gt))
    return float(np.mean(ious))


def sample_commands(rng: np.random.Generator, start: tuple[float, float],
                    n_steps: int, size: tuple[int, int],
                    shift_range: tuple[int, int] = (2, 6)) -> list[tuple[int, int]]:
    """Per-step (dx, dy) with the dominant-axis shift in shift_range,
    reflected off the borders so the commanded path stays inside."""
    h, w = size
    lo, hi = shift_range
    x, y = start
    cmds = []
    for _ in range(n_steps):
        dx = int(rng.integers(lo, hi + 1)) * (1 if rng.random() < 0.5 else -1)
        dy = int(rng.integers(0, lo + 1)) * (1 if rng.random() < 0.5 else -1)
        if not (EVAL_MARGIN <= x + dx <= w - 1 - EVAL_MARGIN):
            dx = -dx
        if not (EVAL_MARGIN <= y + dy <= h - 1 - EVAL_MARGIN):
            dy = -dy
        dx = int(np.clip(x + dx, EVAL_MARGIN, w - 1 - EVAL_MARGIN) - x)
        dy = int(np.clip(y + dy, EVAL_MARGIN, h - 1 - EVAL_MARGIN) - y)
        cmds.append((dx, dy))
        x += dx
        y += dy
    return cmds


@dataclass
class ControlEvalResult:
    rmsed_px: float
    background_change: float   # mean |change| outside consecutive mask unions
    n_rollouts: int


def eval_positional_control(models: ModelBundle, data_root: str | Path,
                            clip_ids: list[str], *, n_steps: int = 16,
                            tau: float = 0.1, seed: int = 9) -> ControlEvalResult:
    """Commanded positional rollouts on held-out start frames.

    The generated object location is the change-region centroid between
    consecutive frames, compared against the commanded trajectory at the same
    between-frame midpoints. Background stability is measured outside the
    union of each transition's two control masks.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    sq_errs: list[float] = []
    bg_changes: list[float] = []
    n = 0
    for cid in clip_ids:
        clip = load_clip(data_root, cid)
        if not clip.gt_centers:
            continue
        n += 1
        f0 = clip.frames[0]
        start = clip.gt_centers[0]
        h, w = f0.shape[-2:]
        cmds = sample_commands(rng, start, n_steps, (h, w))
        controls = [ControlParams(mode="positional", dx=c[0], dy=c[1]) for c in cmds]
        frames, masks = rollout(models, f0, controls)

        gt_mid = midpoint_trajectory(commanded_positions(start, cmds))
        meas = change_trajectory([f0] + frames, tau)
        sq_errs.extend(np.sum((gt_mid - meas) ** 2, axis=1).tolist())

        for t in range(len(frames) - 1):
            outside = (torch.maximum(masks[t], masks[t + 1]) == 0)
            delta = (frames[t + 1] - frames[t]).abs().mean(dim=0)
            bg_changes.append(float(delta[outside].mean()))
    return ControlEvalResult(
        rmsed_px=float(np.sqrt(np.mean(sq_errs))) if sq_errs else float("nan"),
        background_change=float(np.mean(bg_changes)) if bg_changes else float("nan"),
        n_rollouts=n,
    )
