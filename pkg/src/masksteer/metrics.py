"""Desk-scale evaluation: control precision, mask quality, reconstruction.

The evaluation report is JSON:
``{rmsed_px, rmsed_norm, mean_iou, mean_psnr, n_clips}``.

Object localization needs no external detector: a generated object location
is the centroid of the change region between consecutive frames (threshold
tau). That estimate sits at the midpoint of the motion step, so reference
trajectories are compared at the same between-frame midpoints.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .losses import change_map


def mask_centroid(m: torch.Tensor) -> tuple[float, float]:
    """(x, y) area centroid of the foreground pixels of a hard mask."""
    if m.dim() != 2:
        raise ValueError("expected a single (H,W) mask")
    total = float(m.sum())
    if total == 0:
        raise ValueError("cannot take the centroid of an empty mask")
    ys, xs = torch.meshgrid(
        torch.arange(m.shape[0], dtype=m.dtype),
        torch.arange(m.shape[1], dtype=m.dtype), indexing="ij")
    return (float((m * xs).sum() / total), float((m * ys).sum() / total))


def rmsed(gt: np.ndarray, gen: np.ndarray) -> float:
    """Root-mean-square Euclidean displacement between paired locations, px."""
    gt = np.asarray(gt, dtype=float)
    gen = np.asarray(gen, dtype=float)
    if gt.shape != gen.shape or gt.ndim != 2 or gt.shape[1] != 2 or len(gt) < 1:
        raise ValueError(f"trajectories must both be (N,2), N>=1; got {gt.shape} vs {gen.shape}")
    return float(np.sqrt(np.mean(np.sum((gt - gen) ** 2, axis=1))))


def mask_iou(a: torch.Tensor, b: torch.Tensor) -> float:
    """Intersection over union of two hard masks; 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    ab = (a > 0.5) & (b > 0.5)
    union = (a > 0.5) | (b > 0.5)
    u = float(union.sum())
    if u == 0:
        return 1.0
    return float(ab.sum()) / u


def psnr(f1: torch.Tensor, f2: torch.Tensor, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB on [-1,1] frames; inf when identical."""
    if f1.shape != f2.shape:
        raise ValueError("frame shapes differ")
    mse = float((f1 - f2).square().mean())
    if mse == 0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


def change_trajectory(frames: list[torch.Tensor], tau: float) -> np.ndarray:
    """Locations of the moving object from consecutive-frame change regions.

    One (x, y) per transition; an empty change region repeats the previous
    location (frame-center fallback for a leading empty region).
    """
    pts = []
    h, w = frames[0].shape[-2:]
    prev = (w / 2.0, h / 2.0)
    for a, b in zip(frames[:-1], frames[1:]):
        mu = change_map(a.unsqueeze(0), b.unsqueeze(0), tau)[0, 0]
        if float(mu.sum()) > 0:
            prev = mask_centroid(mu)
        pts.append(prev)
    return np.array(pts)


def midpoint_trajectory(positions: np.ndarray) -> np.ndarray:
    """Between-frame midpoints of a per-frame position sequence."""
    p = np.asarray(positions, dtype=float)
    return (p[:-1] + p[1:]) / 2.0


def commanded_positions(start: tuple[float, float],
                        commands: list[tuple[float, float]]) -> np.ndarray:
    """Per-frame object positions implied by a start point and step commands."""
    pos = [np.asarray(start, dtype=float)]
    for dx, dy in commands:
        pos.append(pos[-1] + (dx, dy))
    return np.stack(pos)


def evaluate(models, data_root, clip_ids: list[str], *, tau: float = 0.1,
             max_rollout: int | None = None) -> dict:
    """Held-out evaluation under non-parametric control.

    Per clip: mask IoU against ground truth, PSNR of the rollout driven by
    the clip's own predicted masks, and RMSED between the manifest trajectory
    and the generated change trajectory (both at between-frame midpoints).
    """
    from .data import load_clip
    from .trainer import rollout
    from .control import ControlParams, binarize

    ious, psnrs, sq_errs = [], [], []
    n_clips = 0
    for clip_id in clip_ids:
        clip = load_clip(data_root, clip_id)
        if len(clip.frames) < 2:
            continue
        n_clips += 1
        frames = clip.frames
        if max_rollout is not None:
            frames = frames[: max_rollout + 1]
        with torch.no_grad():
            soft = [models.masknet(f.unsqueeze(0))[0, 0] for f in frames]
        if clip.gt_masks is not None:
            for m, gt in zip(soft, clip.gt_masks):
                ious.append(mask_iou(binarize(m), gt))
        controls = [ControlParams(mode="nonparam", mask=binarize(m))
                    for m in soft[1:]]
        gen, _ = rollout(models, frames[0], controls)
        for g, f in zip(gen, frames[1:]):
            psnrs.append(min(psnr(g, f), 99.0))
        if clip.gt_centers is not None:
            gt_mid = midpoint_trajectory(np.array(clip.gt_centers[: len(frames)]))
            meas = change_trajectory([frames[0]] + gen, tau)
            sq_errs.extend(np.sum((gt_mid - meas) ** 2, axis=1).tolist())
    rm = float(np.sqrt(np.mean(sq_errs))) if sq_errs else float("nan")
    width = clip.frames[0].shape[-1] if n_clips else float("nan")
    return {
        "rmsed_px": rm,
        "rmsed_norm": rm / width if n_clips else float("nan"),
        "mean_iou": float(np.mean(ious)) if ious else float("nan"),
        "mean_psnr": float(np.mean(psnrs)) if psnrs else float("nan"),
        "n_clips": n_clips,
    }
