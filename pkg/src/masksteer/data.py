"""Synthetic moving-sprite datasets with ground truth, plus frame-pair loading.

A dataset on disk is one directory per clip holding ``%06d.png`` RGB frames,
a ``masks/`` subdirectory with grayscale ground-truth masks, and a top-level
``manifest.jsonl`` with one record per clip (clip_id, length, centers).
Frames are 8-bit PNG; in memory they live in [-1, 1].
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

SHAPES = ("disk", "square", "triangle")


@dataclass
class SpriteConfig:
    """Recipe for one synthetic dataset."""

    image_size: tuple[int, int] = (64, 64)       # (H, W), both divisible by 16
    shapes: tuple[str, ...] = SHAPES
    radius_range: tuple[int, int] = (7, 12)      # circumradius in px
    step_range: tuple[int, int] = (1, 4)         # per-axis |displacement| per step, px
    n_sprites: int = 1
    clip_len: int = 6
    n_clips: int = 100
    seed: int = 0
    background_amplitude: float = 0.25           # texture contrast, [0,1] units
    brightness_drift: float = 0.0                # per-step global drift, [0,1] units
    pixel_noise: float = 0.0                     # iid per-frame noise, [0,1] units
    fixed_start: tuple[int, int] | None = None   # pin sprite 0's start (x, y)
    fixed_velocity: tuple[int, int] | None = None  # pin per-step displacement (dx, dy)

    def validate(self) -> None:
        h, w = self.image_size
        if h % 16 or w % 16:
            raise ValueError(f"image size {self.image_size} must be divisible by 16")
        rmin, rmax = self.radius_range
        if not (0 < rmin <= rmax):
            raise ValueError(f"bad radius range {self.radius_range}")
        if 2 * rmax + 2 >= min(h, w):
            raise ValueError(
                f"sprite radius {rmax} does not fit in a {h}x{w} frame")
        smin, smax = self.step_range
        if not (0 <= smin <= smax):
            raise ValueError(f"bad step range {self.step_range}")
        if smax > 0.25 * w:
            raise ValueError(
                f"per-step displacement {smax} exceeds 25% of image width {w}")
        for s in self.shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown sprite shape {s!r}")
        if self.clip_len < 1 or self.n_clips < 1 or self.n_sprites < 1:
            raise ValueError("clip_len, n_clips and n_sprites must be >= 1")


@dataclass
class ClipRecord:
    """One loaded clip; ground truth is present only for synthetic data."""

    clip_id: str
    frames: list[torch.Tensor]                    # each (3, H, W) in [-1, 1]
    gt_masks: list[torch.Tensor] | None = None    # each (H, W) in {0, 1}
    gt_centers: list[tuple[float, float]] | None = None  # (x, y) of sprite 0


@dataclass
class FramePair:
    clip_id: str
    t: int
    f_t: torch.Tensor
    f_next: torch.Tensor


# --- pixel conversions -------------------------------------------------------

def frame_to_uint8(frame: torch.Tensor) -> np.ndarray:
    """(3,H,W) in [-1,1] -> (H,W,3) uint8."""
    arr = frame.detach().cpu().numpy()
    u = np.rint((arr + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
    return np.transpose(u, (1, 2, 0))


def uint8_to_frame(u: np.ndarray) -> torch.Tensor:
    """(H,W,3) uint8 -> (3,H,W) in [-1,1]; 0 -> -1.0, 255 -> 1.0 exactly."""
    arr = u.astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(np.transpose(arr, (2, 0, 1)))


def mask_to_uint8(mask: torch.Tensor) -> np.ndarray:
    return np.rint(mask.detach().cpu().numpy() * 255.0).clip(0, 255).astype(np.uint8)


def uint8_to_hard_mask(u: np.ndarray) -> torch.Tensor:
    return torch.from_numpy((u >= 128).astype(np.float32))


def save_frame_png(frame: torch.Tensor, path: Path) -> None:
    Image.fromarray(frame_to_uint8(frame), mode="RGB").save(path)


def load_frame_png(path: Path) -> torch.Tensor:
    try:
        with Image.open(path) as im:
            u = np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise RuntimeError(f"unreadable frame image: {path}") from exc
    return uint8_to_frame(u)


# --- sprite rasterization ----------------------------------------------------

def rasterize_shape(shape: str, radius: int, center: tuple[int, int],
                    size: tuple[int, int]) -> np.ndarray:
    """Boolean (H,W) mask of the shape; pixel centers inside count."""
    h, w = size
    cx, cy = center
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - cx
    dy = ys - cy
    if shape == "disk":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= radius
    if shape == "triangle":
        # equilateral, apex up, circumradius = radius (y grows downward)
        verts = [(0.0, -float(radius)),
                 (radius * math.sqrt(3) / 2, radius / 2.0),
                 (-radius * math.sqrt(3) / 2, radius / 2.0)]
        inside = np.ones((h, w), dtype=bool)
        for i in range(3):
            x0, y0 = verts[i]
            x1, y1 = verts[(i + 1) % 3]
            cross = (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0)
            inside &= cross >= 0
        return inside
    raise ValueError(f"unknown shape {shape!r}")


def analytic_area(shape: str, radius: int) -> float:
    if shape == "disk":
        return math.pi * radius * radius
    if shape == "square":
        return float((2 * radius + 1) ** 2)
    if shape == "triangle":
        return 3 * math.sqrt(3) / 4 * radius * radius
    raise ValueError(f"unknown shape {shape!r}")


def shape_perimeter(shape: str, radius: int) -> float:
    if shape == "disk":
        return 2 * math.pi * radius
    if shape == "square":
        return 8.0 * radius
    if shape == "triangle":
        return 3 * math.sqrt(3) * radius
    raise ValueError(f"unknown shape {shape!r}")


# --- background and sprite appearance ---------------------------------------

def _upsample_bilinear(grid: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    gh, gw = grid.shape
    # sample grid at fractional coordinates covering the frame
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.floor(ys).astype(int).clip(0, gh - 2)
    x0 = np.floor(xs).astype(int).clip(0, gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x0 + 1)]
    c = grid[np.ix_(y0 + 1, x0)]
    d = grid[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _perlin_texture(rng: np.random.Generator, size: tuple[int, int],
                    amplitude: float) -> np.ndarray:
    """Multi-octave value noise in [0, amplitude], shape (H, W)."""
    tex = np.zeros(size)
    weight = 1.0
    total = 0.0
    for cells in (4, 8, 16):
        coarse = rng.random((cells + 1, cells + 1))
        tex += weight * _upsample_bilinear(coarse, size)
        total += weight
        weight *= 0.5
    tex /= total
    tex -= tex.min()
    peak = tex.max()
    if peak > 0:
        tex /= peak
    return tex * amplitude


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.array(rgb)


@dataclass
class _Sprite:
    shape: str
    radius: int
    color: np.ndarray                 # (3,) in [0,1]
    texture: np.ndarray               # (2r+3, 2r+3) rigid detail, moves with sprite
    pos: np.ndarray                   # (2,) int, (x, y)
    velocity: np.ndarray | None       # fixed per-step displacement, or None

    def paint(self, frame: np.ndarray, mask_out: np.ndarray) -> None:
        h, w, _ = frame.shape
        inside = rasterize_shape(self.shape, self.radius,
                                 (int(self.pos[0]), int(self.pos[1])), (h, w))
        ys, xs = np.nonzero(inside)
        dx = xs - int(self.pos[0])
        dy = ys - int(self.pos[1])
        dist = np.sqrt(dx * dx + dy * dy) / max(self.radius, 1)
        shade = 1.0 - 0.45 * np.clip(dist, 0, 1)
        detail = self.texture[dy + self.radius + 1, dx + self.radius + 1]
        vals = self.color[None, :] * shade[:, None] + detail[:, None]
        frame[ys, xs] = np.clip(vals, 0.0, 1.0)
        mask_out[ys, xs] = 1.0


def _step_position(rng: np.random.Generator, sprite: _Sprite,
                   size: tuple[int, int], step_range: tuple[int, int]) -> None:
    h, w = size
    margin = sprite.radius + 1
    if sprite.velocity is not None:
        v = sprite.velocity.copy()
    else:
        smin, smax = step_range
        while True:
            v = rng.integers(-smax, smax + 1, size=2)
            if max(abs(int(v[0])), abs(int(v[1]))) >= smin:
                break
    lo = np.array([margin, margin])
    hi = np.array([w - 1 - margin, h - 1 - margin])
    nxt = sprite.pos + v
    # bounce off borders so the sprite always stays fully inside
    for ax in range(2):
        if nxt[ax] < lo[ax] or nxt[ax] > hi[ax]:
            v[ax] = -v[ax]
            nxt[ax] = sprite.pos[ax] + v[ax]
    sprite.pos = np.clip(nxt, lo, hi)
    if sprite.velocity is not None:
        sprite.velocity = v


def _render_clip(cfg: SpriteConfig, rng: np.random.Generator):
    """Returns (frames float [0,1] (L,H,W,3), masks bool (L,H,W), centers)."""
    h, w = cfg.image_size
    base_hue = rng.random()
    base = _hsv_to_rgb(base_hue, 0.3 + 0.3 * rng.random(), 0.18 + 0.12 * rng.random())
    texture = _perlin_texture(rng, (h, w), cfg.background_amplitude)
    background = np.clip(base[None, None, :] + texture[:, :, None], 0.0, 1.0)

    sprites: list[_Sprite] = []
    for k in range(cfg.n_sprites):
        shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        radius = int(rng.integers(cfg.radius_range[0], cfg.radius_range[1] + 1))
        margin = radius + 1
        if k == 0 and cfg.fixed_start is not None:
            pos = np.array(cfg.fixed_start, dtype=int)
        else:
            pos = np.array([rng.integers(margin, w - margin),
                            rng.integers(margin, h - margin)])
        # hue offset by ~half turn from the background keeps sprites contrasting
        hue = (base_hue + 0.35 + 0.3 * rng.random()) % 1.0
        color = _hsv_to_rgb(hue, 0.55 + 0.4 * rng.random(), 0.75 + 0.25 * rng.random())
        tex = rng.uniform(-0.18, 0.18, size=(2 * radius + 3, 2 * radius + 3))
        vel = None
        if k == 0 and cfg.fixed_velocity is not None:
            vel = np.array(cfg.fixed_velocity, dtype=int)
        sprites.append(_Sprite(shape, radius, color, tex, pos, vel))

    frames = np.empty((cfg.clip_len, h, w, 3))
    masks = np.zeros((cfg.clip_len, h, w))
    centers = []
    drift0 = rng.uniform(-1, 1) if cfg.brightness_drift > 0 else 0.0
    for t in range(cfg.clip_len):
        if t > 0:
            for sp in sprites:
                _step_position(rng, sp, (h, w), cfg.step_range)
        frame = background.copy()
        if cfg.brightness_drift > 0:
            frame = np.clip(frame + drift0 * cfg.brightness_drift * t, 0.0, 1.0)
        for sp in sprites:
            sp.paint(frame, masks[t])
        if cfg.pixel_noise > 0:
            frame = np.clip(frame + rng.normal(0, cfg.pixel_noise, frame.shape), 0, 1)
        frames[t] = frame
        centers.append([float(sprites[0].pos[0]), float(sprites[0].pos[1])])
    return frames, masks.astype(bool), centers


def generate_sprite_dataset(cfg: SpriteConfig, out_path: str | Path) -> Path:
    """Write a dataset under out_path; returns the manifest path.

    Deterministic given cfg.seed: running twice produces byte-identical trees.
    """
    cfg.validate()
    root = Path(out_path)
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_clips)
    manifest_path = root / "manifest.jsonl"
    with manifest_path.open("w") as mf:
        for i in range(cfg.n_clips):
            rng = np.random.Generator(np.random.PCG64(seeds[i]))
            frames, masks, centers = _render_clip(cfg, rng)
            clip_id = f"clip_{i:04d}"
            clip_dir = root / clip_id
            (clip_dir / "masks").mkdir(parents=True, exist_ok=True)
            for t in range(cfg.clip_len):
                u = np.rint(frames[t] * 255.0).clip(0, 255).astype(np.uint8)
                Image.fromarray(u, mode="RGB").save(clip_dir / f"{t:06d}.png")
                mu = (masks[t] * 255).astype(np.uint8)
                Image.fromarray(mu, mode="L").save(clip_dir / "masks" / f"{t:06d}.png")
            rec = {"clip_id": clip_id, "length": cfg.clip_len, "centers": centers}
            mf.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


# --- loading -----------------------------------------------------------------

def read_manifest(root: str | Path) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.jsonl under {root}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def load_clip(root: str | Path, clip_id: str, with_gt: bool = True) -> ClipRecord:
    clip_dir = Path(root) / clip_id
    frame_paths = sorted(p for p in clip_dir.glob("*.png"))
    frames = [load_frame_png(p) for p in frame_paths]
    gt_masks = None
    mask_dir = clip_dir / "masks"
    if with_gt and mask_dir.is_dir():
        gt_masks = []
        for p in sorted(mask_dir.glob("*.png")):
            with Image.open(p) as im:
                gt_masks.append(uint8_to_hard_mask(np.asarray(im.convert("L"))))
    centers = None
    try:
        for rec in read_manifest(root):
            if rec["clip_id"] == clip_id:
                centers = [tuple(c) for c in rec["centers"]]
                break
    except FileNotFoundError:
        pass
    return ClipRecord(clip_id, frames, gt_masks, centers)


def list_clip_ids(root: str | Path) -> list[str]:
    try:
        return [rec["clip_id"] for rec in read_manifest(root)]
    except FileNotFoundError:
        return sorted(p.name for p in Path(root).iterdir() if p.is_dir())


def load_frame_pairs(root: str | Path) -> Iterator[FramePair]:
    """Yield consecutive (f_t, f_{t+1}) pairs, never crossing clip boundaries."""
    any_clip = False
    for clip_id in list_clip_ids(root):
        clip_dir = Path(root) / clip_id
        frame_paths = sorted(clip_dir.glob("*.png"))
        if len(frame_paths) < 2:
            log.warning("skipping clip %s: fewer than 2 frames", clip_id)
            continue
        any_clip = True
        prev = load_frame_png(frame_paths[0])
        for t in range(1, len(frame_paths)):
            cur = load_frame_png(frame_paths[t])
            yield FramePair(clip_id, t - 1, prev, cur)
            prev = cur
    if not any_clip:
        raise ValueError(f"dataset {root} has no clip with >= 2 frames")


class PairDataset:
    """Random-access view of all frame pairs, cached as uint8 in memory."""

    def __init__(self, root: str | Path, clip_ids: list[str] | None = None):
        self.root = Path(root)
        self.index: list[tuple[str, int]] = []   # (clip_id, t)
        self._frames: dict[str, list[np.ndarray]] = {}
        ids = clip_ids if clip_ids is not None else list_clip_ids(root)
        for clip_id in ids:
            paths = sorted((self.root / clip_id).glob("*.png"))
            if len(paths) < 2:
                log.warning("skipping clip %s: fewer than 2 frames", clip_id)
                continue
            arrs = []
            for p in paths:
                try:
                    with Image.open(p) as im:
                        arrs.append(np.asarray(im.convert("RGB")))
                except Exception as exc:
                    raise RuntimeError(f"unreadable frame image: {p}") from exc
            self._frames[clip_id] = arrs
            self.index.extend((clip_id, t) for t in range(len(paths) - 1))
        if not self.index:
            raise ValueError(f"dataset {root} has no clip with >= 2 frames")

    def __len__(self) -> int:
        return len(self.index)

    @property
    def image_size(self) -> tuple[int, int]:
        clip_id, _ = self.index[0]
        h, w, _ = self._frames[clip_id][0].shape
        return (h, w)

    def get(self, i: int) -> FramePair:
        clip_id, t = self.index[i]
        arrs = self._frames[clip_id]
        return FramePair(clip_id, t, uint8_to_frame(arrs[t]), uint8_to_frame(arrs[t + 1]))

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor, list[tuple[str, int]]]:
        pairs = [self.get(int(i)) for i in indices]
        f_t = torch.stack([p.f_t for p in pairs])
        f_next = torch.stack([p.f_next for p in pairs])
        keys = [(p.clip_id, p.t) for p in pairs]
        return f_t, f_next, keys
