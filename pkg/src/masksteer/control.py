"""Mask control: affine warping, pseudo-control fitting, binarization.

Controls are expressed in pixel units (translation) and radians (rotation)
about the image center. Warping is an inverse bilinear resample with
out-of-bounds reads returning 0 (background), differentiable in both the
mask and the parameters. Integer translations are exact pixel permutations
with zero fill.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

MODES = ("positional", "affine", "nonparam")
_MODE_ALIASES = {"position": "positional", "non-param": "nonparam"}

DEGENERATE_DET = 1e-6


@dataclass
class ControlParams:
    """One user control: an affine edit of the mask, or a replacement mask."""

    mode: str = "positional"
    dx: float = 0.0
    dy: float = 0.0
    rot: float = 0.0
    sx: float = 1.0
    sy: float = 1.0
    shear: float = 0.0
    mask: torch.Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mode = _MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ValueError(f"unknown control mode {self.mode!r}")
        if self.mode == "nonparam" and self.mask is None:
            raise ValueError("nonparam control requires a mask")
        if self.mode == "positional":
            self.rot, self.sx, self.sy, self.shear = 0.0, 1.0, 1.0, 0.0
        if self.mode != "nonparam" and abs(self.sx * self.sy) <= DEGENERATE_DET:
            raise ValueError(
                f"degenerate affine: |det| = {abs(self.sx * self.sy):g} <= {DEGENERATE_DET}")

    @classmethod
    def identity(cls, mode: str = "positional") -> "ControlParams":
        return cls(mode=mode)

    def theta(self) -> torch.Tensor:
        return torch.tensor([self.dx, self.dy, self.rot, self.sx, self.sy, self.shear],
                            dtype=torch.float64)

    def to_json(self) -> dict:
        rec = {"mode": self.mode, "dx": self.dx, "dy": self.dy, "rot": self.rot,
               "sx": self.sx, "sy": self.sy, "shear": self.shear}
        if self.mode == "nonparam":
            u = (self.mask.detach().cpu().numpy() * 255).clip(0, 255).astype(np.uint8)
            buf = io.BytesIO()
            Image.fromarray(u, mode="L").save(buf, format="PNG")
            rec["mask"] = base64.b64encode(buf.getvalue()).decode("ascii")
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "ControlParams":
        mask = None
        if rec.get("mode") in ("nonparam", "non-param") and "mask" in rec:
            raw = base64.b64decode(rec["mask"])
            with Image.open(io.BytesIO(raw)) as im:
                arr = np.asarray(im.convert("L"))
            mask = torch.from_numpy((arr >= 128).astype(np.float32))
        known = {k: rec[k] for k in ("mode", "dx", "dy", "rot", "sx", "sy", "shear")
                 if k in rec}
        return cls(mask=mask, **known)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ControlParams":
        return cls.from_json(json.loads(text))


def _as_batched_mask(m: torch.Tensor) -> tuple[torch.Tensor, tuple[int, ...]]:
    shape = tuple(m.shape)
    if m.dim() == 2:
        return m[None, None], shape
    if m.dim() == 3:
        return m[:, None], shape
    if m.dim() == 4 and m.shape[1] == 1:
        return m, shape
    raise ValueError(f"mask must be (H,W), (B,H,W) or (B,1,H,W), got {shape}")


def _restore(m: torch.Tensor, shape: tuple[int, ...]) -> torch.Tensor:
    if len(shape) == 2:
        return m[0, 0]
    if len(shape) == 3:
        return m[:, 0]
    return m


def _as_theta_batch(theta, batch: int, dtype, device) -> torch.Tensor:
    if isinstance(theta, ControlParams):
        if theta.mode == "nonparam":
            raise ValueError("nonparam controls are not warps; use the mask directly")
        theta = theta.theta()
    theta = torch.as_tensor(theta, dtype=dtype, device=device)
    if theta.dim() == 1:
        theta = theta[None].expand(batch, -1)
    if theta.shape != (batch, 6):
        raise ValueError(f"theta must have 6 parameters per mask, got {tuple(theta.shape)}")
    det = theta[:, 3] * theta[:, 4]
    if (det.abs() <= DEGENERATE_DET).any():
        raise ValueError("degenerate affine parameters (|det| too small)")
    return theta


def _inverse_affine(theta: torch.Tensor):
    """Rows of the inverse linear map of the rotate/shear/scale part.

    Forward map about a pivot c: p' = R*Sh*S*(p - c) + c + t, so the inverse
    is p = Ainv*(p' - t) + (I - Ainv)*c with Ainv = Sinv*Shinv*Rinv. Built
    analytically so the identity and pure translations stay numerically exact
    (for those, Ainv is exactly the identity and the pivot term cancels).
    """
    dx, dy, rot, sx, sy, shear = theta.unbind(dim=1)
    cos, sin = torch.cos(rot), torch.sin(rot)
    # Rinv rows
    r00, r01, r10, r11 = cos, sin, -sin, cos
    # Shinv * Rinv, with Shinv = [[1, -shear], [0, 1]]
    a00 = r00 - shear * r10
    a01 = r01 - shear * r11
    a10, a11 = r10, r11
    # Sinv * (...)
    a00, a01 = a00 / sx, a01 / sx
    a10, a11 = a10 / sy, a11 / sy
    return (a00, a01, a10, a11), (dx, dy)


def _mask_pivot(mb: torch.Tensor):
    """Per-sample rotation/scale pivot: the mask centroid (image center for
    empty masks), so geometric edits act on the object itself."""
    b, _, h, w = mb.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=mb.dtype, device=mb.device),
        torch.arange(w, dtype=mb.dtype, device=mb.device), indexing="ij")
    total = mb.sum(dim=(1, 2, 3))
    safe = total.clamp(min=1e-12)
    cx = (mb[:, 0] * xs).sum(dim=(1, 2)) / safe
    cy = (mb[:, 0] * ys).sum(dim=(1, 2)) / safe
    center_x = torch.full_like(cx, (w - 1) / 2.0)
    center_y = torch.full_like(cy, (h - 1) / 2.0)
    empty = total == 0
    return torch.where(empty, center_x, cx), torch.where(empty, center_y, cy)


def warp_mask(m: torch.Tensor, theta) -> torch.Tensor:
    """Warp mask content by the affine control (inverse bilinear sampling).

    Rotation, scale and shear act about the mask's own centroid; translation
    is in pixels. Out-of-bounds samples read 0.
    """
    mb, shape = _as_batched_mask(m)
    b, _, h, w = mb.shape
    th = _as_theta_batch(theta, b, mb.dtype, mb.device)
    (a00, a01, a10, a11), (dx, dy) = _inverse_affine(th)
    cx, cy = _mask_pivot(mb)
    a00 = a00.view(b, 1, 1)
    a01 = a01.view(b, 1, 1)
    a10 = a10.view(b, 1, 1)
    a11 = a11.view(b, 1, 1)
    # pivot offset (I - Ainv) c; exactly zero when Ainv is the identity
    ox = (cx - (a00[:, 0, 0] * cx + a01[:, 0, 0] * cy)).view(b, 1, 1)
    oy = (cy - (a10[:, 0, 0] * cx + a11[:, 0, 0] * cy)).view(b, 1, 1)

    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=mb.dtype, device=mb.device),
        torch.arange(w, dtype=mb.dtype, device=mb.device), indexing="ij")
    px = xs[None] - dx.view(b, 1, 1)
    py = ys[None] - dy.view(b, 1, 1)
    sx_ = a00 * px + a01 * py + ox
    sy_ = a10 * px + a11 * py + oy

    x0 = sx_.detach().floor()
    y0 = sy_.detach().floor()
    wx = sx_ - x0
    wy = sy_ - y0
    x0l, y0l = x0.long(), y0.long()
    bidx = torch.arange(b, device=mb.device).view(b, 1, 1)
    out = torch.zeros_like(sx_)
    for oy in (0, 1):
        for ox in (0, 1):
            xi = x0l + ox
            yi = y0l + oy
            inb = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).to(mb.dtype)
            vals = mb[bidx, 0, yi.clamp(0, h - 1), xi.clamp(0, w - 1)]
            weight = (wx if ox else 1 - wx) * (wy if oy else 1 - wy)
            out = out + vals * inb * weight
    return _restore(out[:, None], shape)


def binarize(m: torch.Tensor) -> torch.Tensor:
    """Hard-threshold at 0.5 (0.5 itself is foreground). Blocks all gradient."""
    return (m.detach() >= 0.5).to(m.dtype)


def compose_masks(masks: list[torch.Tensor]) -> torch.Tensor:
    """Union (elementwise max) of hard masks."""
    if not masks:
        raise ValueError("compose_masks needs at least one mask")
    out = masks[0]
    for m in masks[1:]:
        if m.shape != out.shape:
            raise ValueError("mask shapes differ")
        out = torch.maximum(out, m)
    return out


@dataclass
class FitResult:
    params: ControlParams
    residual: float


# rot/log-scale/shear move the mask boundary ~radius px per unit, translations
# 1 px per unit; slowing the geometric parameters by this factor balances the
# optimizer's per-step boundary motion across parameters
GEO_STEP_SCALE = 0.1


def _assemble_theta(free: torch.Tensor, mode: str) -> torch.Tensor:
    b = free.shape[0]
    zeros = torch.zeros(b, dtype=free.dtype, device=free.device)
    ones = torch.ones_like(zeros)
    if mode == "positional":
        dx, dy = free.unbind(dim=1)
        return torch.stack([dx, dy, zeros, ones, ones, zeros], dim=1)
    dx, dy, rot_u, lsx_u, lsy_u, shear_u = free.unbind(dim=1)
    rot = rot_u * GEO_STEP_SCALE
    # scales parameterized as exp(.) so the map never degenerates mid-fit
    return torch.stack([dx, dy, rot, (lsx_u * GEO_STEP_SCALE).exp(),
                        (lsy_u * GEO_STEP_SCALE).exp(),
                        shear_u * GEO_STEP_SCALE], dim=1)


def fit_control_batch(m_t: torch.Tensor, m_next: torch.Tensor,
                      mode: str = "affine", *, iters: int = 1000, lr: float = 0.1,
                      coarse_to_fine: bool = False) -> list[FitResult]:
    """Recover per-pair controls that warp m_t onto m_next (MSE objective).

    First-order optimization (Adam, lr 0.1, 1000 iterations by default) from
    the identity; the best iterate by residual is returned. Non-convergence
    is reported through the residual, not raised.
    """
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in ("positional", "affine"):
        raise ValueError(f"cannot fit mode {mode!r}")
    src, _ = _as_batched_mask(m_t)
    dst, _ = _as_batched_mask(m_next)
    if src.shape != dst.shape:
        raise ValueError("mask shapes differ")
    sums = src.sum(dim=(1, 2, 3))
    if (sums == 0).any():
        raise ValueError("cannot fit control from an empty source mask")

    if coarse_to_fine and src.shape[-1] >= 16:
        half = torch.nn.functional.avg_pool2d(src, 2), torch.nn.functional.avg_pool2d(dst, 2)
        coarse = fit_control_batch(half[0], half[1], mode, iters=iters // 2, lr=lr)
        init = torch.stack([r.params.theta() for r in coarse]).to(src.dtype)
        init[:, 0] *= 2
        init[:, 1] *= 2
    else:
        init = None

    b = src.shape[0]
    n_free = 2 if mode == "positional" else 6
    free = torch.zeros(b, n_free, dtype=src.dtype, device=src.device)
    if init is not None:
        if mode == "positional":
            free[:, :2] = init[:, :2]
        else:
            free[:, :2] = init[:, :2]
            free[:, 2] = init[:, 2] / GEO_STEP_SCALE
            free[:, 3] = init[:, 3].log() / GEO_STEP_SCALE
            free[:, 4] = init[:, 4].log() / GEO_STEP_SCALE
            free[:, 5] = init[:, 5] / GEO_STEP_SCALE
    free.requires_grad_(True)

    best_theta = _assemble_theta(free, mode).detach().clone()
    best_res = torch.full((b,), float("inf"), dtype=src.dtype)
    best_score = torch.full((b,), float("inf"), dtype=src.dtype)
    opt = torch.optim.Adam([free], lr=lr)
    for _ in range(iters):
        opt.zero_grad()
        theta = _assemble_theta(free, mode)
        res = (warp_mask(src, theta) - dst).square().mean(dim=(1, 2, 3))
        with torch.no_grad():
            # prefer the minimal-deviation member when residuals are equal
            # (symmetric masks make several controls exactly equivalent)
            geo = free[:, 2:] if mode == "affine" else free[:, :0]
            score = res + 1e-6 * geo.square().sum(dim=1)
            improved = score < best_score
            best_score = torch.where(improved, score, best_score)
            best_res = torch.where(improved, res.detach(), best_res)
            best_theta[improved] = theta.detach()[improved]
        res.sum().backward()
        opt.step()

    results = []
    for i in range(b):
        t = best_theta[i].tolist()
        params = ControlParams(mode=mode, dx=t[0], dy=t[1], rot=t[2],
                               sx=t[3], sy=t[4], shear=t[5])
        results.append(FitResult(params, float(best_res[i])))
    return results


def fit_control(m_t: torch.Tensor, m_next: torch.Tensor, mode: str = "affine",
                **kwargs) -> FitResult:
    """Single-pair convenience wrapper over fit_control_batch."""
    if m_t.dim() != 2:
        raise ValueError("fit_control takes a single (H,W) mask; "
                         "use fit_control_batch for batches")
    return fit_control_batch(m_t[None], m_next[None], mode, **kwargs)[0]
