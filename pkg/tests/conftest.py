from __future__ import annotations

import numpy as np
import pytest
import torch

from masksteer import SpriteConfig, generate_sprite_dataset


def central_diff_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite-difference gradient of scalar fn(x) w.r.t. x (in place)."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        fp = float(fn(x))
        flat[i] = orig - eps
        fm = float(fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def autograd_grad(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    (grad,) = torch.autograd.grad(out, x)
    return grad


def rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def check_gradient(fn, x: torch.Tensor, tol: float = 1e-4, eps: float = 1e-6) -> float:
    """Assert reverse-mode and central-difference gradients agree at 64-bit."""
    assert x.dtype == torch.float64
    ag = autograd_grad(fn, x)
    fd = central_diff_grad(fn, x.detach().clone(), eps)
    err = rel_error(ag, fd)
    assert err < tol, f"gradient mismatch: rel error {err:.3g} >= {tol}"
    return err


def disk_mask(size: int, cx: float, cy: float, r: float,
              dtype=torch.float64) -> torch.Tensor:
    ys, xs = torch.meshgrid(torch.arange(size, dtype=dtype),
                            torch.arange(size, dtype=dtype), indexing="ij")
    return ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r).to(dtype)


def square_mask(size: int, cx: float, cy: float, r: float,
                dtype=torch.float64) -> torch.Tensor:
    ys, xs = torch.meshgrid(torch.arange(size, dtype=dtype),
                            torch.arange(size, dtype=dtype), indexing="ij")
    return (torch.maximum((xs - cx).abs(), (ys - cy).abs()) <= r).to(dtype)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> str:
    """12 clips of 5 frames, 64x64, deterministic."""
    root = tmp_path_factory.mktemp("data") / "sprites"
    generate_sprite_dataset(SpriteConfig(n_clips=12, clip_len=5, seed=3), root)
    return str(root)


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(0)
    np.random.seed(0)
