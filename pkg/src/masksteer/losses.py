"""Training objectives: image losses, mask regularizers and their schedules.

All norms are reported as means over elements so the weights stay
resolution-independent. Frames are in [-1, 1]; masks in [0, 1].
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .vqgen import QuantizedGrid


def loss_vq(f_next: torch.Tensor, f_hat: torch.Tensor,
            z_pair: tuple[torch.Tensor, torch.Tensor],
            q_pair: tuple[QuantizedGrid, QuantizedGrid]) -> torch.Tensor:
    """l1 reconstruction + codebook + commitment terms, one scalar.

    The codebook term stops gradient at the encoder output, the commitment
    term stops it at the quantized entries, so each reaches exactly one side.
    Latent terms average over the foreground and background streams.
    """
    if f_next.shape != f_hat.shape:
        raise ValueError("frame shape mismatch")
    total = (f_next - f_hat).abs().mean()
    for z_e, q in zip(z_pair, q_pair):
        total = total + (z_e.detach() - q.entries).square().mean() / len(z_pair)
        total = total + (q.entries.detach() - z_e).square().mean() / len(z_pair)
    return total


def loss_gan(d_real: torch.Tensor, d_fake: torch.Tensor):
    """(generator term, discriminator term) from patch logits.

    The discriminator term is the value it maximizes,
    log C(real) + log(1 - C(fake)); the generator term is the
    non-saturating -log C(fake). Both are patch means.
    """
    gen = F.softplus(-d_fake).mean()
    disc = -(F.softplus(-d_real).mean() + F.softplus(d_fake).mean())
    return gen, disc


def adaptive_gan_weight(recon_grad_norm: float, gan_grad_norm: float, *,
                        delta: float = 1e-6, clamp_max: float = 1e4,
                        iteration: int | None = None, warmup: int = 0) -> float:
    """Dynamic GAN weight: ratio of the two grad norms at the decoder's last
    layer, clamped; zero while still inside the warm-up window."""
    if iteration is not None and iteration < warmup:
        return 0.0
    lam = float(recon_grad_norm) / (float(gan_grad_norm) + delta)
    return min(max(lam, 0.0), clamp_max)


class FeaturePyramid(nn.Module):
    """Fixed (never trained) conv feature extractor with taps per level.

    The default is a seeded, randomly initialized pyramid so no external
    weights are needed; a pretrained VGG-16 tap set can be swapped in via
    ``make_feature_extractor``.
    """

    def __init__(self, seed: int = 7, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 3
        for w in widths:
            conv = nn.Conv2d(in_ch, w, 3, stride=2, padding=1)
            with torch.no_grad():
                nn.init.kaiming_normal_(conv.weight, generator=gen)
                conv.bias.zero_()
            layers.append(conv)
            in_ch = w
        self.taps = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.taps:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        return feats


class VGGFeatures(nn.Module):
    """VGG-16 tap set (relu1_2, relu2_2, relu3_3); needs torchvision weights."""

    def __init__(self):
        super().__init__()
        from torchvision.models import vgg16, VGG16_Weights
        vgg = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        self.slices = nn.ModuleList([vgg[:4], vgg[4:9], vgg[9:16]])
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        h = (x + 1.0) / 2.0
        for sl in self.slices:
            h = sl(h)
            feats.append(h)
        return feats


def make_feature_extractor(backbone: str = "random", seed: int = 7) -> nn.Module:
    if backbone == "random":
        return FeaturePyramid(seed=seed)
    if backbone == "vgg16":
        return VGGFeatures()
    raise ValueError(f"unknown perceptual backbone {backbone!r}")


def loss_percept(f_hat: torch.Tensor, f_next: torch.Tensor,
                 extractor: nn.Module) -> torch.Tensor:
    """Mean over taps of the RMS feature difference (degree-1 homogeneous)."""
    fa = extractor(f_hat)
    fb = extractor(f_next)
    per_tap = [((a - b).square().mean()).sqrt() for a, b in zip(fa, fb)]
    return torch.stack(per_tap).mean()


def loss_bg(f_t: torch.Tensor, f_next: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Mean l1 change inside the masked-out (background) region."""
    if m.dim() == f_t.dim() - 1:
        m = m.unsqueeze(-3)
    inv = 1.0 - m
    return (inv * f_t - inv * f_next).abs().mean()


def change_map(f_t: torch.Tensor, f_next: torch.Tensor, tau: float) -> torch.Tensor:
    """Hard per-pixel change indicator: mean-channel l1 difference above tau."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    diff = (f_next - f_t).abs().mean(dim=-3, keepdim=True)
    return (diff > tau).to(f_t.dtype)


def loss_fg(m: torch.Tensor, mu: torch.Tensor, *, symmetric: bool = False,
            prior_mean: float | None = None) -> torch.Tensor:
    """Penalize masks larger than the change budget (per-sample hinge).

    ``prior_mean`` replaces the dynamic change-map average with a fixed
    global prior (ablation). ``symmetric`` selects the two-sided |...| form.
    """
    dims = tuple(range(1, m.dim()))
    m_mean = m.mean(dim=dims) if m.dim() > 1 else m.mean().unsqueeze(0)
    if prior_mean is not None:
        mu_mean = torch.full_like(m_mean, prior_mean)
    else:
        mu_mean = mu.mean(dim=dims) if mu.dim() > 1 else mu.mean().unsqueeze(0)
    diff = m_mean - mu_mean
    per_sample = diff.abs() if symmetric else diff.clamp(min=0)
    return per_sample.mean()


def loss_bin(m: torch.Tensor) -> torch.Tensor:
    """Distance from binary: mean of min(m, 1-m)."""
    return torch.minimum(m, 1.0 - m).mean()


def loss_bg_stage2(f_tilde: torch.Tensor, f_next: torch.Tensor,
                   m: torch.Tensor) -> torch.Tensor:
    """Stage-II background loss: the generated frame must obey the provided
    hard mask (same form as loss_bg with the generated frame substituted)."""
    hard = ((m == 0) | (m == 1)).all()
    if not bool(hard):
        raise ValueError("stage-II background loss requires a hard mask")
    return loss_bg(f_tilde, f_next, m)


def ratio_schedule(iteration: int, *, init_ratio: float = 80.0,
                   period: int = 1000, floor: float = 5.0,
                   base_fg: float = 1.0) -> tuple[float, float]:
    """(lambda_bg, lambda_fg) for stage I: the ratio starts at init_ratio,
    halves every period iterations and floors at floor."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    ratio = max(floor, init_ratio / (2.0 ** (iteration // period)))
    return ratio * base_fg, base_fg
