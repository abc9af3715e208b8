"""Mask-conditioned next-frame generator: encoder, codebook, decoder, critic.

The foreground layer f*m and background layer f*(1-m) are encoded by the
same encoder, each latent grid is snapped to its nearest codebook entry, and
the decoder renders the next frame from the elementwise sum of the two
quantized grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .blocks import ResidualBlock, Downsample, Upsample, AttentionBlock, _norm
from .config import ModelProfile


@dataclass
class QuantizedGrid:
    """Result of snapping a latent grid to the codebook.

    values: straight-through view; numerically equals the selected entries
        but routes upstream gradient to the encoder output unchanged.
    entries: the selected codebook vectors with gradient to the codebook.
    indices: (B, h, w) selected entry ids.
    """

    values: torch.Tensor
    entries: torch.Tensor
    indices: torch.Tensor


class Codebook(nn.Module):
    def __init__(self, size: int, dim: int):
        super().__init__()
        if size < 2:
            raise ValueError("codebook needs at least 2 entries")
        self.size = size
        self.dim = dim
        self.embed = nn.Embedding(size, dim)
        nn.init.uniform_(self.embed.weight, -1.0 / size, 1.0 / size)

    @property
    def entries(self) -> torch.Tensor:
        return self.embed.weight


def quantize(z: torch.Tensor, codebook: Codebook) -> QuantizedGrid:
    """Snap each spatial vector of z (B, n_z, h, w) to its nearest entry.

    Nearest is Euclidean; ties resolve to the lowest index. The returned
    values tensor carries straight-through gradients: dL/dz equals dL/dvalues
    elementwise, and no gradient reaches the codebook through it.
    """
    if not torch.isfinite(z).all():
        raise ValueError("latent grid contains non-finite values")
    b, c, h, w = z.shape
    flat = z.permute(0, 2, 3, 1).reshape(-1, c)
    entries = codebook.entries.to(flat.dtype)
    k = entries.shape[0]
    # exact squared distances, chunked to bound the (rows, K, n_z) temporary
    chunk = max(1, (1 << 22) // (k * c))
    idx_parts = []
    for start in range(0, flat.shape[0], chunk):
        part = flat[start:start + chunk]
        d2 = (part.unsqueeze(1) - entries.unsqueeze(0)).square().sum(-1)
        dmin = d2.min(dim=1, keepdim=True).values
        cand = torch.where(d2 == dmin, torch.arange(k, device=z.device), k)
        idx_parts.append(cand.min(dim=1).values)
    indices = torch.cat(idx_parts).reshape(b, h, w)
    gathered = codebook.embed(indices).permute(0, 3, 1, 2).to(z.dtype)
    # z - z.detach() is exactly zero, so values == gathered exactly while the
    # gradient path copies through to z
    values = gathered.detach() + (z - z.detach())
    return QuantizedGrid(values=values, entries=gathered, indices=indices)


class Encoder(nn.Module):
    """Frame -> latent grid at 1/16 resolution."""

    def __init__(self, profile: ModelProfile):
        super().__init__()
        plan = profile.encoder_plan
        self.conv_in = nn.Conv2d(3, plan[0], 3, padding=1)
        stages = []
        for i in range(4):
            stages += [ResidualBlock(plan[i]), Downsample(plan[i], plan[i + 1])]
        self.down = nn.Sequential(*stages)
        deep = plan[-1]
        self.neck = nn.Sequential(ResidualBlock(deep), AttentionBlock(deep),
                                  ResidualBlock(deep))
        self.norm_out = _norm(deep)
        self.conv_out = nn.Conv2d(deep, profile.latent_dim, 3, padding=1)

    def forward(self, x):
        h = self.neck(self.down(self.conv_in(x)))
        return self.conv_out(F.silu(self.norm_out(h)))


class Decoder(nn.Module):
    """Quantized latent grid -> frame in [-1, 1] (tanh output)."""

    def __init__(self, profile: ModelProfile):
        super().__init__()
        plan = profile.encoder_plan
        deep = plan[-1]
        self.conv_in = nn.Conv2d(profile.latent_dim, deep, 3, padding=1)
        self.neck = nn.Sequential(ResidualBlock(deep), AttentionBlock(deep),
                                  ResidualBlock(deep))
        stages = []
        for i in range(4, 0, -1):
            stages += [ResidualBlock(plan[i]), Upsample(plan[i], plan[i - 1])]
        self.up = nn.Sequential(*stages)
        self.norm_out = _norm(plan[0])
        self.conv_out = nn.Conv2d(plan[0], 3, 3, padding=1)

    def forward(self, z):
        h = self.up(self.neck(self.conv_in(z)))
        return torch.tanh(self.conv_out(F.silu(self.norm_out(h))))


class Generator(nn.Module):
    """Encoder + codebook + decoder with layered latent fusion."""

    def __init__(self, profile: ModelProfile):
        super().__init__()
        self.encoder = Encoder(profile)
        self.decoder = Decoder(profile)
        self.codebook = Codebook(profile.codebook_size, profile.latent_dim)

    def encode_layers(self, frame: torch.Tensor, mask: torch.Tensor):
        """Encode f*m and f*(1-m) with the shared encoder."""
        if frame.shape[-2:] != mask.shape[-2:]:
            raise ValueError(
                f"frame {tuple(frame.shape)} and mask {tuple(mask.shape)} disagree")
        if mask.dim() == frame.dim() - 1:
            mask = mask.unsqueeze(-3)
        z_fg = self.encoder(frame * mask)
        z_bg = self.encoder(frame * (1.0 - mask))
        return z_fg, z_bg

    def forward_all(self, frame: torch.Tensor, mask: torch.Tensor):
        """Full pass; returns (f_hat, (z_fg, z_bg), (q_fg, q_bg))."""
        z_fg, z_bg = self.encode_layers(frame, mask)
        q_fg = quantize(z_fg, self.codebook)
        q_bg = quantize(z_bg, self.codebook)
        f_hat = self.decoder(q_fg.values + q_bg.values)
        return f_hat, (z_fg, z_bg), (q_fg, q_bg)

    def generate_next(self, frame: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        f_hat, _, _ = self.forward_all(frame, mask)
        return f_hat

    def code_usage(self, indices: torch.Tensor) -> torch.Tensor:
        """Histogram of codebook usage, for diagnostics only."""
        return torch.bincount(indices.reshape(-1), minlength=self.codebook.size)


class PatchDiscriminator(nn.Module):
    """Patch-based convolutional real/fake classifier (logit per patch)."""

    def __init__(self, profile: ModelProfile):
        super().__init__()
        base, n_layers = profile.disc_base, profile.disc_layers
        layers = [nn.Conv2d(3, base, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        ch = base
        for _ in range(n_layers - 1):
            layers += [nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
                       nn.InstanceNorm2d(ch * 2),
                       nn.LeakyReLU(0.2, inplace=True)]
            ch *= 2
        layers += [nn.Conv2d(ch, ch, 4, stride=1, padding=1),
                   nn.InstanceNorm2d(ch),
                   nn.LeakyReLU(0.2, inplace=True),
                   nn.Conv2d(ch, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        return self.net(frame)

    @staticmethod
    def logit_grid_size(image_size: int, n_layers: int = 3) -> int:
        size = image_size
        for _ in range(n_layers):
            size = (size + 1) // 2
        return size - 2  # two valid-ish stride-1 4x4 convs at the end
