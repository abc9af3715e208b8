"""
Codebook quantization
=====================

Snap latent vectors to their nearest codebook entries and check the
straight-through gradient contract: the quantized values equal codebook
entries exactly, while gradients pass through to the encoder side unchanged.
"""

import torch

from masksteer import Codebook, quantize

torch.manual_seed(0)
cb = Codebook(size=8, dim=2)
with torch.no_grad():
    cb.embed.weight.copy_(torch.tensor([
        [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
        [-1.0, 0.0], [0.0, -1.0], [-1.0, -1.0], [0.5, 0.5]]))

z = torch.tensor([[0.2, 0.1], [0.9, 0.85], [-0.7, -0.2]]).T.reshape(1, 2, 3, 1)
z.requires_grad_(True)
q = quantize(z, cb)
print("indices:", q.indices.reshape(-1).tolist())
print("values == entries exactly:",
      bool(torch.equal(q.values.detach(), cb.entries[q.indices].permute(0, 3, 1, 2))))

# straight-through: upstream gradient lands on z unchanged
upstream = torch.randn_like(q.values)
(q.values * upstream).sum().backward()
print("grad copied through:", bool(torch.equal(z.grad, upstream)))

# usage histogram is exposed for diagnostics
hist = torch.bincount(q.indices.reshape(-1), minlength=cb.size)
print("usage histogram:", hist.tolist())
