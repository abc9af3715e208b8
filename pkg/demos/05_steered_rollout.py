"""
Steering a rollout and mimicking a driving clip
===============================================

Load a trained checkpoint (run demos/04_train_toy.py first, or point CKPT at
a real run), command the foreground around with positional controls, overlay
a second agent by composing masks, and re-enact one clip's motion on another
clip's start frame.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from masksteer import ControlParams, compose_masks, mimic, rollout
from masksteer.control import binarize, warp_mask
from masksteer.data import load_clip
from masksteer.trainer import load_checkpoint

CKPT = Path("demo_out/train/stage2/ckpt_stage2_final.pt")
DATA = Path("demo_out/train/data")
models, _ = load_checkpoint(CKPT)
models.eval_()

clip = load_clip(DATA, "clip_0000")
f0 = clip.frames[0]

# drive the sprite to the right, then down
controls = ([ControlParams(dx=3, dy=0)] * 4 + [ControlParams(dx=0, dy=3)] * 4)
frames, masks = rollout(models, f0, controls)

fig, axes = plt.subplots(2, len(frames) + 1, figsize=(2 * (len(frames) + 1), 4))
axes[0, 0].imshow((f0.permute(1, 2, 0) + 1) / 2)
axes[0, 0].set_title("f0")
axes[1, 0].axis("off")
for t, (f, m) in enumerate(zip(frames, masks), start=1):
    axes[0, t].imshow((f.permute(1, 2, 0) + 1) / 2)
    axes[1, t].imshow(m, cmap="gray")
for ax in axes.ravel():
    ax.axis("off")
fig.tight_layout()
fig.savefig("demo_out/steered_rollout.png", dpi=80)
print("wrote demo_out/steered_rollout.png")

# two agents: union of two independently warped copies of the same mask
with torch.no_grad():
    m0 = binarize(models.masknet(f0.unsqueeze(0))[0, 0])
left = binarize(warp_mask(m0, ControlParams(dx=-10, dy=0)))
right = binarize(warp_mask(m0, ControlParams(dx=10, dy=0)))
both = compose_masks([left, right])
frames2, _ = rollout(models, f0, [ControlParams(mode="nonparam", mask=both)])
plt.imsave("demo_out/two_agents.png",
           ((frames2[0].permute(1, 2, 0) + 1) / 2).numpy())
print("wrote demo_out/two_agents.png")

# action mimicking: drive clip_0001's motion onto clip_0000's start frame
driving = load_clip(DATA, "clip_0001").frames
mimicked, _ = mimic(models, driving, f0)
print(f"mimicked {len(mimicked)} frames from a {len(driving)}-frame driving clip")
