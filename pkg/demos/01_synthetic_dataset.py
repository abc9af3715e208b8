"""
Synthetic moving-sprite datasets
================================

Generate a tiny dataset with known ground truth and look inside: each clip is
a textured sprite gliding over a fixed background, with per-frame masks and
center coordinates recorded in the manifest.
"""

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from masksteer import SpriteConfig, generate_sprite_dataset
from masksteer.data import load_clip

out = Path("demo_out/dataset")
cfg = SpriteConfig(n_clips=4, clip_len=6, seed=7)
manifest = generate_sprite_dataset(cfg, out)

# the manifest is one JSON record per clip
for line in manifest.read_text().splitlines():
    rec = json.loads(line)
    print(rec["clip_id"], "centers:", [tuple(c) for c in rec["centers"][:3]], "...")

# frames live in [-1, 1]; ground-truth masks are hard
clip = load_clip(out, "clip_0000")
fig, axes = plt.subplots(2, len(clip.frames), figsize=(2 * len(clip.frames), 4))
for t, (frame, mask) in enumerate(zip(clip.frames, clip.gt_masks)):
    axes[0, t].imshow((frame.permute(1, 2, 0) + 1) / 2)
    axes[0, t].set_title(f"t={t}")
    axes[1, t].imshow(mask, cmap="gray")
    for ax in (axes[0, t], axes[1, t]):
        ax.axis("off")
fig.tight_layout()
fig.savefig("demo_out/dataset_preview.png", dpi=80)
print("wrote demo_out/dataset_preview.png")
