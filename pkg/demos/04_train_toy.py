"""
Two-stage training on a desk-size dataset
=========================================

A miniature end-to-end run: stage I discovers the foreground mask while
learning next-frame generation; stage II freezes the mask network and
fine-tunes the generator to obey warped, binarized masks. Budgets here are
tiny so the script finishes in a few minutes; see the README for the full
desk-scale recipe.
"""

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from masksteer import SpriteConfig, TrainConfig, generate_sprite_dataset
from masksteer.trainer import train_stage1, train_stage2

out = Path("demo_out/train")
data = out / "data"
generate_sprite_dataset(SpriteConfig(n_clips=60, clip_len=6, seed=5), data)

stage1 = TrainConfig(stage=1, iterations=300, batch_size=8, seed=0,
                     checkpoint_every=0)
ckpt1 = train_stage1(stage1, data, out / "stage1")
print("stage-1 checkpoint:", ckpt1)

stage2 = TrainConfig(stage=2, iterations=150, batch_size=8, seed=0,
                     checkpoint_every=0, fit_iters=100)
ckpt2 = train_stage2(stage2, data, out / "stage2", ckpt1)
print("stage-2 checkpoint:", ckpt2)

# plot the loss trails from the metrics CSV
series = defaultdict(lambda: ([], []))
with (out / "stage1" / "metrics.csv").open() as fh:
    for row in csv.DictReader(fh):
        xs, ys = series[row["loss_name"]]
        xs.append(int(row["iter"]))
        ys.append(float(row["value"]))
fig, ax = plt.subplots(figsize=(7, 4))
for name in ("total", "vq", "bg", "fg", "bin", "mask_mean"):
    xs, ys = series[name]
    ax.plot(xs, ys, label=name)
ax.set_xlabel("iteration")
ax.set_yscale("log")
ax.legend(ncol=3, fontsize=8)
fig.tight_layout()
fig.savefig("demo_out/stage1_losses.png", dpi=80)
print("wrote demo_out/stage1_losses.png")
