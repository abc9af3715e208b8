"""Layered next-frame video generation steered by editing a foreground mask."""

from .config import LossWeights, ModelProfile, TrainConfig, PROFILES
from .control import ControlParams, binarize, compose_masks, fit_control, warp_mask
from .data import ClipRecord, FramePair, SpriteConfig, generate_sprite_dataset, load_frame_pairs
from .losses import (adaptive_gan_weight, change_map, loss_bg, loss_bg_stage2,
                     loss_bin, loss_fg, loss_gan, loss_percept, loss_vq,
                     ratio_schedule)
from .masknet import MaskNet
from .metrics import mask_centroid, mask_iou, psnr, rmsed
from .trainer import (ModelBundle, build_models, load_checkpoint, mimic,
                      rollout, save_checkpoint, train_stage1, train_stage2)
from .vqgen import Codebook, Generator, PatchDiscriminator, QuantizedGrid, quantize

__version__ = "0.1.0"
