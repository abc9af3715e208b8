"""Model profiles, training configuration and the flat key=value config format.

Config files are plain text, one ``section.key = value`` per line (``#``
comments allowed). CLI flags override file values. The full namespace is
documented in the README.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class ModelProfile:
    """Architecture widths for one profile (toy or full).

    The toy profile keeps the full profile's topology (block counts,
    down/upsample levels) at a quarter of the channel widths, except for the
    encoder/decoder channel plan which is fixed here (the per-level plan is
    recorded in checkpoints via this config).
    """

    name: str
    # mask network: (input width, middle width); middle level is 2x input
    masknet_width: int = 16
    masknet_mid: int = 64
    masknet_blocks: int = 9
    # generator codebook
    codebook_size: int = 128
    latent_dim: int = 32
    # encoder channel plan, first conv -> 4 downsample levels (5 entries)
    encoder_plan: tuple[int, ...] = (16, 24, 32, 48, 64)
    # patch discriminator
    disc_base: int = 32
    disc_layers: int = 3


TOY = ModelProfile(name="toy")
FULL = ModelProfile(
    name="full",
    masknet_width=64,
    masknet_mid=256,
    codebook_size=1024,
    latent_dim=256,
    encoder_plan=(256, 192, 128, 96, 64),
    disc_base=64,
)

PROFILES = {"toy": TOY, "full": FULL}


@dataclass
class LossWeights:
    """Weights and schedule knobs for the training objectives."""

    lambda_vq: float = 1.0
    lambda_percept: float = 1.0
    lambda_bin: float = 1.0
    lambda_bg_stage2: float = 5.0
    tau: float = 0.1                 # change threshold, per-pixel mean-channel l1 on [-1,1]
    gan_warmup_iters: int = 1000
    gan_delta: float = 1e-6
    gan_clamp_max: float = 1e4
    # lambda_bg : lambda_fg ratio schedule (stage I)
    ratio_init: float = 80.0
    ratio_period: int = 1000
    ratio_floor: float = 5.0
    base_fg: float = 1.0
    # ablation switches
    use_loss_bg: bool = True
    use_loss_fg: bool = True
    use_loss_bin: bool = True
    fg_symmetric: bool = False       # literal |mean(m)-mean(mu)| instead of the hinge
    fixed_prior: float | None = None  # replaces the dynamic change-map prior when set

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class TrainConfig:
    """One training run (either stage)."""

    stage: int = 1
    iterations: int = 3000
    batch_size: int = 8
    lr: float = 1e-4                 # desk default; full profile uses 4.5e-6
    profile: str = "toy"
    seed: int = 0
    checkpoint_every: int = 1000
    disc_ratio: int = 1              # discriminator steps per generator step
    weights: LossWeights = field(default_factory=LossWeights)
    # stage II only
    fit_iters: int = 200             # reduced budget inside the training loop
    fit_lr: float = 0.1
    fit_skip_residual: float = 0.02  # skip pairs whose post-fit MSE exceeds this
    fit_mode: str = "affine"
    single_stage: bool = False       # train the stage-2 objective from scratch
    percept_seed: int = 7            # seed of the fixed random feature pyramid
    percept_backbone: str = "random"  # "random" or "vgg16"

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")

    @property
    def model_profile(self) -> ModelProfile:
        return PROFILES[self.profile]


# --- flat key=value files ---------------------------------------------------

def _coerce(text: str) -> Any:
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_kv_text(text: str) -> dict[str, Any]:
    """Parse ``section.key = value`` lines into a flat dict."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = _coerce(val)
    return out


def load_kv_file(path: str | Path) -> dict[str, Any]:
    return parse_kv_text(Path(path).read_text())


def dump_kv(flat: dict[str, Any]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(flat.items()))


_TRAIN_PREFIX = "train."
_LOSS_PREFIX = "loss."


def train_config_to_flat(cfg: TrainConfig) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "weights":
            continue
        flat[_TRAIN_PREFIX + f.name] = getattr(cfg, f.name)
    for f in dataclasses.fields(LossWeights):
        flat[_LOSS_PREFIX + f.name] = getattr(cfg.weights, f.name)
    return flat


def train_config_from_flat(flat: dict[str, Any]) -> TrainConfig:
    """Build a TrainConfig from a flat dict; unknown keys are rejected."""
    train_kw: dict[str, Any] = {}
    loss_kw: dict[str, Any] = {}
    train_names = {f.name for f in dataclasses.fields(TrainConfig)}
    loss_names = {f.name for f in dataclasses.fields(LossWeights)}
    for key, val in flat.items():
        if key.startswith(_TRAIN_PREFIX) and key[len(_TRAIN_PREFIX):] in train_names:
            train_kw[key[len(_TRAIN_PREFIX):]] = val
        elif key.startswith(_LOSS_PREFIX) and key[len(_LOSS_PREFIX):] in loss_names:
            loss_kw[key[len(_LOSS_PREFIX):]] = val
        elif key.startswith(("data.", "eval.", "serve.")):
            continue  # owned by other commands
        else:
            raise ValueError(f"unknown config key: {key}")
    train_kw.pop("weights", None)
    return TrainConfig(weights=LossWeights(**loss_kw), **train_kw)
