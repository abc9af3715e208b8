"""Two-stage training, checkpointing, rollout and mimicking.

Stage I discovers the foreground/background split while learning
mask-conditioned next-frame generation. Stage II freezes the mask network,
recovers a pseudo control for each training pair, and fine-tunes the
generator to obey warped, binarized masks. Checkpoints are single-file
containers written atomically; per-step scalars go to a
``iter,loss_name,value`` CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import TrainConfig, PROFILES, train_config_to_flat, train_config_from_flat
from .control import ControlParams, binarize, fit_control_batch, warp_mask
from .data import PairDataset
from .masknet import MaskNet
from .vqgen import Generator, PatchDiscriminator

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ModelBundle:
    masknet: MaskNet
    generator: Generator
    discriminator: PatchDiscriminator
    profile: str

    def eval_(self):
        for m in (self.masknet, self.generator, self.discriminator):
            m.eval()
        return self


def build_models(profile: str = "toy", seed: int | None = None) -> ModelBundle:
    if seed is not None:
        torch.manual_seed(seed)
    prof = PROFILES[profile]
    return ModelBundle(MaskNet(prof), Generator(prof), PatchDiscriminator(prof), profile)


def state_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, models: ModelBundle, cfg: TrainConfig,
                    iteration: int, optim_state: dict | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "stage": cfg.stage,
        "iteration": iteration,
        "config": train_config_to_flat(cfg),
        **(extra or {}),
        "models": {
            "masknet": models.masknet.state_dict(),
            "encoder": models.generator.encoder.state_dict(),
            "decoder": models.generator.decoder.state_dict(),
            "codebook": models.generator.codebook.state_dict(),
            "discriminator": models.discriminator.state_dict(),
        },
        "optim": optim_state or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path):
    """Returns (ModelBundle, payload dict)."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    cfg = train_config_from_flat(payload["config"])
    models = build_models(cfg.profile)
    models.masknet.load_state_dict(payload["models"]["masknet"])
    models.generator.encoder.load_state_dict(payload["models"]["encoder"])
    models.generator.decoder.load_state_dict(payload["models"]["decoder"])
    models.generator.codebook.load_state_dict(payload["models"]["codebook"])
    models.discriminator.load_state_dict(payload["models"]["discriminator"])
    return models, payload


class MetricsLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = self.path.open("a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(["iter", "loss_name", "value"])

    def write(self, iteration: int, values: dict[str, float]):
        for name, val in values.items():
            self._writer.writerow([iteration, name, f"{val:.6g}"])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    random.seed(seed)


def _scalar(val) -> float:
    return float(val.detach()) if torch.is_tensor(val) else float(val)


def _check_finite(terms: dict[str, torch.Tensor | float], iteration: int):
    for name, val in terms.items():
        v = _scalar(val)
        if not np.isfinite(v):
            raise RuntimeError(
                f"non-finite loss term '{name}' ({v}) at iteration {iteration}")


def _gan_weight(recon_side: torch.Tensor, gen_term: torch.Tensor,
                last_layer: torch.Tensor, cfg_weights) -> float:
    g_rec = torch.autograd.grad(recon_side, last_layer, retain_graph=True)[0]
    g_gan = torch.autograd.grad(gen_term, last_layer, retain_graph=True)[0]
    return losses.adaptive_gan_weight(
        float(g_rec.norm()), float(g_gan.norm()),
        delta=cfg_weights.gan_delta, clamp_max=cfg_weights.gan_clamp_max)


def train_stage1(cfg: TrainConfig, data_root: str | Path, out_dir: str | Path,
                 clip_ids: list[str] | None = None) -> Path:
    """Stage-I loop; returns the final checkpoint path."""
    if cfg.stage != 1:
        raise ValueError("train_stage1 requires cfg.stage == 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    dataset = PairDataset(data_root, clip_ids)
    models = build_models(cfg.profile)
    percept = losses.make_feature_extractor(cfg.percept_backbone, cfg.percept_seed)
    w = cfg.weights

    gen_params = (list(models.masknet.parameters())
                  + list(models.generator.parameters()))
    opt_gen = torch.optim.Adam(gen_params, lr=cfg.lr)
    opt_disc = torch.optim.Adam(models.discriminator.parameters(), lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    mlog = MetricsLog(out / "metrics.csv")

    for it in range(cfg.iterations):
        idx = rng.integers(0, len(dataset), cfg.batch_size)
        f_t, f_next, _ = dataset.batch(idx)

        m = models.masknet(f_t)
        f_hat, z_pair, q_pair = models.generator.forward_all(f_t, m)

        l_vq = losses.loss_vq(f_next, f_hat, z_pair, q_pair)
        l_percept = losses.loss_percept(f_hat, f_next, percept)
        lam_bg, lam_fg = losses.ratio_schedule(
            it, init_ratio=w.ratio_init, period=w.ratio_period,
            floor=w.ratio_floor, base_fg=w.base_fg)
        mu = losses.change_map(f_t, f_next, w.tau)
        zero = f_hat.sum() * 0.0
        l_bg = losses.loss_bg(f_t, f_next, m) if w.use_loss_bg else zero
        l_fg = (losses.loss_fg(m, mu, symmetric=w.fg_symmetric,
                               prior_mean=w.fixed_prior)
                if w.use_loss_fg else zero)
        l_bin = losses.loss_bin(m) if w.use_loss_bin else zero

        total = (w.lambda_vq * l_vq + w.lambda_percept * l_percept
                 + lam_bg * l_bg + lam_fg * l_fg + w.lambda_bin * l_bin)

        gan_active = it >= w.gan_warmup_iters
        lam_gan = 0.0
        gen_term = zero
        if gan_active:
            d_fake = models.discriminator(f_hat)
            gen_term, _ = losses.loss_gan(d_fake.detach(), d_fake)
            recon_side = w.lambda_vq * l_vq + w.lambda_percept * l_percept
            lam_gan = _gan_weight(recon_side, gen_term,
                                  models.generator.decoder.conv_out.weight, w)
            total = total + lam_gan * gen_term

        terms = {"vq": l_vq, "percept": l_percept, "bg": l_bg,
                 "fg": l_fg, "bin": l_bin, "gan_gen": gen_term,
                 "lambda_gan": lam_gan, "lambda_bg": lam_bg,
                 "mask_mean": _scalar(m.mean()), "total": total}
        _check_finite(terms, it)

        opt_gen.zero_grad(set_to_none=True)
        total.backward()
        opt_gen.step()

        if gan_active:
            for _ in range(cfg.disc_ratio):
                d_real = models.discriminator(f_next)
                d_fake = models.discriminator(f_hat.detach())
                _, disc_term = losses.loss_gan(d_real, d_fake)
                _check_finite({"gan_disc": disc_term}, it)
                opt_disc.zero_grad(set_to_none=True)
                (-disc_term).backward()
                opt_disc.step()
                terms["gan_disc"] = disc_term

        mlog.write(it, {k: _scalar(v) for k, v in terms.items()})
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_stage1_{it + 1:06d}.pt", models, cfg, it + 1,
                            extra={"image_size": dataset.image_size})

    mlog.close()
    return save_checkpoint(out / "ckpt_stage1_final.pt", models, cfg,
                           cfg.iterations, extra={"image_size": dataset.image_size})


class FitCache:
    """Disk cache of fitted controls keyed by (clip, t, mask-network hash)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._data: dict[str, list[float]] = {}
        if self.path.exists():
            self._data = json.loads(self.path.read_text())
        self._dirty = 0

    @staticmethod
    def key(clip_id: str, t: int, mask_hash: str) -> str:
        return f"{clip_id}|{t}|{mask_hash[:16]}"

    def get(self, key: str):
        return self._data.get(key)

    def put(self, key: str, theta: list[float], residual: float):
        self._data[key] = [*theta, residual]
        self._dirty += 1
        if self._dirty >= 256:
            self.flush()

    def flush(self):
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._data))
        os.replace(tmp, self.path)
        self._dirty = 0


def _fit_with_cache(cache: FitCache, mask_hash: str, keys, m_t, m_next,
                    cfg: TrainConfig):
    """Per-pair fitted thetas and residuals, consulting the cache first."""
    b = m_t.shape[0]
    thetas = torch.zeros(b, 6, dtype=m_t.dtype)
    residuals = torch.zeros(b, dtype=m_t.dtype)
    missing = []
    for i, (clip_id, t) in enumerate(keys):
        hit = cache.get(cache.key(clip_id, t, mask_hash))
        if hit is not None:
            thetas[i] = torch.tensor(hit[:6], dtype=m_t.dtype)
            residuals[i] = hit[6]
        else:
            missing.append(i)
    if missing:
        sub = torch.tensor(missing)
        fits = fit_control_batch(m_t[sub], m_next[sub], cfg.fit_mode,
                                 iters=cfg.fit_iters, lr=cfg.fit_lr)
        for j, i in enumerate(missing):
            th = fits[j].params.theta().to(m_t.dtype)
            thetas[i] = th
            residuals[i] = fits[j].residual
            clip_id, t = keys[i]
            cache.put(cache.key(clip_id, t, mask_hash), th.tolist(), fits[j].residual)
    return thetas, residuals


def train_stage2(cfg: TrainConfig, data_root: str | Path, out_dir: str | Path,
                 stage1_ckpt: str | Path | None, clip_ids: list[str] | None = None) -> Path:
    """Stage-II fine-tuning; mask network is frozen (verified by hash).

    With cfg.single_stage the same objective trains from scratch instead
    (ablation); no stage-1 checkpoint is used then.
    """
    if cfg.stage != 2:
        raise ValueError("train_stage2 requires cfg.stage == 2")
    if stage1_ckpt is None and not cfg.single_stage:
        raise ValueError("stage 2 requires a stage-1 checkpoint")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)
    dataset = PairDataset(data_root, clip_ids)

    if cfg.single_stage:
        models = build_models(cfg.profile)
    else:
        models, payload = load_checkpoint(stage1_ckpt)
        if payload["stage"] != 1:
            raise ValueError(f"expected a stage-1 checkpoint, got stage {payload['stage']}")
    models.masknet.requires_grad_(False)
    mask_hash = state_hash(models.masknet)

    percept = losses.make_feature_extractor(cfg.percept_backbone, cfg.percept_seed)
    w = cfg.weights
    opt_gen = torch.optim.Adam(models.generator.parameters(), lr=cfg.lr)
    opt_disc = torch.optim.Adam(models.discriminator.parameters(), lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    mlog = MetricsLog(out / "metrics.csv")
    cache = FitCache(out / "fit_cache.json")
    skipped = 0
    seen = 0

    for it in range(cfg.iterations):
        idx = rng.integers(0, len(dataset), cfg.batch_size)
        f_t, f_next, keys = dataset.batch(idx)
        with torch.no_grad():
            m_t = models.masknet(f_t)
            m_n = models.masknet(f_next)
        thetas, residuals = _fit_with_cache(cache, mask_hash, keys,
                                            m_t[:, 0], m_n[:, 0], cfg)
        keep = residuals <= cfg.fit_skip_residual
        seen += len(keys)
        skipped += int((~keep).sum())
        if not bool(keep.any()):
            mlog.write(it, {"skipped_pairs": float(skipped)})
            continue

        m_c = binarize(warp_mask(m_t[keep], thetas[keep]))
        f_hat, z_pair, q_pair = models.generator.forward_all(f_t[keep], m_c)
        l_vq = losses.loss_vq(f_next[keep], f_hat, z_pair, q_pair)
        l_percept = losses.loss_percept(f_hat, f_next[keep], percept)
        l_bg2 = losses.loss_bg_stage2(f_hat, f_next[keep], m_c)
        total = (w.lambda_vq * l_vq + w.lambda_percept * l_percept
                 + w.lambda_bg_stage2 * l_bg2)

        gan_active = it >= w.gan_warmup_iters
        lam_gan = 0.0
        gen_term = f_hat.sum() * 0.0
        if gan_active:
            d_fake = models.discriminator(f_hat)
            gen_term, _ = losses.loss_gan(d_fake.detach(), d_fake)
            recon_side = w.lambda_vq * l_vq + w.lambda_percept * l_percept
            lam_gan = _gan_weight(recon_side, gen_term,
                                  models.generator.decoder.conv_out.weight, w)
            total = total + lam_gan * gen_term

        terms = {"vq": l_vq, "percept": l_percept,
                 "bg_stage2": l_bg2, "gan_gen": gen_term, "lambda_gan": lam_gan,
                 "skip_rate": skipped / max(seen, 1), "total": total}
        _check_finite(terms, it)

        opt_gen.zero_grad(set_to_none=True)
        total.backward()
        opt_gen.step()

        if gan_active:
            for _ in range(cfg.disc_ratio):
                d_real = models.discriminator(f_next[keep])
                d_fake = models.discriminator(f_hat.detach())
                _, disc_term = losses.loss_gan(d_real, d_fake)
                _check_finite({"gan_disc": disc_term}, it)
                opt_disc.zero_grad(set_to_none=True)
                (-disc_term).backward()
                opt_disc.step()
                terms["gan_disc"] = disc_term

        mlog.write(it, {k: _scalar(v) for k, v in terms.items()})
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_stage2_{it + 1:06d}.pt", models, cfg, it + 1,
                            extra={"image_size": dataset.image_size})

    cache.flush()
    mlog.close()
    if state_hash(models.masknet) != mask_hash:
        raise RuntimeError("mask network changed during stage-II training")
    log.info("stage II done; skipped %d/%d pairs (residual gate)", skipped, seen)
    return save_checkpoint(out / "ckpt_stage2_final.pt", models, cfg, cfg.iterations,
                           extra={"image_size": dataset.image_size})


def advance(models: ModelBundle, frame: torch.Tensor, soft_mask: torch.Tensor,
            control: ControlParams):
    """One autoregressive step shared by rollout and the session service.

    Returns (next frame, its soft mask, the hard mask that conditioned it).
    """
    if control.mode == "nonparam":
        m_c = control.mask.to(frame.dtype)
        if m_c.shape != frame.shape[-2:]:
            raise ValueError(
                f"control mask {tuple(m_c.shape)} does not match frame "
                f"{tuple(frame.shape[-2:])}")
        m_c = binarize(m_c)[None, None]
    else:
        m_c = binarize(warp_mask(soft_mask, control))
    nxt = models.generator.generate_next(frame, m_c)
    return nxt, models.masknet(nxt), m_c


def rollout(models: ModelBundle, f0: torch.Tensor,
            controls: list[ControlParams]):
    """Autoregressive generation from f0 under a control sequence.

    Returns (frames, hard_masks): one generated (3,H,W) frame and the (H,W)
    hard conditioning mask per control.
    """
    if not controls:
        raise ValueError("control sequence must be non-empty")
    frame = f0.unsqueeze(0) if f0.dim() == 3 else f0
    frames, masks = [], []
    with torch.no_grad():
        soft = models.masknet(frame)
        for ctl in controls:
            frame, soft, m_c = advance(models, frame, soft, ctl)
            frames.append(frame[0])
            masks.append(m_c[0, 0])
    return frames, masks


def mimic(models: ModelBundle, driving_frames: list[torch.Tensor],
          target_f0: torch.Tensor):
    """Re-enact a driving clip's motion on a different start frame.

    Masks extracted from driving frames 1..N become non-parametric controls
    for the target; returns (frames, masks) of length N.
    """
    if len(driving_frames) < 2:
        raise ValueError("driving clip needs at least 2 frames")
    if driving_frames[0].shape[-2:] != target_f0.shape[-2:]:
        raise ValueError(
            f"resolution mismatch: driving {tuple(driving_frames[0].shape[-2:])} "
            f"vs target {tuple(target_f0.shape[-2:])}")
    controls = []
    empty = 0
    with torch.no_grad():
        for f in driving_frames[1:]:
            m = binarize(models.masknet(f.unsqueeze(0)))[0, 0]
            if float(m.sum()) == 0:
                empty += 1
            controls.append(ControlParams(mode="nonparam", mask=m))
    if empty == len(controls):
        log.warning("all driving masks are empty after binarization; "
                    "output will be near-static")
    return rollout(models, target_f0, controls)
