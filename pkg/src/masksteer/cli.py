"""Operator command line: one subcommand per pipeline stage.

Every run writes a ``run_manifest.json`` beside its outputs holding the
resolved configuration plus content hashes of its inputs, so a run is
reproducible from the manifest alone. Config files are flat ``key = value``
text; ``--set key=value`` flags override file values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import config as cfgmod


def _sha256_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for sub in sorted(path.rglob("*")):
            if sub.is_file():
                h.update(str(sub.relative_to(path)).encode())
                h.update(hashlib.sha256(sub.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, flat_config: dict,
                   inputs: dict[str, Path]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: flat_config[k] for k in sorted(flat_config)},
        "inputs": {name: _sha256_path(Path(p)) for name, p in sorted(inputs.items())},
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _apply_overrides(flat: dict, pairs: list[str]) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, val = pair.split("=", 1)
        flat[key.strip()] = cfgmod._coerce(val)
    return flat


def _load_flat(args) -> dict:
    flat = cfgmod.load_kv_file(args.config) if getattr(args, "config", None) else {}
    return _apply_overrides(flat, getattr(args, "set", None))


def cmd_synth_data(args) -> int:
    from .data import SpriteConfig, generate_sprite_dataset
    cfg = SpriteConfig(
        image_size=(args.image_size, args.image_size),
        shapes=tuple(args.shapes.split(",")),
        radius_range=(args.radius_min, args.radius_max),
        step_range=(args.step_min, args.step_max),
        n_sprites=args.n_sprites,
        clip_len=args.clip_len,
        n_clips=args.n_clips,
        seed=args.seed,
        background_amplitude=args.bg_amplitude,
        brightness_drift=args.drift,
        pixel_noise=args.noise,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"error: invalid sprite config: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    generate_sprite_dataset(cfg, out)
    flat = {f"data.{k}": (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(cfg).items() if v is not None}
    write_manifest(out, "synth-data", flat, {})
    print(f"wrote {cfg.n_clips} clips under {out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import train_stage1, train_stage2
    flat = _load_flat(args)
    flat["train.stage"] = args.stage
    if args.iters is not None:
        flat["train.iterations"] = args.iters
    if args.seed is not None:
        flat["train.seed"] = args.seed
    try:
        cfg = cfgmod.train_config_from_flat(flat)
    except (ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    inputs = {"data": Path(args.data)}
    if args.stage == 2 and not args.from_checkpoint and not cfg.single_stage:
        print("error: --stage 2 requires --from-checkpoint "
              "(a stage-1 checkpoint), unless train.single_stage=true",
              file=sys.stderr)
        return 1
    try:
        if args.stage == 1:
            ckpt = train_stage1(cfg, args.data, out)
        else:
            if args.from_checkpoint:
                inputs["from_checkpoint"] = Path(args.from_checkpoint)
            ckpt = train_stage2(cfg, args.data, out, args.from_checkpoint)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, f"train --stage {args.stage}",
                   cfgmod.train_config_to_flat(cfg), inputs)
    print(f"final checkpoint: {ckpt}")
    return 0


def _load_hard_mask(path: str):
    import numpy as np
    import torch
    from PIL import Image
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return torch.from_numpy((arr >= 128).astype(np.float32))


def cmd_fit_control(args) -> int:
    from .control import fit_control
    m_a = _load_hard_mask(args.mask_a)
    m_b = _load_hard_mask(args.mask_b)
    try:
        result = fit_control(m_a, m_b, args.mode, iters=args.iters, lr=args.lr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rec = result.params.to_json()
    rec["residual"] = result.residual
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    write_manifest(out.parent, "fit-control",
                   {"fit.mode": args.mode, "fit.iters": args.iters, "fit.lr": args.lr},
                   {"mask_a": Path(args.mask_a), "mask_b": Path(args.mask_b)})
    print(f"fit residual {result.residual:.6g} -> {out}")
    return 0


def _load_models(ckpt_path: str):
    from .trainer import load_checkpoint
    models, payload = load_checkpoint(ckpt_path)
    return models.eval_(), payload


def cmd_rollout(args) -> int:
    from .control import ControlParams
    from .data import load_frame_png, save_frame_png, mask_to_uint8
    from .trainer import rollout
    from PIL import Image
    try:
        models, _ = _load_models(args.ckpt)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    f0 = load_frame_png(Path(args.frame))
    controls = [ControlParams.from_json(rec)
                for rec in json.loads(Path(args.controls).read_text())]
    frames, masks = rollout(models, f0, controls)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (f, m) in enumerate(zip(frames, masks)):
        save_frame_png(f, out / f"frame_{i:03d}.png")
        Image.fromarray(mask_to_uint8(m), mode="L").save(out / f"mask_{i:03d}.png")
    write_manifest(out, "rollout", {"rollout.n_controls": len(controls)},
                   {"ckpt": Path(args.ckpt), "frame": Path(args.frame),
                    "controls": Path(args.controls)})
    print(f"wrote {len(frames)} frames under {out}")
    return 0


def cmd_mimic(args) -> int:
    from .data import load_clip, load_frame_png, save_frame_png
    from .trainer import mimic
    try:
        models, _ = _load_models(args.ckpt)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    driving_dir = Path(args.driving)
    clip = load_clip(driving_dir.parent, driving_dir.name, with_gt=False)
    target = load_frame_png(Path(args.target_frame))
    try:
        frames, _ = mimic(models, clip.frames, target)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_frame_png(f, out / f"frame_{i:03d}.png")
    write_manifest(out, "mimic", {},
                   {"ckpt": Path(args.ckpt), "driving": driving_dir,
                    "target_frame": Path(args.target_frame)})
    print(f"wrote {len(frames)} frames under {out}")
    return 0


def cmd_eval(args) -> int:
    from .data import list_clip_ids
    from .metrics import evaluate
    try:
        models, _ = _load_models(args.ckpt)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    clip_ids = list_clip_ids(args.data)
    if args.max_clips:
        clip_ids = clip_ids[: args.max_clips]
    report = evaluate(models, args.data, clip_ids, tau=args.tau)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out.parent, "eval", {"eval.tau": args.tau,
                                        "eval.max_clips": args.max_clips},
                   {"ckpt": Path(args.ckpt), "data": Path(args.data)})
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app, load_model_entry
    registry = {}
    for spec in args.model:
        if "=" in spec:
            model_id, path = spec.split("=", 1)
        else:
            model_id, path = Path(spec).stem, spec
        try:
            registry[model_id] = load_model_entry(path)
        except (FileNotFoundError, ValueError) as exc:
            print(f"error: cannot load model {spec!r}: {exc}", file=sys.stderr)
            return 1
    app = create_app(registry)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_ablation_grid
    flat = _load_flat(args)
    out = Path(args.out)
    report = run_ablation_grid(args.data, out, iterations=args.iters,
                               seed=args.seed, arms=args.arms.split(","),
                               overrides=flat)
    (out / "ablation_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "ablate", {"ablate.iters": args.iters,
                                   "ablate.arms": args.arms,
                                   "ablate.seed": args.seed},
                   {"data": Path(args.data)})
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masksteer",
                                description="layered mask-steered video generation")
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate a synthetic sprite dataset")
    sd.add_argument("--out", required=True)
    sd.add_argument("--seed", type=int, default=0)
    sd.add_argument("--n-clips", type=int, default=100)
    sd.add_argument("--clip-len", type=int, default=6)
    sd.add_argument("--image-size", type=int, default=64)
    sd.add_argument("--radius-min", type=int, default=7)
    sd.add_argument("--radius-max", type=int, default=12)
    sd.add_argument("--step-min", type=int, default=1)
    sd.add_argument("--step-max", type=int, default=4)
    sd.add_argument("--n-sprites", type=int, default=1)
    sd.add_argument("--shapes", default="disk,square,triangle")
    sd.add_argument("--bg-amplitude", type=float, default=0.25)
    sd.add_argument("--drift", type=float, default=0.0)
    sd.add_argument("--noise", type=float, default=0.0)
    sd.set_defaults(func=cmd_synth_data)

    tr = sub.add_parser("train", help="run one training stage")
    tr.add_argument("--stage", type=int, choices=(1, 2), required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="flat key=value config file")
    tr.add_argument("--from-checkpoint", help="stage-1 checkpoint (stage 2)")
    tr.add_argument("--iters", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key")
    tr.set_defaults(func=cmd_train)

    fc = sub.add_parser("fit-control", help="recover a control between two masks")
    fc.add_argument("--mask-a", required=True)
    fc.add_argument("--mask-b", required=True)
    fc.add_argument("--mode", default="affine", choices=("positional", "affine"))
    fc.add_argument("--iters", type=int, default=1000)
    fc.add_argument("--lr", type=float, default=0.1)
    fc.add_argument("--out", default="theta.json")
    fc.set_defaults(func=cmd_fit_control)

    ro = sub.add_parser("rollout", help="generate frames from a control sequence")
    ro.add_argument("--ckpt", required=True)
    ro.add_argument("--frame", required=True)
    ro.add_argument("--controls", required=True, help="JSON list of control records")
    ro.add_argument("--out", required=True)
    ro.set_defaults(func=cmd_rollout)

    mi = sub.add_parser("mimic", help="re-enact a driving clip on a new start frame")
    mi.add_argument("--ckpt", required=True)
    mi.add_argument("--driving", required=True, help="clip directory")
    mi.add_argument("--target-frame", required=True)
    mi.add_argument("--out", required=True)
    mi.set_defaults(func=cmd_mimic)

    ev = sub.add_parser("eval", help="write the evaluation report")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default="report.json")
    ev.add_argument("--tau", type=float, default=0.1)
    ev.add_argument("--max-clips", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    se = sub.add_parser("serve", help="run the interactive session service")
    se.add_argument("--model", action="append", required=True,
                    metavar="[ID=]CKPT", help="checkpoint to serve (repeatable)")
    se.add_argument("--host", default="127.0.0.1")
    se.add_argument("--port", type=int, default=8000)
    se.set_defaults(func=cmd_serve)

    ab = sub.add_parser("ablate", help="run the design-choice toggle grid")
    ab.add_argument("--data", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--iters", type=int, default=400)
    ab.add_argument("--seed", type=int, default=0)
    ab.add_argument("--arms", default="full,no_bg,no_fg,no_bin,fixed_prior,single_stage")
    ab.add_argument("--config")
    ab.add_argument("--set", action="append", metavar="KEY=VALUE")
    ab.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
