"""Command-line surface.

Exit codes: 0 success, 2 validation/configuration error, 3 IO error,
4 numeric failure. Config precedence is CLI flag > config file (JSON,
--config or $MOTION_DIFFUSE_CONFIG) > built-in default; the effective
training config is printed at startup.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import torch

from . import dataset as ds
from . import metrics as mx
from .denoiser import DenoiserConfig
from .editor import EditMask, edit, inbetween_mask, load_mask, prediction_mask
from .errors import (CapacityError, CheckpointError, ConfigurationError,
                     DimensionError, MotionDiffuseError, NumericError,
                     ParseError, ValidationError)
from .motion import (MotionSequence, default_skeleton, load_annotations,
                     load_motion, motion_joint_positions, save_motion)
from .sampler import SampleSpec
from .trainer import TrainConfig, TextMotionModel, Trainer, load_model

EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


def _load_config_file(path) -> dict:
    if path is None:
        path = os.environ.get("MOTION_DIFFUSE_CONFIG")
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}") from e
    if not isinstance(cfg, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    return cfg


def _build_train_config(args) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    values = {}
    file_cfg = _load_config_file(args.config)
    for key, val in file_cfg.items():
        if key not in fields:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = val
    for key in ("lr", "batch_size", "total_steps", "seed", "freeze_text",
                "diffusion_steps"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = TrainConfig(**values)
    print("effective training config:", json.dumps(dataclasses.asdict(cfg)))
    return cfg


def _load_dataset(data_dir) -> list[tuple[MotionSequence, str]]:
    ann_path = os.path.join(data_dir, "annotations.jsonl")
    if not os.path.exists(ann_path):
        raise ParseError(f"missing annotations file {ann_path}")
    items = []
    for rec in load_annotations(ann_path):
        m = load_motion(os.path.join(data_dir, rec["motion"]))
        items.append((m, rec["text"]))
    return items


def _save_sidecar(m: MotionSequence, path) -> None:
    pos = motion_joint_positions(m, default_skeleton())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"fps": m.fps, "positions": pos.tolist()}, fh)


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_synthetic(args) -> int:
    if args.per_class < 1:
        raise ConfigurationError("--per-class must be >= 1")
    classes = tuple(list(ds.DEFAULT_TEMPLATES.items())[: args.classes])
    if len(classes) < args.classes:
        raise ConfigurationError(
            f"only {len(ds.DEFAULT_TEMPLATES)} built-in classes available")
    spec = ds.DatasetSpec(classes=classes, samples_per_class=args.per_class,
                          seed=args.seed)
    manifest = ds.generate_synthetic(spec, args.out)
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _build_train_config(args)
    items = _load_dataset(args.data)
    d_motion = items[0][0].dims
    model = TextMotionModel(DenoiserConfig(
        d_model=args.d_model, n_layers=args.n_layers, n_heads=args.n_heads,
        d_ff=args.d_ff, d_motion=d_motion, max_frames=args.max_frames,
        d_text=args.d_model))
    trainer = Trainer(model, cfg, items)
    log_path = os.path.splitext(str(args.out))[0] + ".log.jsonl"
    last = trainer.run(log_path=log_path)
    trainer.save_checkpoint(args.out)
    print(f"trained {trainer.step} steps; final hybrid loss "
          f"{float(last.hybrid):.5f}; checkpoint -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    model, schedule = load_model(args.ckpt)
    if args.frames > model.cfg.max_frames:
        raise CapacityError(f"--frames {args.frames} exceeds model maximum "
                            f"{model.cfg.max_frames}")
    spec = SampleSpec(length=args.frames, guidance_scale=args.guidance,
                      steps=args.steps, method=args.method, seed=args.seed,
                      clip_x0=args.clip_x0)
    m = model.generate(args.text, schedule, spec)
    save_motion(m, args.out)
    if args.positions:
        _save_sidecar(m, os.path.splitext(str(args.out))[0] + ".pos.json")
    print(f"wrote {m.valid_len} frames to {args.out}")
    return 0


def cmd_edit(args) -> int:
    model, schedule = load_model(args.ckpt)
    ref_raw = load_motion(args.ref)
    if args.mask:
        mask = load_mask(args.mask, ref_raw)
    elif args.predict_after is not None:
        mask = prediction_mask(ref_raw, args.predict_after)
    elif args.keep_head is not None or args.keep_tail is not None:
        mask = inbetween_mask(ref_raw, args.keep_head or 0, args.keep_tail or 0)
    else:
        raise ConfigurationError(
            "provide --mask, --predict-after, or --keep-head/--keep-tail")
    spec = SampleSpec(length=ref_raw.num_frames, guidance_scale=args.guidance,
                      steps=args.steps, seed=args.seed)
    ref_norm = ref_raw.with_data(model.normalize(ref_raw.data.to(torch.float32)))
    with torch.no_grad():
        out = edit(model, schedule, ref_norm, mask, model.encode(args.text),
                   model.null_context(), spec)
    # re-overwrite preserved entries with the raw reference (in its own
    # dtype) so they stay bit-exact after the normalization round-trip
    data = model.denormalize(out.data).to(ref_raw.data.dtype)
    data = torch.where(mask.keep, ref_raw.data, data)
    result = MotionSequence(data=data, valid_len=ref_raw.valid_len, fps=ref_raw.fps)
    save_motion(result, args.out)
    if args.positions:
        _save_sidecar(result, os.path.splitext(str(args.out))[0] + ".pos.json")
    print(f"wrote edited motion to {args.out}")
    return 0


def cmd_train_extractor(args) -> int:
    items = _load_dataset(args.data)
    cfg = mx.ExtractorConfig(d_motion=items[0][0].dims,
                             max_frames=max(m.num_frames for m, _ in items))
    extractor = mx.train_feature_extractor(
        items, cfg, mx.ExtractorTrainConfig(steps=args.steps, seed=args.seed),
        log_every=args.steps // 4 or 1)
    mx.save_extractor(extractor, args.out)
    print(f"extractor checkpoint -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    if not os.path.exists(args.extractor):
        raise ConfigurationError(
            f"extractor checkpoint {args.extractor} not found; "
            "run `motiondiffuse train-extractor` first")
    model, schedule = load_model(args.ckpt)
    extractor = mx.load_extractor(args.extractor)
    items = _load_dataset(args.data)[: args.limit]
    pool = sorted({text for _, text in _load_dataset(args.data)})
    skel = default_skeleton()

    gens, refs, texts = [], [], []
    for i, (ref, text) in enumerate(items):
        spec = SampleSpec(length=ref.valid_len, guidance_scale=args.guidance,
                          steps=args.steps, seed=args.seed + i)
        gens.append(model.generate(text, schedule, spec, fps=ref.fps))
        refs.append(ref)
        texts.append(text)

    pos_pairs = [(motion_joint_positions(g, skel), motion_joint_positions(
        MotionSequence(data=r.valid(), valid_len=g.valid_len, fps=r.fps), skel))
        for g, r in zip(gens, refs)]
    ape_d = mx.average_metric(mx.ape, pos_pairs)
    ave_d = mx.average_metric(mx.ave, pos_pairs)
    with torch.no_grad():
        gen_feats = torch.stack([extractor.encode_motion(g) for g in gens]).numpy()
        ref_feats = torch.stack([extractor.encode_motion(r) for r in refs]).numpy()
    fd = mx.frechet_distance(gen_feats, ref_feats)
    mclip_mean = float(sum(mx.mclip(extractor, g, t)
                           for g, t in zip(gens, texts)) / len(gens))
    # 1 ground truth + up to 31 negatives, limited by the pool size
    k_candidates = min(32, len(pool))
    rp = mx.r_precision(extractor, gens, texts, pool, k_candidates=k_candidates,
                        gen=torch.Generator().manual_seed(args.seed))
    report = mx.MetricReport(
        ape_root=ape_d["root"], ape_traj=ape_d["traj"],
        ape_local=ape_d["local"], ape_global=ape_d["global"],
        ave_root=ave_d["root"], ave_traj=ave_d["traj"],
        ave_local=ave_d["local"], ave_global=ave_d["global"],
        mclip=mclip_mean, fd=fd,
        r_top1=rp["top1"], r_top2=rp["top2"], r_top3=rp["top3"])
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(report.table())
    print(f"report -> {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motiondiffuse")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("make-synthetic", help="generate the synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--classes", type=int, default=8)
    sp.add_argument("--per-class", dest="per_class", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_make_synthetic)

    sp = sub.add_parser("train", help="train the denoiser")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--total-steps", dest="total_steps", type=int, default=None)
    sp.add_argument("--diffusion-steps", dest="diffusion_steps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--freeze-text", dest="freeze_text", action="store_const",
                    const=True, default=None)
    sp.add_argument("--d-model", type=int, default=256)
    sp.add_argument("--n-layers", type=int, default=8)
    sp.add_argument("--n-heads", type=int, default=8)
    sp.add_argument("--d-ff", type=int, default=512)
    sp.add_argument("--max-frames", type=int, default=471)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="generate motion from text")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frames", type=int, default=64)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--guidance", type=float, default=8.0)
    sp.add_argument("--method", choices=("ddpm", "ddim"), default="ddpm")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clip-x0", dest="clip_x0", type=float, default=None,
                    help="clamp the implied clean signal to [-c, c] each step")
    sp.add_argument("--positions", action="store_true",
                    help="also write a <out>.pos.json joint-position sidecar")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("edit", help="mask-based motion editing")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--text", default="")
    sp.add_argument("--mask", default=None)
    sp.add_argument("--predict-after", dest="predict_after", type=int, default=None)
    sp.add_argument("--keep-head", dest="keep_head", type=int, default=None)
    sp.add_argument("--keep-tail", dest="keep_tail", type=int, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--guidance", type=float, default=8.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--positions", action="store_true")
    sp.set_defaults(fn=cmd_edit)

    sp = sub.add_parser("train-extractor", help="train the contrastive feature extractor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=400)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_train_extractor)

    sp = sub.add_parser("eval", help="run the evaluation metric suite")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--extractor", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--limit", type=int, default=32)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--guidance", type=float, default=8.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, DimensionError, CapacityError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParseError, CheckpointError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except MotionDiffuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
