"""Command-line entry points.

Subcommands cover the full workflow: synthetic data generation, masked
pretraining, supervised finetuning, evaluation, slide-level multi-task
training/evaluation on tile bags, parameter accounting, attention-map
export, reconstruction previews, and the invariant self-check suite.

Training options resolve in three layers: dataclass defaults, then an
optional --config JSON file, then explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels, selfcheck
from .backbone import Encoder, EncoderConfig, desk_preset, full_preset, param_breakdown, tiny_preset
from .checkpoint import load_checkpoint, load_model_state, model_state, save_checkpoint
from .data import (compute_norm_stats, load_split, normalize, read_image,
                   split_dataset, write_image)
from .augment import bilinear_resize
from .gradcam import gradcam, overlay
from .metrics import auc_ovr, binary_auc
from .mil import (Bag, MilModel, TaskSpec, predict_with_resampling, read_bag,
                  read_manifest, write_bag, write_manifest)
from .optim import AdamW, WarmupCosine, clip_grad_norm
from .pretrain import PretrainModel, make_mask, stack_masks, unpatchify
from .synthetic import synthetic_bags, write_image_dataset
from .tensor import Tensor, no_grad
from .train import (FinetuneConfig, MetricsLog, PretrainConfig, evaluate,
                    finetune_run, pretrain_run)

PRESETS = {"full": full_preset, "desk": desk_preset, "tiny": tiny_preset}


# -- option plumbing ---------------------------------------------------------


def _merge_config(cls, config_path: str | None, flag_values: dict):
    """Dataclass defaults <- JSON file <- explicit flags."""
    merged = {}
    if config_path:
        merged.update(json.loads(Path(config_path).read_text()))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise SystemExit(f"unknown {cls.__name__} options: {', '.join(unknown)}")
    return cls(**merged)


def _encoder_config(args) -> EncoderConfig:
    cfg = PRESETS[args.preset]()
    updates = {}
    if getattr(args, "img_size", None) is not None:
        updates["img_size"] = args.img_size
    if getattr(args, "classes", None) is not None:
        updates["num_classes"] = args.classes
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    cfg.validate()
    return cfg


def _load_dataset(data_root, seed: int, cfg: EncoderConfig):
    """Split, load, and normalize with train-split statistics."""
    splits = split_dataset(data_root, seed)
    train_x, train_y = load_split(splits, "train", cfg.img_size)
    mean, std = compute_norm_stats(train_x)
    out = {"train": (normalize(train_x, mean, std), train_y)}
    for name in ("val", "test"):
        if splits.files[name]:
            x, y = load_split(splits, name, cfg.img_size)
            out[name] = (normalize(x, mean, std), y)
    return out, mean, std, splits


def _snapshot(cfg: EncoderConfig, mean: np.ndarray, std: np.ndarray, **extra) -> dict:
    snap = {"encoder": cfg.to_dict(),
            "norm_mean": [float(v) for v in mean],
            "norm_std": [float(v) for v in std]}
    snap.update(extra)
    return snap


def _restore_encoder(ckpt) -> tuple[Encoder, np.ndarray, np.ndarray]:
    cfg = EncoderConfig.from_dict(ckpt.config["encoder"])
    model = Encoder(cfg, np.random.default_rng(0))
    mean = np.asarray(ckpt.config["norm_mean"], dtype=np.float64)
    std = np.asarray(ckpt.config["norm_std"], dtype=np.float64)
    return model, mean, std


def _restore_pretrain(ckpt) -> tuple[PretrainModel, np.ndarray, np.ndarray]:
    cfg = EncoderConfig.from_dict(ckpt.config["encoder"])
    rng = np.random.default_rng(0)
    model = PretrainModel(Encoder(cfg, rng), rng,
                          decoder_dim=ckpt.config["decoder_dim"],
                          decoder_depth=ckpt.config["decoder_depth"])
    mean = np.asarray(ckpt.config["norm_mean"], dtype=np.float64)
    std = np.asarray(ckpt.config["norm_std"], dtype=np.float64)
    return model, mean, std


def _prepare_image(path, size: int, mean, std) -> tuple[np.ndarray, np.ndarray]:
    """Returns (normalized float image, [0,1] float image) at model size."""
    raw = read_image(path).astype(np.float64) / 255.0
    if raw.shape[:2] != (size, size):
        raw = bilinear_resize(raw, size, size)
    return normalize(raw, mean, std), raw


# -- subcommands -------------------------------------------------------------


def cmd_synth_images(args) -> int:
    names = write_image_dataset(args.out, args.kind, args.per_class,
                                args.size, args.seed)
    print(f"wrote {args.per_class} x {len(names)} images under {args.out} "
          f"(classes: {', '.join(names)})")
    return 0


def cmd_synth_bags(args) -> int:
    out = Path(args.out)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    tasks = [TaskSpec("grade", "classification", 3), TaskSpec("risk", "regression")]
    records = {}
    for item in synthetic_bags(args.n_bags, (args.tiles_min, args.tiles_max),
                               args.embed_dim, rng, args.missing_rate):
        bag = Bag(item["slide_id"], item["embeddings"], item["coords"])
        rel = f"bags/{item['slide_id']}.hsbg"
        write_bag(out / rel, bag)
        records[item["slide_id"]] = {"path": rel, "labels": item["labels"]}
    write_manifest(out / "manifest.tsv", tasks, records)
    (out / "tasks.json").write_text(json.dumps(
        [dataclasses.asdict(t) for t in tasks], indent=2) + "\n")
    print(f"wrote {args.n_bags} bags, manifest.tsv, tasks.json under {out}")
    return 0


def cmd_params(args) -> int:
    cfg = _encoder_config(args)
    model = Encoder(cfg, np.random.default_rng(0))
    groups = param_breakdown(model)
    for name in sorted(groups):
        print(f"{name:12s} {groups[name]:>12,d}")
    total = model.param_count(include_bias=not args.no_bias)
    label = "total (weights only)" if args.no_bias else "total"
    print(f"{label}: {total:,d}")
    return 0


def cmd_check(args) -> int:
    results = selfcheck.run_all()
    width = max(len(name) for name, _, _ in results)
    failed = 0
    for name, ok, detail in results:
        print(f"{name:<{width}s}  {'PASS' if ok else 'FAIL'}  {detail}")
        failed += 0 if ok else 1
    print(f"kernel backend: {kernels.backend()}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_pretrain(args) -> int:
    cfg = _encoder_config(args)
    run_cfg = _merge_config(PretrainConfig, args.config, {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "base_lr": args.lr, "mask_ratio": args.mask_ratio,
        "warmup_epochs": args.warmup_epochs, "seed": args.seed,
    })
    data, mean, std, _ = _load_dataset(args.data, run_cfg.seed, cfg)
    images = data["train"][0]
    rng = np.random.default_rng(run_cfg.seed)
    model = PretrainModel(Encoder(cfg, rng), rng)
    log = MetricsLog(args.metrics)
    history = pretrain_run(model, images, run_cfg, log)
    params, buffers = model_state(model)
    save_checkpoint(args.out, "pretrain",
                    _snapshot(cfg, mean, std,
                              decoder_dim=model.decoder_dim,
                              decoder_depth=len(model.blocks),
                              run=dataclasses.asdict(run_cfg)),
                    params, buffers)
    print(f"pretrain: {len(images)} images, {run_cfg.epochs} epochs, "
          f"loss {history[0]:.5f} -> {history[-1]:.5f}; saved {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _encoder_config(args)
    run_cfg = _merge_config(FinetuneConfig, args.config, {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "base_lr": args.lr, "mixup_alpha": args.mixup,
        "warmup_epochs": args.warmup_epochs, "seed": args.seed,
        "max_steps": args.max_steps, "eval_every": args.eval_every,
    })
    data, mean, std, splits = _load_dataset(args.data, run_cfg.seed, cfg)
    if cfg.num_classes < len(splits.classes):
        raise SystemExit(f"preset has {cfg.num_classes} classes but dataset "
                         f"has {len(splits.classes)}; pass --classes")
    rng = np.random.default_rng(run_cfg.seed)
    model = Encoder(cfg, rng)
    if args.init:
        init_ckpt = load_checkpoint(args.init)
        pre, _, _ = _restore_pretrain(init_ckpt)
        if pre.encoder.cfg != cfg:
            raise SystemExit(f"--init encoder config {pre.encoder.cfg} does not "
                             f"match requested config {cfg}")
        load_model_state(pre, init_ckpt)
        model = pre.encoder
    eval_x, eval_y = data.get("val", data["train"])
    log = MetricsLog(args.metrics)
    history = finetune_run(model, *data["train"], run_cfg,
                           eval_images=eval_x, eval_labels=eval_y, log=log)
    params, buffers = model_state(model)
    save_checkpoint(args.out, "encoder",
                    _snapshot(cfg, mean, std, classes=splits.classes,
                              run=dataclasses.asdict(run_cfg)),
                    params, buffers)
    last = history["train_loss"][-1] if history["train_loss"] else float("nan")
    print(f"finetune: final train loss {last:.5f}; saved {args.out}")
    for name in ("val", "test"):
        if name in data:
            report = evaluate(model, *data[name])
            log.write({"phase": "final", "split": name, **report})
            print(f"  {name}: " + ", ".join(f"{k}={v:.3f}" for k, v in report.items()))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind != "encoder":
        raise SystemExit(f"eval needs an encoder checkpoint, got {ckpt.kind!r}")
    model, mean, std = _restore_encoder(ckpt)
    load_model_state(model, ckpt)
    splits = split_dataset(args.data, args.seed)
    x, y = load_split(splits, args.split, model.cfg.img_size)
    report = evaluate(model, normalize(x, mean, std), y)
    record = {"split": args.split, "n": int(y.size), **report}
    if args.metrics:
        MetricsLog(args.metrics).write(record)
    print(json.dumps(record, sort_keys=True))
    return 0


def _load_tasks(path) -> list[TaskSpec]:
    return [TaskSpec(**d) for d in json.loads(Path(path).read_text())]


def _resolve_bag_path(manifest_path, cell: str) -> Path:
    p = Path(cell)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def cmd_mil_train(args) -> int:
    tasks = _load_tasks(args.tasks)
    records = read_manifest(args.manifest, tasks)
    bags = []
    for sid, rec in records.items():
        bag = read_bag(_resolve_bag_path(args.manifest, rec["path"]))
        bag.labels = rec["labels"]
        bags.append(bag)
    if not bags:
        raise SystemExit("mil-train: empty manifest")
    embed_dim = bags[0].embeddings.shape[1]
    rng = np.random.default_rng(args.seed)
    model = MilModel(embed_dim, tasks, rng, model_dim=args.model_dim,
                     depth=args.depth)
    total = args.epochs * len(bags)
    sched = WarmupCosine(args.lr, args.lr * 0.01, max(1, total // 10), total)
    opt = AdamW(list(model.named_params()), args.lr, weight_decay=0.05)
    log = MetricsLog(args.metrics)
    order_rng = np.random.default_rng(args.seed + 1)
    step = 0
    for epoch in range(args.epochs):
        losses = []
        for i in order_rng.permutation(len(bags)):
            loss, used = model.joint_loss(bags[i])
            if loss is None:
                step += 1
                continue
            opt.zero_grad()
            loss.backward()
            clip_grad_norm([p for _, p in opt.named_params], 5.0)
            opt.step(lr=sched.lr_at(step))
            losses.append(loss.item())
            step += 1
        if losses:
            epoch_loss = float(np.mean(losses))
            log.write({"phase": "mil", "epoch": epoch, "loss": epoch_loss})
            if epoch == 0 or epoch == args.epochs - 1:
                print(f"epoch {epoch}: loss {epoch_loss:.5f}")
    params, buffers = model_state(model)
    save_checkpoint(args.out, "mil",
                    {"embed_dim": embed_dim, "model_dim": args.model_dim,
                     "depth": args.depth,
                     "tasks": [dataclasses.asdict(t) for t in tasks]},
                    params, buffers)
    print(f"saved {args.out}")
    return 0


def cmd_mil_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind != "mil":
        raise SystemExit(f"mil-eval needs a mil checkpoint, got {ckpt.kind!r}")
    tasks = [TaskSpec(**d) for d in ckpt.config["tasks"]]
    model = MilModel(ckpt.config["embed_dim"], tasks, np.random.default_rng(0),
                     model_dim=ckpt.config["model_dim"], depth=ckpt.config["depth"])
    load_model_state(model, ckpt)
    model.eval()
    records = read_manifest(args.manifest, tasks)
    outputs: dict[str, list] = {t.name: [] for t in tasks}
    for sid in sorted(records):
        rec = records[sid]
        bag = read_bag(_resolve_bag_path(args.manifest, rec["path"]))
        tiles = min(args.tiles, bag.n_tiles)
        preds = predict_with_resampling(model, bag, tiles, n_rounds=args.rounds,
                                        seed=args.seed)
        for t in tasks:
            if t.name in rec["labels"]:
                outputs[t.name].append((rec["labels"][t.name], preds[t.name]))
    report: dict = {}
    for t in tasks:
        pairs = outputs[t.name]
        if not pairs:
            continue
        if t.kind == "classification":
            y = np.array([p[0] for p in pairs])
            logits = np.stack([np.ravel(p[1]) for p in pairs])
            acc = float((logits.argmax(axis=1) == y).mean() * 100)
            entry = {"n": len(pairs), "accuracy": acc}
            shifted = logits - logits.max(axis=1, keepdims=True)
            probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
            try:
                entry["auc"] = (binary_auc(y, probs[:, 1]) if t.num_classes == 2
                                else auc_ovr(y, probs))
            except ValueError:
                pass  # single-class label sets have no defined AUC
            report[t.name] = entry
        else:
            err = float(np.mean([abs(float(np.ravel(p[1])[0]) - p[0]) for p in pairs]))
            report[t.name] = {"n": len(pairs), "mae": err}
    if args.metrics:
        MetricsLog(args.metrics).write(report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_gradcam(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind != "encoder":
        raise SystemExit(f"gradcam needs an encoder checkpoint, got {ckpt.kind!r}")
    model, mean, std = _restore_encoder(ckpt)
    load_model_state(model, ckpt)
    norm_img, raw = _prepare_image(args.image, model.cfg.img_size, mean, std)
    cam = gradcam(model, norm_img, args.class_index, stage=args.stage)
    blended = overlay(np.round(raw * 255).astype(np.uint8), cam)
    write_image(args.out, blended)
    print(f"wrote {args.out} (heatmap range {cam.min():.3f}..{cam.max():.3f})")
    return 0


def cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind != "pretrain":
        raise SystemExit(f"reconstruct needs a pretrain checkpoint, got {ckpt.kind!r}")
    model, mean, std = _restore_pretrain(ckpt)
    load_model_state(model, ckpt)
    model.eval()
    cfg = model.encoder.cfg
    norm_img, raw = _prepare_image(args.image, cfg.img_size, mean, std)
    rng = np.random.default_rng(args.seed)
    spec = make_mask((cfg.grid_size, cfg.grid_size), args.mask_ratio, rng)
    mask = stack_masks([spec])
    with no_grad():
        preds = model.predict(Tensor(norm_img[None]), mask)
    recon = unpatchify(preds.data.astype(np.float64), cfg.patch_size, cfg.in_chans)[0]
    recon = np.clip(recon * std + mean, 0.0, 1.0)
    pixel_mask = np.kron(mask[0, :, :, 0],
                         np.ones((cfg.patch_size, cfg.patch_size)))[:, :, None]
    masked_view = raw * (1 - pixel_mask) + 0.5 * pixel_mask
    strip = np.concatenate([masked_view, recon, raw], axis=1)
    write_image(args.out, np.round(strip * 255).astype(np.uint8))
    print(f"wrote {args.out} ({spec.n_masked}/{cfg.grid_size ** 2} patches masked)")
    return 0


# -- parser ------------------------------------------------------------------


def _add_encoder_flags(p, default_preset="desk"):
    p.add_argument("--preset", choices=sorted(PRESETS), default=default_preset)
    p.add_argument("--img-size", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)


def _add_run_flags(p):
    p.add_argument("--config", default=None, help="JSON file of run options")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--metrics", default=None, help="append JSONL records here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histoscan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-images", help="write a synthetic image dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("textures", "shapes"), default="shapes")
    p.add_argument("--per-class", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_images)

    p = sub.add_parser("synth-bags", help="write synthetic tile bags + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n-bags", type=int, default=48)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--tiles-min", type=int, default=20)
    p.add_argument("--tiles-max", type=int, default=60)
    p.add_argument("--missing-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_bags)

    p = sub.add_parser("params", help="print parameter counts per group")
    _add_encoder_flags(p, default_preset="full")
    p.add_argument("--no-bias", action="store_true",
                   help="count weight matrices only")
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("check", help="run the invariant self-check suite")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--mask-ratio", type=float, default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised classifier training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", default=None, help="pretrain checkpoint to start from")
    _add_encoder_flags(p)
    _add_run_flags(p)
    p.add_argument("--mixup", type=float, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate an encoder checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0,
                   help="must match the split seed used in training")
    p.add_argument("--metrics", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("mil-train", help="train the multi-task slide head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tasks", required=True, help="JSON list of task specs")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--model-dim", type=int, default=64)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", default=None)
    p.set_defaults(fn=cmd_mil_train)

    p = sub.add_parser("mil-eval", help="evaluate a slide head with resampling")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tiles", type=int, default=32, help="tiles per round")
    p.add_argument("--rounds", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", default=None)
    p.set_defaults(fn=cmd_mil_eval)

    p = sub.add_parser("gradcam", help="class-activation overlay for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class-index", type=int, required=True)
    p.add_argument("--stage", type=int, default=-1,
                   help="encoder stage to read activations from")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gradcam)

    p = sub.add_parser("reconstruct", help="masked | reconstructed | original strip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_reconstruct)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
