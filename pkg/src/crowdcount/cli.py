"""Command-line interface: dataset synthesis, training, evaluation,
inpainting previews, density plots and scan benchmarks."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .annotations import AnnotationRecord, save_annotations
from .config import load_config
from .density import DensityMap, generate_density_map, load_density, save_density
from .synth import BACKGROUND_STYLES, synth_scene


def _cmd_synth(args):
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([args.seed, 0x5CE])
    records = []
    for i in range(args.n):
        n_people = int(rng.integers(args.min_count, args.max_count + 1))
        style = BACKGROUND_STYLES[int(rng.integers(len(BACKGROUND_STYLES)))]
        image, ann = synth_scene(
            seed=args.seed * 1_000_003 + i,
            n_people=n_people,
            size=(args.size, args.size),
            background_style=style,
        )
        name = f"scene_{i:05d}.png"
        Image.fromarray(image).save(out / "images" / name)
        records.append(
            AnnotationRecord(
                image=f"images/{name}",
                width=args.size,
                height=args.size,
                points=[[float(x), float(y)] for x, y in ann.points],
            )
        )
        if args.write_density:
            dm = generate_density_map(ann, stride=8, mode="adaptive", sigma_fixed=4.0)
            save_density(dm, out / "images" / f"scene_{i:05d}.dmap")
    save_annotations(records, out / "annotations.jsonl")
    print(f"wrote {args.n} scenes to {out}")


def _cmd_train(args):
    from .trainer import Trainer

    cfg = load_config(args.config)
    trainer = Trainer(cfg)
    if args.resume:
        trainer.load(args.resume)
        print(f"resumed from {args.resume} at epoch {trainer.epoch}")
    try:
        history = trainer.fit()
    finally:
        trainer.close()
    ckpt = Path(cfg.out_dir) / "checkpoint.pt"
    trainer.save(ckpt)
    last = history[-1] if history else {}
    print(f"trained {trainer.epoch} epochs; checkpoint: {ckpt}")
    if "val_mae" in last:
        print(f"val MAE {last['val_mae']:.3f}  RMSE {last['val_rmse']:.3f}")


def _load_model_from_ckpt(config_path, ckpt_path, use_teacher=True):
    from .checkpoint import load_checkpoint
    from .config import config_digest
    from .density import BinSpec
    from .heads import CountingModel
    from .scan import get_scan_fn

    cfg = load_config(config_path)
    state = load_checkpoint(ckpt_path, expected_digest=config_digest(cfg))
    model = CountingModel(
        num_bins=BinSpec(cfg.bin_edges).num_bins,
        channels=tuple(cfg.model.channels),
        depths=tuple(cfg.model.depths),
        state_dim=cfg.model.state_dim,
        scan_fn=get_scan_fn(cfg.scan_backend),
    )
    model.load_state_dict(state["teacher" if use_teacher else "student"])
    model.eval()
    return cfg, model


def _cmd_eval(args):
    from .dataset import SceneDataset
    from .evaluate import evaluate, predict_density

    cfg, model = _load_model_from_ckpt(args.config, args.ckpt, not args.student)
    ds = SceneDataset(args.data)
    result = evaluate(model, ds, stride=cfg.stride)
    print(f"MAE  {result.mae:.4f}")
    print(f"RMSE {result.rmse:.4f}")
    if args.dump_dir:
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for i in range(len(ds)):
            dens = predict_density(model, ds.load_image(i), stride=cfg.stride)
            save_density(
                DensityMap(dens, stride=cfg.stride), dump / f"{ds.image_id(i)}.dmap"
            )
        counts = [
            {"image": img, "gt": gt, "pred": pred}
            for img, gt, pred in result.per_image
        ]
        (dump / "counts.json").write_text(json.dumps(counts, indent=2))
        print(f"wrote per-image densities to {dump}")


def _cmd_inpaint_preview(args):
    from .dataset import image_to_unit, to_model_input
    from .inpaint import get_inpaint_backend, make_inpaint_record
    from .prompts import PromptStore

    cfg, model = _load_model_from_ckpt(args.config, args.ckpt)
    image = np.asarray(Image.open(args.image).convert("RGB"))
    h, w = image.shape[:2]
    if h % 8 or w % 8:
        image = image[: h - h % 8, : w - w % 8]
    import torch

    with torch.no_grad():
        _, probs = model(to_model_input(image_to_unit(image)).unsqueeze(0))
    backend_kwargs = {}
    if args.backend == "diffusion-service":
        backend_kwargs = {"url": args.url or cfg.service_url}
    backend = get_inpaint_backend(args.backend, **backend_kwargs)
    record = make_inpaint_record(
        image,
        probs[0],
        PromptStore(),
        backend,
        source_id=Path(args.image).stem,
        epoch=0,
        seed=args.seed,
        stride=cfg.stride,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(record.image).save(out / "inpainted.png")
    Image.fromarray(record.mask * 255).save(out / "mask.png")
    print(f"prompt #{record.prompt_index}; wrote {out}/inpainted.png and mask.png")


def _cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    dm = load_density(args.density)
    fig, ax = plt.subplots(figsize=(6, 6))
    im = ax.imshow(dm.values, cmap="jet")
    ax.set_title(f"count = {dm.count:.2f} (stride {dm.stride})")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(args.out, dpi=120, bbox_inches="tight")
    print(f"wrote {args.out}")


def _cmd_bench_scan(args):
    from .scan import bench_scan

    result = bench_scan(
        backend=args.backend, length=args.length, repeats=args.repeats
    )
    print(
        f"{result['backend']}: L={result['length']} C={result['channels']} "
        f"{result['seconds'] * 1e3:.2f} ms  ({result['steps_per_s']:.0f} steps/s)"
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdcount")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--min-count", type=int, default=5)
    s.add_argument("--max-count", type=int, default=80)
    s.add_argument("--write-density", action="store_true")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("train", help="train from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", default=None)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--student", action="store_true", help="evaluate the student weights")
    s.add_argument("--dump-dir", default=None)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("inpaint-preview", help="inpaint one image's background")
    s.add_argument("--image", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--backend", choices=["mock", "diffusion-service"], default="mock")
    s.add_argument("--url", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_inpaint_preview)

    s = sub.add_parser("plot", help="render a density raster to PNG")
    s.add_argument("--density", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_plot)

    s = sub.add_parser("bench-scan", help="time a scan backend")
    s.add_argument("--backend", choices=["reference", "native"], default="reference")
    s.add_argument("--length", type=int, default=4096)
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=_cmd_bench_scan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
