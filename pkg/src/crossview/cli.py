"""Command-line entry points: preprocess, train, evaluate, gen-toy, plot-mapping.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import retrieval, style_align
from .config import ConfigError, RunConfig
from .data import (IMAGE_EXTS, ImageStore, ToySpec, collect_view_images,
                   generate_toy, load_image)
from .model import load_checkpoint
from .train import train_model

DIRECTIONS = ("drone2satellite", "satellite2drone")


def _iter_images(root: Path):
    return sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_EXTS)


def cmd_preprocess(args) -> int:
    satellite_dir = Path(args.satellite_dir)
    drone_dir = Path(args.drone_dir)
    out_dir = Path(args.out_dir)
    if args.mapping_in is None and args.mapping_out is None:
        raise ConfigError("either --mapping-out or --mapping-in is required")

    drone_paths = _iter_images(drone_dir) if drone_dir.is_dir() else []
    if not drone_paths:
        raise ConfigError(f"no drone images under {drone_dir}")

    if args.mapping_in is not None:
        mapping = style_align.load_mapping(args.mapping_in)
    else:
        satellite_paths = _iter_images(satellite_dir) if satellite_dir.is_dir() else []
        if not satellite_paths:
            raise ConfigError("no satellite mappings")
        mapping = style_align.corpus_mapping(
            (load_image(p) for p in satellite_paths), pooled=args.pooled)
    if args.mapping_out is not None:
        style_align.save_mapping(mapping, args.mapping_out)

    from PIL import Image
    for path in drone_paths:
        mapped = style_align.apply_mapping(load_image(path), mapping)
        target = out_dir / path.relative_to(drone_dir)
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(mapped).save(target)
    print(f"mapped {len(drone_paths)} images -> {out_dir}")
    return 0


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "preset", None):
        cfg.apply_preset(args.preset)
    if getattr(args, "config", None):
        cfg.apply_file(args.config)
    cfg.apply_env()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "drone_dir", None):
        cfg.set("data.drone_dir", args.drone_dir)
    if getattr(args, "satellite_dir", None):
        cfg.set("data.satellite_dir", args.satellite_dir)
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _build_config(args)
    if not str(cfg["data.drone_dir"]) or not str(cfg["data.satellite_dir"]):
        raise ConfigError("data.drone_dir and data.satellite_dir are required")
    for key in ("data.drone_dir", "data.satellite_dir"):
        if not Path(str(cfg[key])).is_dir():
            raise ConfigError(f"{key}: directory not found: {cfg[key]}")
    out_dir = Path(args.out_dir)
    result = train_model(cfg, out_dir)
    cfg.save(out_dir / "config.txt")
    print(f"best checkpoint: {result['checkpoint']}")
    return 0


def _extract(model, store, items, batch_size=32):
    descriptors = []
    ids = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        batch = store.batch([p for _, p in chunk])
        descriptors.append(model.retrieval_descriptors(batch))
        ids.extend(class_id for class_id, _ in chunk)
    return np.concatenate(descriptors), np.asarray(ids)


def cmd_evaluate(args) -> int:
    if args.direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")
    try:
        model = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, RuntimeError) as exc:
        raise ConfigError(str(exc)) from exc
    queries = collect_view_images(args.query_dir)
    if not queries:
        raise ConfigError("no queries")
    gallery_items = collect_view_images(args.gallery_dir)
    if not gallery_items:
        raise ConfigError("empty gallery")

    store = ImageStore(model.config.input_size)
    q_desc, q_ids = _extract(model, store, queries, args.batch_size)
    g_desc, g_ids = _extract(model, store, gallery_items, args.batch_size)
    view = "satellite" if args.direction == "drone2satellite" else "drone"
    gallery = retrieval.GalleryIndex(g_desc, g_ids, views=[view] * len(g_ids))
    report = retrieval.evaluate(q_desc, q_ids, gallery, direction=args.direction)
    report.save(args.out_dir)
    print(report.to_text(), end="")
    return 0


def cmd_gen_toy(args) -> int:
    spec = ToySpec(
        num_classes=args.classes,
        drone_views_per_class=args.views,
        image_size=args.size,
        seed=args.seed if args.seed is not None else 7,
        style_jitter=args.style_jitter,
        query_views_per_class=args.query_views,
    )
    manifest = generate_toy(spec, args.out_dir)
    print(f"wrote {len(manifest.classes)} classes under {args.out_dir}")
    return 0


def cmd_plot_mapping(args) -> int:
    mapping = style_align.load_mapping(args.mapping)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for lut, color, name in zip(mapping.luts(), ("red", "green", "blue"), "RGB"):
        ax.plot(np.arange(256), lut, color=color, label=name)
    ax.set_xlim(0, 255)
    ax.set_ylim(0, 255)
    ax.set_xlabel("input level")
    ax.set_ylabel("mapped level")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossview",
        description="Drone-to-satellite geo-localization by image retrieval.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="compute the satellite style mapping and map drone images")
    p.add_argument("--satellite-dir", default="", help="satellite image tree")
    p.add_argument("--drone-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mapping-out")
    p.add_argument("--mapping-in", help="reuse an existing mapping file")
    p.add_argument("--pooled", action="store_true",
                   help="pool satellite histograms instead of averaging per-image maps")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the geo-localization model")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", choices=["toy"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--drone-dir")
    p.add_argument("--satellite-dir")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="retrieval evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-dir", required=True)
    p.add_argument("--gallery-dir", required=True)
    p.add_argument("--direction", default="drone2satellite", choices=DIRECTIONS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-toy", help="generate the deterministic toy dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--query-views", type=int, default=2)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--style-jitter", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("plot-mapping", help="plot the three LUT curves of a mapping file")
    p.add_argument("--mapping", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_mapping)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
