"""Command-line entry points: training, sampling, sweeps, evaluation, serving,
mask generation, and synthetic-corpus creation."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import ATTRIBUTE_NAMES, SplitConfig, load_corpus, make_synthetic_corpus
from .losses import LossWeights
from .masks import MaskSpec, apply_mask, generate_combined_mask, load_mask, save_mask
from .train import TrainConfig, load_snapshot, sample_pluralistic, sweep_attribute
from .train import train as run_training


def load_train_toml(path) -> tuple[TrainConfig, dict]:
    """Parse a TOML config into (TrainConfig, data paths).

    Layout: [train] for loop fields, [train.weights] for loss weights,
    [model] for architecture sizes, [data] for corpus paths and the split.
    """
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    section = dict(doc.get("train", {}))
    weights = section.pop("weights", None)
    merged = {**section, **doc.get("model", {})}
    if weights is not None:
        merged["weights"] = LossWeights(**weights)
    data = dict(doc.get("data", {}))
    split_keys = {"train_count", "test_count", "shuffle_seed"}
    if split_keys & set(data):
        merged["split"] = SplitConfig(
            train_count=data.get("train_count", 0),
            test_count=data.get("test_count", 0),
            shuffle_seed=data.get("shuffle_seed", 0),
        )
    for key in ("adam_betas", "ablation", "mask_stroke_count", "mask_stroke_width", "mask_bucket"):
        if key in merged:
            merged[key] = tuple(merged[key])
    return TrainConfig(**merged), data


def _save_image(tensor: torch.Tensor, path) -> None:
    from PIL import Image

    from .data import denormalize

    Image.fromarray(denormalize(tensor)).save(path)


def _load_image(path, resolution=None) -> torch.Tensor:
    from PIL import Image

    from .data import normalize

    img = Image.open(path).convert("RGB")
    if resolution and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    return normalize(np.asarray(img, dtype=np.uint8))


def _parse_bucket_opt(text: str | None):
    if text is None:
        return None
    lo, hi = (float(p) for p in text.split(":"))
    return lo, hi


@click.group()
def refill():
    """Reference-guided facial inpainting toolkit."""


@refill.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--resume", type=click.Path(exists=True), default=None)
def train_cmd(config_path, resume):
    """Train from a TOML config; see README for the schema."""
    config, data = load_train_toml(config_path)
    corpus = load_corpus(
        data["image_dir"], data["label_file"], resolution=config.resolution,
        cache=data.get("cache", False),
    )
    snapshot = run_training(config, corpus, resume_from=resume)
    click.echo(f"finished at step {snapshot.step} (checkpoint id {snapshot.checkpoint_id()})")


@refill.command("sample")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def sample_cmd(checkpoint, image_path, mask_path, k, seed, out_dir):
    """Pluralistic completions under k random attribute draws."""
    snapshot = load_snapshot(checkpoint)
    res = snapshot.config.resolution
    image = _load_image(image_path, res)
    mask = load_mask(mask_path)
    masked = apply_mask(image, mask)
    outs, attrs = sample_pluralistic(masked, mask, k, seed, snapshot)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(k):
        _save_image(outs[i], out / f"sample_{i}.png")
    (out / "attributes.json").write_text(
        json.dumps({"seed": seed, "attributes": attrs.tolist(), "names": list(ATTRIBUTE_NAMES)})
    )
    click.echo(f"wrote {k} samples to {out}")


@refill.command("sweep")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--attr", "attr_name", required=True, help="attribute name or index")
@click.option("--from", "start", default=-1.0, show_default=True)
@click.option("--to", "stop", default=2.0, show_default=True)
@click.option("--steps", default=7, show_default=True)
@click.option("--attrs", "base_attrs", default=None, help="comma-separated base vector")
@click.option("--out", "out_dir", required=True, type=click.Path())
def sweep_cmd(checkpoint, image_path, mask_path, attr_name, start, stop, steps, base_attrs, out_dir):
    """Filmstrip varying one attribute from negative to positive intensity."""
    snapshot = load_snapshot(checkpoint)
    res = snapshot.config.resolution
    image = _load_image(image_path, res)
    mask = load_mask(mask_path)
    masked = apply_mask(image, mask)

    names = {n.lower(): i for i, n in enumerate(ATTRIBUTE_NAMES)}
    index = int(attr_name) if attr_name.isdigit() else names.get(attr_name.lower())
    if index is None:
        raise click.BadParameter(f"unknown attribute {attr_name!r}; pick from {ATTRIBUTE_NAMES}")

    if base_attrs is not None:
        base = torch.tensor([float(v) for v in base_attrs.split(",")])
    else:
        with torch.no_grad():
            base = snapshot.extractor(image)
    frames, levels = sweep_attribute(
        masked, mask, base, index, start, stop, steps, snapshot
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(steps):
        _save_image(frames[i], out / f"sweep_{i}_{levels[i]:+.2f}.png")
    click.echo(f"wrote {steps} frames to {out}")


@refill.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "label_file", required=True, type=click.Path(exists=True))
@click.option("--buckets", default="quickdraw,0.1:0.2,0.2:0.3,0.3:0.4,0.4:0.5", show_default=True)
@click.option("--max-images", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_prefix", required=True, help="writes <prefix>.csv and <prefix>.json")
def eval_cmd(checkpoint, image_dir, label_file, buckets, max_images, seed, out_prefix):
    """Bucketed SSIM (plus LPIPS/FID under a calibrated backend)."""
    from .evaluate import evaluate

    snapshot = load_snapshot(checkpoint)
    corpus = load_corpus(image_dir, label_file, resolution=snapshot.config.resolution)
    report = evaluate(
        snapshot,
        corpus,
        buckets=tuple(buckets.split(",")),
        max_images=max_images,
        seed=seed,
    )
    Path(f"{out_prefix}.csv").write_text(report.to_csv())
    Path(f"{out_prefix}.json").write_text(report.to_json())
    click.echo(report.to_csv())


@refill.command("serve")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--studio-dir", type=click.Path(exists=True), default=None)
@click.option("--max-batch", default=16, show_default=True, help="largest k per request")
def serve_cmd(checkpoint, host, port, studio_dir, max_batch):
    """Run the HTTP inference service (optionally serving the studio UI)."""
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint=checkpoint, studio_dir=studio_dir, max_batch=max_batch)
    uvicorn.run(app, host=host, port=port)


@refill.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", default=72, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth_cmd(out_dir, count, size, seed):
    """Generate a schematic, attribute-labeled face corpus for desk runs."""
    image_dir, label_file = make_synthetic_corpus(out_dir, count, resolution=size, seed=seed)
    click.echo(f"wrote {count} images and {label_file.name} to {image_dir}")


@click.group()
def masks():
    """Hole-mask utilities."""


@masks.command("generate")
@click.option("--count", default=10, show_default=True)
@click.option("--size", default=256, show_default=True)
@click.option("--bucket", default=None, help="hole-ratio bucket lo:hi")
@click.option("--seed", default=0, show_default=True)
@click.option("--square-size", default=None, type=int, help="default: 85 scaled by size/256")
@click.option("--out", "out_dir", required=True, type=click.Path())
def masks_generate(count, size, bucket, seed, square_size, out_dir):
    """Write stroke-plus-square masks as single-channel PNGs (255 = valid)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scale = size / 256.0
    if square_size is None:
        square_size = int(round(85 * scale))
    widths = (max(1, round(5 * scale)), max(2, round(30 * scale)))
    for i in range(count):
        spec = MaskSpec(
            height=size,
            width=size,
            square_size=square_size,
            stroke_width_range=widths,
            target_ratio_bucket=_parse_bucket_opt(bucket),
            seed=seed + i,
        )
        save_mask(generate_combined_mask(spec), out / f"mask_{i:04d}.png")
    click.echo(f"wrote {count} masks to {out}")


def main(argv=None):  # single entry point when invoked as a module
    refill(args=argv)


if __name__ == "__main__":
    main(sys.argv[1:])
