"""Attribute-labeled face corpus: loading, normalization, splits, batching.

Images are served channels-first in [-1, 1]; ground-truth attribute vectors
are 8 values in {0, 1} ordered by ``ATTRIBUTE_NAMES``. Label files use CSV
with header ``id,<8 attribute names>`` and values in {-1, 1} or {0, 1}
(-1 is remapped to 0 on load).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

ATTRIBUTE_NAMES = (
    "Bushy_Eyebrows",
    "Mouth_Slightly_Open",
    "Big_Lips",
    "Male",
    "Mustache",
    "Smiling",
    "Wearing_Lipstick",
    "No_Beard",
)

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def normalize(image_u8: np.ndarray) -> torch.Tensor:
    """Map uint8 HxWx3 (or BxHxWx3) to float32 channels-first in [-1, 1]."""
    arr = np.asarray(image_u8)
    if arr.ndim not in (3, 4) or arr.shape[-1] != 3:
        raise ValueError(f"expected HxWx3 or BxHxWx3 uint8 input, got shape {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr).copy()).float() * (2.0 / 255.0) - 1.0
    return t.permute(0, 3, 1, 2) if t.dim() == 4 else t.permute(2, 0, 1)


def denormalize(image: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`normalize`, back to uint8 HxWx3 (or BxHxWx3)."""
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise ValueError(f"expected 3xHxW or Bx3xHxW input, got shape {tuple(image.shape)}")
    t = image.permute(0, 2, 3, 1) if image.dim() == 4 else image.permute(1, 2, 0)
    arr = ((t.detach().cpu().numpy() + 1.0) * (255.0 / 2.0)).round()
    return np.clip(arr, 0, 255).astype(np.uint8)


def _parse_label(raw: str, column: str, row_id: str) -> float:
    try:
        v = int(raw)
    except ValueError as exc:
        raise ValueError(f"label {column} for '{row_id}' is not an integer: {raw!r}") from exc
    if v not in (-1, 0, 1):
        raise ValueError(f"label {column} for '{row_id}' must be in {{-1,0,1}}, got {v}")
    return 1.0 if v == 1 else 0.0


class Corpus:
    """Read-only handle over an image directory plus attribute labels.

    Samples are ordered by id; image decoding happens lazily unless
    ``cache=True``. Files on disk are resized to ``resolution`` if needed.
    """

    def __init__(self, image_dir, label_file, resolution: int = 256, cache: bool = False):
        self.image_dir = Path(image_dir)
        self.resolution = int(resolution)
        self._cache: dict[int, torch.Tensor] | None = {} if cache else None

        labels = self._read_labels(Path(label_file))
        paths: dict[str, Path] = {}
        for p in sorted(self.image_dir.iterdir()):
            if p.suffix.lower() in _IMAGE_EXTS:
                paths[p.stem] = p
        missing = sorted(set(paths) - set(labels))
        if missing:
            raise ValueError(f"no label row for image(s): {', '.join(missing[:5])}")

        self.ids: tuple[str, ...] = tuple(sorted(paths))
        self._paths = [paths[i] for i in self.ids]
        self.attributes = torch.tensor([labels[i] for i in self.ids], dtype=torch.float32)

    @staticmethod
    def _read_labels(label_file: Path) -> dict[str, list[float]]:
        with open(label_file, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"label file {label_file} is empty") from None
            if not header or header[0] != "id":
                raise ValueError("label file must start with an 'id' column")
            unknown = [c for c in header[1:] if c not in ATTRIBUTE_NAMES]
            if unknown:
                raise ValueError(f"unknown attribute name(s) in header: {', '.join(unknown)}")
            absent = [c for c in ATTRIBUTE_NAMES if c not in header[1:]]
            if absent:
                raise ValueError(f"label header missing attribute(s): {', '.join(absent)}")
            col_of = {name: header.index(name) for name in ATTRIBUTE_NAMES}

            labels: dict[str, list[float]] = {}
            for row in reader:
                if not row:
                    continue
                row_id = row[0]
                if len(row) != len(header):
                    short = [n for n in ATTRIBUTE_NAMES if col_of[n] >= len(row)]
                    raise ValueError(
                        f"label row '{row_id}' has {len(row) - 1} attribute values; "
                        f"missing: {', '.join(short) if short else 'malformed row'}"
                    )
                labels[row_id] = [_parse_label(row[col_of[n]], n, row_id) for n in ATTRIBUTE_NAMES]
        return labels

    def __len__(self) -> int:
        return len(self.ids)

    def image(self, index: int) -> torch.Tensor:
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        path = self._paths[index]
        try:
            img = Image.open(path).convert("RGB")
        except Exception as exc:
            raise ValueError(f"cannot read image {path}: {exc}") from exc
        if img.size != (self.resolution, self.resolution):
            img = img.resize((self.resolution, self.resolution), Image.BILINEAR)
        t = normalize(np.asarray(img, dtype=np.uint8))
        if self._cache is not None:
            self._cache[index] = t
        return t

    def sample(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        return self.image(index), self.attributes[index]

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        images = torch.stack([self.image(int(i)) for i in indices])
        return images, self.attributes[list(map(int, indices))]


def load_corpus(image_dir, label_file, resolution: int = 256, cache: bool = False) -> Corpus:
    return Corpus(image_dir, label_file, resolution=resolution, cache=cache)


@dataclass(frozen=True)
class SplitConfig:
    train_count: int
    test_count: int
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("split counts must be non-negative")


def split_indices(corpus: Corpus, cfg: SplitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test index sets, a pure function of (corpus, config)."""
    n = len(corpus)
    if cfg.train_count + cfg.test_count > n:
        raise ValueError(
            f"split needs {cfg.train_count + cfg.test_count} samples, corpus has {n}"
        )
    order = np.random.default_rng(cfg.shuffle_seed).permutation(n)
    return order[: cfg.train_count], order[cfg.train_count : cfg.train_count + cfg.test_count]


def batch_iterator(
    corpus: Corpus,
    split: SplitConfig,
    batch_size: int,
    seed: int,
    subset: str = "train",
):
    """One deterministic epoch of (images, attributes) batches.

    The final partial batch is emitted. Two iterators with the same seed
    yield identical sequences.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    train_idx, test_idx = split_indices(corpus, split)
    pool = {"train": train_idx, "test": test_idx}[subset]
    order = np.random.default_rng(seed).permutation(pool)
    for start in range(0, len(order), batch_size):
        yield corpus.batch(order[start : start + batch_size])


# --- synthetic corpus -------------------------------------------------------
#
# Schematic face images whose appearance genuinely depends on each attribute
# bit, so extractors can be trained and sanity-checked without any external
# dataset. Not meant to look realistic.


def _draw_face(draw, res: float, attrs, rng) -> None:
    u = res / 64.0  # layout designed on a 64px grid
    j = lambda s: float(rng.uniform(-s, s)) * u

    bushy, open_mouth, big_lips, male, mustache, smiling, lipstick, no_beard = [
        bool(a) for a in attrs
    ]

    skin = (224 + int(rng.integers(-15, 15)), 182, 150)
    cx, cy = 32 * u + j(2), 34 * u + j(2)
    fw, fh = 22 * u + j(2), 26 * u + j(2)
    draw.ellipse([cx - fw, cy - fh, cx + fw, cy + fh], fill=skin)

    if not no_beard:
        draw.ellipse(
            [cx - fw * 0.8, cy + fh * 0.35, cx + fw * 0.8, cy + fh * 1.05],
            fill=(70, 50, 35),
        )

    eye_y = cy - 6 * u
    for side in (-1, 1):
        ex = cx + side * 9 * u
        draw.ellipse([ex - 3 * u, eye_y - 2 * u, ex + 3 * u, eye_y + 2 * u], fill=(250, 250, 250))
        draw.ellipse([ex - 1.2 * u, eye_y - 1.2 * u, ex + 1.2 * u, eye_y + 1.2 * u], fill=(40, 30, 20))
        brow_h = (3.0 if bushy else 0.8) * u
        by = eye_y - 5 * u
        draw.rectangle([ex - 4 * u, by - brow_h, ex + 4 * u, by], fill=(30, 20, 10))

    mouth_y = cy + 12 * u
    mouth_w = (9.0 if big_lips else 5.5) * u
    mouth_h = (4.5 if big_lips else 2.0) * u
    mouth_color = (205, 30, 60) if lipstick else (150, 90, 80)
    if smiling:
        draw.arc(
            [cx - mouth_w, mouth_y - mouth_h * 2, cx + mouth_w, mouth_y + mouth_h * 2],
            20,
            160,
            fill=mouth_color,
            width=max(1, int(mouth_h)),
        )
    else:
        draw.ellipse(
            [cx - mouth_w, mouth_y - mouth_h, cx + mouth_w, mouth_y + mouth_h],
            fill=mouth_color,
        )
    if open_mouth:
        draw.ellipse(
            [cx - mouth_w * 0.5, mouth_y - mouth_h * 0.5, cx + mouth_w * 0.5, mouth_y + mouth_h * 0.5],
            fill=(25, 10, 10),
        )
    if mustache:
        draw.rectangle(
            [cx - 7 * u, mouth_y - 5.5 * u, cx + 7 * u, mouth_y - 2.5 * u],
            fill=(45, 30, 15),
        )
    if male:
        # blocky jaw marker
        draw.rectangle([cx - fw * 0.9, cy + fh * 0.75, cx + fw * 0.9, cy + fh], fill=skin)


def make_synthetic_corpus(out_dir, count: int, resolution: int = 64, seed: int = 0):
    """Write ``count`` schematic face PNGs plus ``labels.csv`` into ``out_dir``.

    Returns (image_dir, label_file) paths.
    """
    from PIL import ImageDraw

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        attrs = rng.integers(0, 2, size=len(ATTRIBUTE_NAMES))
        male = attrs[3]
        bg = (90, 110, 160) if male else (180, 120, 140)
        bg = tuple(int(np.clip(c + rng.integers(-20, 20), 0, 255)) for c in bg)
        img = Image.new("RGB", (resolution, resolution), bg)
        _draw_face(ImageDraw.Draw(img), resolution, attrs, rng)
        name = f"face_{i:05d}"
        img.save(out / f"{name}.png")
        rows.append([name] + [str(int(a)) for a in attrs])

    label_file = out / "labels.csv"
    with open(label_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *ATTRIBUTE_NAMES])
        writer.writerows(rows)
    return out, label_file
