"""Binary hole masks: free-form stroke synthesis, square holes, composition, file IO.

Convention used throughout this package: mask value 1 marks a valid (kept)
pixel and 0 marks a hole. Masks are float tensors shaped (1, H, W), or
(B, 1, H, W) when batched, holding exact 0/1 values so they can multiply
image tensors without any rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image, ImageDraw

_SEED_MOD = 2**63  # SeedSequence entropy must be non-negative


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng([int(p) % _SEED_MOD for p in parts])


@dataclass(frozen=True)
class MaskSpec:
    """Recipe for one random free-form mask; generation is a pure function of it.

    Strokes are random polylines (uniform random vertices, round caps) drawn
    as holes onto an all-valid canvas. When ``target_ratio_bucket`` is set,
    masks are rejection-sampled until the hole ratio lands inside the bucket.
    """

    height: int
    width: int
    square_size: int = 85
    stroke_count_range: tuple[int, int] = (1, 20)
    stroke_vertex_range: tuple[int, int] = (4, 12)
    stroke_width_range: tuple[int, int] = (5, 30)
    target_ratio_bucket: tuple[float, float] | None = None
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"mask grid must be positive, got {self.height}x{self.width}")
        if not 0 <= self.square_size <= min(self.height, self.width):
            raise ValueError(
                f"square_size {self.square_size} exceeds mask dimensions "
                f"{self.height}x{self.width}"
            )
        for name in ("stroke_count_range", "stroke_vertex_range", "stroke_width_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if self.target_ratio_bucket is not None:
            lo, hi = self.target_ratio_bucket
            if not (0.0 < lo <= hi < 1.0):
                raise ValueError(f"ratio bucket must lie strictly inside (0, 1), got ({lo}, {hi})")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def hole_ratio(mask: torch.Tensor) -> float:
    """Fraction of hole (zero) pixels."""
    return float(1.0 - mask.float().mean())


def _draw_strokes(spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    canvas = Image.new("L", (spec.width, spec.height), 255)
    draw = ImageDraw.Draw(canvas)
    lo, hi = spec.stroke_count_range
    count = int(rng.integers(lo, hi + 1))
    for _ in range(count):
        nv = int(rng.integers(spec.stroke_vertex_range[0], spec.stroke_vertex_range[1] + 1))
        width = int(rng.integers(spec.stroke_width_range[0], spec.stroke_width_range[1] + 1))
        width = max(width, 1)
        xs = rng.uniform(0, spec.width, size=max(nv, 2))
        ys = rng.uniform(0, spec.height, size=max(nv, 2))
        points = list(zip(xs.tolist(), ys.tolist()))
        draw.line(points, fill=0, width=width, joint="curve")
        r = width / 2.0
        for x, y in (points[0], points[-1]):
            draw.ellipse([x - r, y - r, x + r, y + r], fill=0)
    arr = np.asarray(canvas, dtype=np.uint8)
    return (arr >= 128).astype(np.float32)


def _carve_square(grid: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = grid.shape
    if size == 0:
        return grid
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    out = grid.copy()
    out[top : top + size, left : left + size] = 0.0
    return out


def _rejection_sample(spec: MaskSpec, attempt_fn) -> torch.Tensor:
    bucket = spec.target_ratio_bucket
    attempts = spec.max_attempts if bucket is not None else 1
    for attempt in range(attempts):
        grid = attempt_fn(_rng(spec.seed, attempt))
        if bucket is None:
            return torch.from_numpy(grid).unsqueeze(0)
        ratio = 1.0 - float(grid.mean())
        if bucket[0] <= ratio <= bucket[1]:
            return torch.from_numpy(grid).unsqueeze(0)
    raise RuntimeError(
        f"no mask with hole ratio in {bucket} found after {spec.max_attempts} attempts"
    )


def generate_stroke_mask(spec: MaskSpec) -> torch.Tensor:
    """Free-form stroke mask, shape (1, H, W). Deterministic for a fixed spec."""
    if min(spec.height, spec.width) < 32:
        raise ValueError(
            f"mask grid {spec.height}x{spec.width} too small, need at least 32x32"
        )
    return _rejection_sample(spec, lambda rng: _draw_strokes(spec, rng))


def generate_combined_mask(spec: MaskSpec) -> torch.Tensor:
    """Stroke mask unioned with one random square hole of ``spec.square_size``.

    This is the training recipe. The ratio bucket, when set, applies to the
    combined mask.
    """
    if min(spec.height, spec.width) < 32:
        raise ValueError(
            f"mask grid {spec.height}x{spec.width} too small, need at least 32x32"
        )

    def attempt(rng: np.random.Generator) -> np.ndarray:
        grid = _draw_strokes(spec, rng)
        return _carve_square(grid, spec.square_size, rng)

    return _rejection_sample(spec, attempt)


def add_random_square(mask: torch.Tensor, square_size: int, seed: int) -> torch.Tensor:
    """Union one axis-aligned square hole at a uniformly random position.

    Accepts (1, H, W) or (B, 1, H, W); batched masks get an independent
    position per element. The input is never modified, and the hole ratio
    never decreases.
    """
    if mask.dim() not in (3, 4) or mask.shape[-3] != 1:
        raise ValueError(f"expected mask shaped (1,H,W) or (B,1,H,W), got {tuple(mask.shape)}")
    h, w = mask.shape[-2], mask.shape[-1]
    if square_size < 0 or square_size > min(h, w):
        raise ValueError(f"square of size {square_size} does not fit a {h}x{w} mask")
    out = mask.clone()
    if square_size == 0:
        return out
    rng = _rng(seed)
    flat = out.reshape(-1, h, w)
    for i in range(flat.shape[0]):
        top = int(rng.integers(0, h - square_size + 1))
        left = int(rng.integers(0, w - square_size + 1))
        flat[i, top : top + square_size, left : left + square_size] = 0.0
    return out


def _mask_for(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Validate spatial agreement and return a mask broadcastable over channels."""
    if mask.shape[-2:] != image.shape[-2:]:
        raise ValueError(
            f"mask spatial shape {tuple(mask.shape[-2:])} does not match "
            f"image {tuple(image.shape[-2:])}"
        )
    if mask.dim() == image.dim():
        if mask.shape[-3] != 1:
            raise ValueError(f"mask channel dimension must be 1, got {mask.shape[-3]}")
        if mask.dim() == 4 and mask.shape[0] not in (1, image.shape[0]):
            raise ValueError(
                f"mask batch {mask.shape[0]} does not match image batch {image.shape[0]}"
            )
    elif mask.dim() not in (2, image.dim() - 1):
        raise ValueError(
            f"mask rank {mask.dim()} incompatible with image rank {image.dim()}"
        )
    return mask.to(image.dtype)


def apply_mask(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Elementwise product; hole pixels become 0 (mid-gray in [-1, 1])."""
    return image * _mask_for(image, mask)


def composite(masked: torch.Tensor, generated: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Keep ``masked`` on valid pixels, paste ``generated`` into holes."""
    if masked.shape != generated.shape:
        raise ValueError(
            f"masked {tuple(masked.shape)} and generated {tuple(generated.shape)} differ"
        )
    m = _mask_for(masked, mask)
    return masked * m + generated * (1.0 - m)


def save_mask(mask: torch.Tensor, path) -> None:
    """Write as an 8-bit single-channel PNG (255 = valid, 0 = hole)."""
    if mask.dim() == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.dim() != 2:
        raise ValueError(f"save_mask expects a single mask, got shape {tuple(mask.shape)}")
    arr = (mask.detach().cpu().numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path, invert: bool = False) -> torch.Tensor:
    """Load an 8-bit single-channel image; pixels >= 128 map to 1, else 0.

    ``invert`` flips the convention for files where bright means hole.
    """
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ValueError(f"cannot read mask file {path}: {exc}") from exc
    bands = img.getbands()
    if len(bands) != 1:
        raise ValueError(
            f"mask file {path} has {len(bands)} channels, expected a single channel"
        )
    arr = (np.asarray(img, dtype=np.uint8) >= 128).astype(np.float32)
    if invert:
        arr = 1.0 - arr
    return torch.from_numpy(arr).unsqueeze(0)
