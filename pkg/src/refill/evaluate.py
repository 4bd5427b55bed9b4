"""Quantitative harness: SSIM / LPIPS / FID over hole-ratio buckets.

Completions are evaluated after compositing (valid pixels restored from the
input), using ground-truth attributes, so the numbers measure inpainting
quality alone. Perceptual metrics (LPIPS, FID) are only reported when the
configured feature backend is calibrated; random-feature backends are fine
for optimization but misleading as comparison metrics.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .data import Corpus, SplitConfig, split_indices
from .losses import FeatureExtractorHandle, _ssim_maps
from .masks import MaskSpec, apply_mask, composite, generate_combined_mask
from .train import TrainingSnapshot

DEFAULT_BUCKETS = ("quickdraw", "0.1:0.2", "0.2:0.3", "0.3:0.4", "0.4:0.5")


def ssim_per_image(a: torch.Tensor, b: torch.Tensor, win_size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Single-scale SSIM per batch element; inputs in [-1, 1]."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    lum, cs = _ssim_maps((a + 1) / 2, (b + 1) / 2, win_size, sigma, 0.01**2, 0.03**2)
    return (lum * cs).mean(dim=(1, 2, 3))


def metric_ssim(a: torch.Tensor, b: torch.Tensor, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean single-scale SSIM over the batch."""
    return float(ssim_per_image(a, b, win_size, sigma).mean())


def lpips_distance(a: torch.Tensor, b: torch.Tensor, features: FeatureExtractorHandle) -> torch.Tensor:
    """Perceptual distance per batch element: channel-normalized feature
    differences, spatially averaged, summed over tap layers."""
    if a.dim() == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    total = torch.zeros(a.shape[0], dtype=a.dtype)
    for fa, fb in zip(features.features(a), features.features(b)):
        na = fa / fa.norm(dim=1, keepdim=True).clamp_min(1e-10)
        nb = fb / fb.norm(dim=1, keepdim=True).clamp_min(1e-10)
        total = total + ((na - nb) ** 2).sum(dim=1).mean(dim=(1, 2))
    return total


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    if vals.min() < -1e-8:
        warnings.warn(
            f"clamping negative eigenvalue {vals.min():.3e} in matrix square root",
            stacklevel=3,
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def metric_fid(real_features, fake_features) -> float:
    """Frechet distance between Gaussian fits of two feature sets (N x D)."""
    r = np.asarray(real_features, dtype=np.float64)
    f = np.asarray(fake_features, dtype=np.float64)
    if r.ndim != 2 or f.ndim != 2:
        raise ValueError("feature sets must be 2-D (samples x dim)")
    if r.shape[0] < 2 or f.shape[0] < 2:
        raise ValueError("need at least 2 samples per feature set")
    mu_r, mu_f = r.mean(axis=0), f.mean(axis=0)
    cov_r = np.cov(r, rowvar=False)
    cov_f = np.cov(f, rowvar=False)
    sqrt_r = _psd_sqrt(cov_r)
    cross = _psd_sqrt(sqrt_r @ cov_f @ sqrt_r)
    diff = mu_r - mu_f
    return float(diff @ diff + np.trace(cov_r + cov_f - 2.0 * cross))


def parse_bucket(label: str):
    """'quickdraw' -> None (free-form, unconstrained ratio); 'lo:hi' -> (lo, hi)."""
    if label == "quickdraw":
        return None
    try:
        lo, hi = (float(p) for p in label.split(":"))
    except ValueError as exc:
        raise ValueError(f"bucket {label!r} is neither 'quickdraw' nor 'lo:hi'") from exc
    return lo, hi


@dataclass
class BucketMetrics:
    ssim: float
    lpips: float | None
    fid: float | None
    count: int


@dataclass
class EvalReport:
    buckets: dict[str, BucketMetrics]
    backend: str | None
    config_hash: str
    composited: bool = True

    def to_json(self) -> str:
        return json.dumps(
            {
                "composited": self.composited,
                "backend": self.backend,
                "config_hash": self.config_hash,
                "buckets": {k: dataclasses.asdict(v) for k, v in self.buckets.items()},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(
            buckets={k: BucketMetrics(**v) for k, v in d["buckets"].items()},
            backend=d["backend"],
            config_hash=d["config_hash"],
            composited=d["composited"],
        )

    def to_csv(self) -> str:
        labels = list(self.buckets)
        out = io.StringIO()
        out.write("metric," + ",".join(labels) + "\n")
        out.write("ssim," + ",".join(f"{self.buckets[b].ssim:.4f}" for b in labels) + "\n")
        if any(self.buckets[b].lpips is not None for b in labels):
            out.write(
                "lpips,"
                + ",".join(
                    "" if self.buckets[b].lpips is None else f"{self.buckets[b].lpips:.4f}"
                    for b in labels
                )
                + "\n"
            )
        if any(self.buckets[b].fid is not None for b in labels):
            out.write(
                "fid,"
                + ",".join(
                    "" if self.buckets[b].fid is None else f"{self.buckets[b].fid:.2f}"
                    for b in labels
                )
                + "\n"
            )
        return out.getvalue()


def _bucket_mask_spec(snapshot_config, bucket, seed: int) -> MaskSpec:
    spec = snapshot_config.mask_spec(seed)
    return dataclasses.replace(spec, target_ratio_bucket=bucket)


def _config_hash(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:12]


def evaluate(
    snapshot: TrainingSnapshot,
    corpus: Corpus,
    buckets=DEFAULT_BUCKETS,
    split: SplitConfig | None = None,
    max_images: int | None = None,
    seed: int = 0,
    features: FeatureExtractorHandle | None = None,
    completion_fn=None,
) -> EvalReport:
    """Per-bucket metrics of composited completions against ground truth.

    ``completion_fn(masked, mask, attrs) -> image`` overrides the model, which
    lets baselines (e.g. copy-through) run through the identical protocol.
    Completions use the ground-truth attributes so the attribute pathway does
    not confound inpainting quality.
    """
    split = split or snapshot.config.split
    if split is not None:
        _, pool = split_indices(corpus, split)
    else:
        pool = np.arange(len(corpus))
    if max_images is not None:
        pool = pool[:max_images]
    if len(pool) == 0:
        raise ValueError("evaluation needs a non-empty test set")

    if completion_fn is None:
        gen = snapshot.generator

        def completion_fn(masked, mask, attrs):
            with torch.no_grad():
                return gen(masked, mask, attrs)

    use_perceptual = features is not None and features.calibrated
    results: dict[str, BucketMetrics] = {}
    for label in buckets:
        bucket = parse_bucket(label)
        ssims, lpips_vals = [], []
        feats_real, feats_fake = [], []
        for j, idx in enumerate(pool):
            image, attrs = corpus.sample(int(idx))
            spec = _bucket_mask_spec(snapshot.config, bucket, seed=seed * 100003 + j)
            mask = generate_combined_mask(spec)
            masked = apply_mask(image, mask)
            out = completion_fn(masked, mask, attrs)
            comp = composite(masked, out, mask)
            ssims.append(float(ssim_per_image(comp, image)))
            if use_perceptual:
                with torch.no_grad():
                    lpips_vals.append(float(lpips_distance(image, comp, features)))
                    feats_real.append(_embed(image, features))
                    feats_fake.append(_embed(comp, features))
        results[label] = BucketMetrics(
            ssim=float(np.mean(ssims)),
            lpips=float(np.mean(lpips_vals)) if lpips_vals else None,
            fid=metric_fid(np.stack(feats_real), np.stack(feats_fake)) if feats_real else None,
            count=len(ssims),
        )

    return EvalReport(
        buckets=results,
        backend=features.identity if features is not None else None,
        config_hash=_config_hash(
            {
                "buckets": list(buckets),
                "n": int(len(pool)),
                "seed": seed,
                "resolution": snapshot.config.resolution,
            }
        ),
    )


def _embed(image: torch.Tensor, features: FeatureExtractorHandle) -> np.ndarray:
    taps = features.features(image.unsqueeze(0))
    return torch.cat([t.mean(dim=(2, 3)).flatten() for t in taps]).numpy()
