"""Every term of the composite training objective, plus the per-step report.

Reduction convention: all L1/L2 terms are means over every tensor element,
which keeps the weighting resolution-independent. Images arrive in [-1, 1];
SSIM statistics are computed after an internal shift to [0, 1].
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

# canonical per-scale exponents; renormalized when fewer scales are used
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossWeights:
    """Relative term importances. Defaults follow the trained configuration."""

    adv: float = 0.1
    ssim: float = 3.0
    style: float = 120.0
    percep: float = 0.01
    hole: float = 6.0
    valid: float = 1.0
    attr: float = 1.0
    gp: float = 10.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")


@dataclass
class LossReport:
    """Raw per-term scalars plus the weighted total for one step."""

    hole: float
    valid: float
    percep: float
    style: float
    ms_ssim: float
    attr: float
    adv_g: float
    adv_d: float
    gp: float
    total: float
    step: int | None = None

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        if d["step"] is None:
            del d["step"]
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        d = json.loads(line)
        return cls(**{"step": None, **d})


def weighted_total(terms: dict, weights: LossWeights):
    """Weighted sum of generator-side terms; accepts tensors or floats.

    ``adv_d`` and ``gp`` are critic-side quantities and never enter the total.
    """
    return (
        weights.adv * terms["adv_g"]
        + weights.attr * terms["attr"]
        + weights.ssim * terms["ms_ssim"]
        + weights.style * terms["style"]
        + weights.percep * terms["percep"]
        + weights.hole * terms["hole"]
        + weights.valid * terms["valid"]
    )


def total_loss(
    terms: dict,
    weights: LossWeights = LossWeights(),
    step: int | None = None,
) -> LossReport:
    """Validate finiteness, fill in the weighted total, freeze to floats."""
    values = {}
    for name in ("hole", "valid", "percep", "style", "ms_ssim", "attr", "adv_g"):
        if name not in terms:
            raise ValueError(f"missing loss term '{name}'")
    for name, v in terms.items():
        x = float(v.detach() if isinstance(v, torch.Tensor) else v)
        if not math.isfinite(x):
            raise ValueError(f"non-finite loss term '{name}': {x}")
        values[name] = x
    values.setdefault("adv_d", 0.0)
    values.setdefault("gp", 0.0)
    total = weighted_total(values, weights)
    return LossReport(step=step, total=total, **values)


# --- reconstruction ----------------------------------------------------------


def loss_hole(recon: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute error restricted to hole pixels (mean over all elements)."""
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(recon.shape)} vs {tuple(gt.shape)}")
    return ((recon - gt) * (1.0 - mask)).abs().mean()


def loss_valid(recon: torch.Tensor, masked: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute error of the valid region against the masked input."""
    if recon.shape != masked.shape:
        raise ValueError(f"shape mismatch {tuple(recon.shape)} vs {tuple(masked.shape)}")
    return (recon * mask - masked).abs().mean()


# --- feature-space terms ------------------------------------------------------


class FeatureExtractorHandle:
    """Frozen feature network with declared tap points.

    One handle serves both the perceptual and the style loss (and the
    perceptual eval metrics). ``calibrated`` marks backends whose features
    carry meaning across runs (e.g. classification-pretrained weights);
    uncalibrated backends are fine for optimization but are excluded from
    published comparison metrics.
    """

    def __init__(self, module: nn.Module, tap_indices, identity: str, calibrated: bool = False):
        if len(tap_indices) == 0:
            raise ValueError("feature handle needs at least one tap layer")
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.tap_indices = tuple(tap_indices)
        self.identity = identity
        self.calibrated = calibrated

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        taps = []
        x = images
        for i, layer in enumerate(self.module):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x)
        return taps

    @classmethod
    def fixed_random(cls, seed: int = 0, base_width: int = 16) -> "FeatureExtractorHandle":
        """Hermetic backend: fixed-seed random conv pyramid, three taps.

        Random features still define a valid distance for training and tests;
        they are not calibrated for cross-model comparisons.
        """
        gen = torch.Generator().manual_seed(seed)
        layers, taps = [], []
        cin = 3
        for k in range(3):
            cout = base_width * 2**k
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) / math.sqrt(cin * 9 / 2)
                )
                conv.bias.zero_()
            layers += [conv, nn.ReLU(), nn.AvgPool2d(2)]
            taps.append(len(layers) - 1)  # end of the downsampling block
            cin = cout
        return cls(nn.Sequential(*layers), taps, identity=f"fixed-random-{seed}-w{base_width}")


def loss_perceptual(gt: torch.Tensor, comp: torch.Tensor, features: FeatureExtractorHandle) -> torch.Tensor:
    """Mean squared feature distance, averaged over tap layers."""
    taps_gt = features.features(gt)
    taps_comp = features.features(comp)
    total = sum(((a - b) ** 2).mean() for a, b in zip(taps_gt, taps_comp))
    return total / len(taps_gt)


def gram_matrix(feats: torch.Tensor) -> torch.Tensor:
    """(B, C, C) gram of (B, C, H, W) features, normalized by C*H*W."""
    b, c, h, w = feats.shape
    flat = feats.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def loss_style(gt: torch.Tensor, comp: torch.Tensor, features: FeatureExtractorHandle) -> torch.Tensor:
    """Mean squared gram-matrix distance, averaged over tap layers."""
    taps_gt = features.features(gt)
    taps_comp = features.features(comp)
    total = sum(
        ((gram_matrix(a) - gram_matrix(b)) ** 2).mean()
        for a, b in zip(taps_gt, taps_comp)
    )
    return total / len(taps_gt)


# --- structural similarity ----------------------------------------------------


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    xs = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    k = torch.exp(-(xs**2) / (2 * sigma**2))
    return k / k.sum()


def _ssim_maps(x, y, win_size, sigma, c1, c2):
    """Per-pixel luminance and contrast-structure maps (valid windows only)."""
    channels = x.shape[1]
    k = _gaussian_window(win_size, sigma, x.dtype, x.device)
    kh = k.reshape(1, 1, 1, win_size).expand(channels, 1, 1, win_size)
    kv = k.reshape(1, 1, win_size, 1).expand(channels, 1, win_size, 1)

    def blur(t):
        return F.conv2d(F.conv2d(t, kh, groups=channels), kv, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x * mu_x
    syy = blur(y * y) - mu_y * mu_y
    sxy = blur(x * y) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def ms_ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    scales: int = 5,
    win_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Multi-scale structural similarity per batch element, inputs in [-1, 1].

    Gaussian window of ``win_size``, stability constants (0.01)^2 and (0.03)^2
    on the unit dynamic range, canonical scale exponents.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}")
    need = 2 ** (scales - 1) * win_size
    if min(x.shape[-2:]) < need:
        raise ValueError(
            f"image side {min(x.shape[-2:])} too small for {scales} scales with "
            f"window {win_size} (needs >= {need}); use fewer scales"
        )
    x = (x + 1.0) / 2.0
    y = (y + 1.0) / 2.0
    c1, c2 = 0.01**2, 0.03**2

    w = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device)
    w = w / w.sum()

    result = torch.ones(x.shape[0], dtype=x.dtype, device=x.device)
    for s in range(scales):
        lum, cs = _ssim_maps(x, y, win_size, sigma, c1, c2)
        if s < scales - 1:
            # contrast-structure only at fine scales; clamp for fractional powers
            result = result * cs.clamp_min(0.0).mean(dim=(1, 2, 3)).pow(w[s])
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        else:
            result = result * (lum * cs).clamp_min(0.0).mean(dim=(1, 2, 3)).pow(w[s])
    return result


def loss_ms_ssim(
    recon: torch.Tensor,
    gt: torch.Tensor,
    scales: int = 5,
    win_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """1 - mean multi-scale structural similarity over the batch."""
    return 1.0 - ms_ssim(recon, gt, scales=scales, win_size=win_size, sigma=sigma).mean()


def auto_scales(resolution: int, win_size: int = 11, cap: int = 5) -> int:
    """Largest usable scale count for a given image side."""
    s = 1
    while s < cap and 2**s * win_size <= resolution:
        s += 1
    return s


# --- attribute constraint -------------------------------------------------------


def loss_attr(
    a_aux: torch.Tensor,
    a_ext: torch.Tensor,
    a_gt: torch.Tensor,
    ae_on_gt: torch.Tensor,
) -> torch.Tensor:
    """Coupling term MSE(aux-read of fake, extracted) plus the auxiliary's
    supervised term MSE(ground truth, aux-read of real)."""
    for name, v in (("a_aux", a_aux), ("a_ext", a_ext), ("a_gt", a_gt), ("ae_on_gt", ae_on_gt)):
        if v.shape[-1] != 8:
            raise ValueError(f"{name} must have 8 entries, got {v.shape[-1]}")
    return F.mse_loss(a_aux, a_ext) + F.mse_loss(a_gt, ae_on_gt)
