"""Attention U-Net generator with attribute injection at the bottleneck.

The encoder carries two streams: image features and mask features. Each
encoder stage convolves both and multiplies the features by a learnable
bounded gate of the mask response, so convolution output inside holes gets
attenuated. A second mask stream, seeded with the hole indicator (1 - M),
produces reverse gates that concentrate the decoder on hole regions. Both
decode paths (ground-truth attributes vs. extracted attributes) run through
the same weights; only the injected attribute vector differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 256
    base_channels: int = 64
    depth: int | None = None  # None: log2(resolution) - 1, bottleneck at 2x2
    attribute_dim: int = 8
    channel_cap: int = 512

    def __post_init__(self):
        d = self.resolved_depth
        if d < 2:
            raise ValueError("generator depth must be at least 2")
        if self.resolution % (2**d) != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2^depth = {2**d}"
            )
        if self.resolution // (2**d) < 2:
            raise ValueError("bottleneck would be smaller than 2x2; reduce depth")
        if self.attribute_dim < 1:
            raise ValueError("attribute_dim must be positive")

    @property
    def resolved_depth(self) -> int:
        if self.depth is not None:
            return self.depth
        return int(math.log2(self.resolution)) - 1

    @property
    def stage_channels(self) -> tuple[int, ...]:
        d = self.resolved_depth
        return tuple(min(self.base_channels * 2**i, self.channel_cap) for i in range(d))


class BoundedAsymmetricGate(nn.Module):
    """Learnable activation a * sigmoid(b*x)^gamma for x >= 0, damped by
    ``neg_scale`` on the negative side. Output magnitude is bounded by ``a``.
    """

    def __init__(self, init_scale: float = 1.1, init_slope: float = 2.0,
                 init_power: float = 1.0, neg_scale: float = 0.1):
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(float(init_scale)))
        self.slope = nn.Parameter(torch.tensor(float(init_slope)))
        self.power = nn.Parameter(torch.tensor(float(init_power)))
        self.neg_scale = float(neg_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = torch.sigmoid(self.slope * x).clamp_min(1e-12)
        pos = self.scale * s.pow(self.power)
        neg = self.scale * s * self.neg_scale
        return torch.where(x >= 0, pos, neg)

    def ceiling(self) -> float:
        """Upper bound on |gate output| for the current parameters."""
        if float(self.power.detach()) <= 0:
            return math.inf  # sigmoid^gamma is unbounded for non-positive gamma
        return float(self.scale.detach().abs())


class ForwardAttention(nn.Module):
    """Gate encoder features with the mask-stream response at this stage.

    The mask conv uses replicate padding so that a spatially constant mask
    stream stays constant through the stage (no border artifacts), which is
    what makes the no-hole case degenerate to a uniform scaling.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.mask_conv = nn.Conv2d(
            in_channels, out_channels, 4, stride=2, padding=1, padding_mode="replicate"
        )
        self.gate = BoundedAsymmetricGate()

    def forward(self, features, mask_features):
        g = self.gate(self.mask_conv(mask_features))
        return features * g, g


class ReverseAttention(nn.Module):
    """Mask-stream stage for the decoder side, seeded with the hole indicator."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.mask_conv = nn.Conv2d(
            in_channels, out_channels, 4, stride=2, padding=1, padding_mode="replicate"
        )
        self.gate = BoundedAsymmetricGate()

    def advance(self, reverse_mask_features: torch.Tensor) -> torch.Tensor:
        return self.gate(self.mask_conv(reverse_mask_features))

    def forward(self, decoder_features, reverse_mask_features):
        g = self.advance(reverse_mask_features)
        return decoder_features * g, g


@dataclass
class LatentFeatures:
    """Bottleneck plus everything the decoder needs from the encoder pass."""

    bottleneck: torch.Tensor
    skips: list = field(default_factory=list)          # attended stages 1..depth-1
    forward_maps: list = field(default_factory=list)   # gate maps, stages 1..depth
    reverse_maps: list = field(default_factory=list)   # gate maps for decoder stages
    attributes: torch.Tensor | None = None


class _EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, norm: bool):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 4, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(cout, affine=True) if norm else None
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        h = self.conv(x)
        if self.norm is not None:
            h = self.norm(h)
        return self.act(h)


class _DecoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, norm: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(cout, affine=True) if norm else None
        self.act = nn.ELU()

    def forward(self, x):
        h = self.deconv(x)
        if self.norm is not None:
            h = self.norm(h)
        return self.act(h)


class InpaintGenerator(nn.Module):
    """Encoder-decoder completion network; one weight set serves every decode."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        depth = config.resolved_depth
        ch = config.stage_channels

        enc, fwd = [], []
        cin, min_ = 4, 1  # input is [masked RGB, mask]; mask stream starts 1-channel
        for i in range(depth):
            enc.append(_EncoderStage(cin, ch[i], norm=(i != 0)))
            fwd.append(ForwardAttention(min_, ch[i]))
            cin, min_ = ch[i], ch[i]
        self.encoder = nn.ModuleList(enc)
        self.forward_attn = nn.ModuleList(fwd)

        rev, rin = [], 1
        for i in range(depth - 1):
            rev.append(ReverseAttention(rin, ch[i]))
            rin = ch[i]
        self.reverse_attn = nn.ModuleList(rev)

        dec = []
        for i in reversed(range(1, depth)):
            cin = ch[i] + config.attribute_dim if i == depth - 1 else 2 * ch[i]
            dec.append(_DecoderStage(cin, ch[i - 1], norm=True))
        self.decoder = nn.ModuleList(dec)
        self.final = nn.ConvTranspose2d(2 * ch[0], 3, 4, stride=2, padding=1)

    def encode(self, masked_image: torch.Tensor, mask: torch.Tensor) -> LatentFeatures:
        squeeze = masked_image.dim() == 3
        if squeeze:
            masked_image, mask = masked_image.unsqueeze(0), mask.unsqueeze(0)
        if masked_image.shape[-1] != self.config.resolution:
            raise ValueError(
                f"expected resolution {self.config.resolution}, got {masked_image.shape[-1]}"
            )
        x = torch.cat([masked_image, mask.to(masked_image.dtype)], dim=1)

        latent = LatentFeatures(bottleneck=x)
        m = mask.to(masked_image.dtype)
        for i, (stage, attn) in enumerate(zip(self.encoder, self.forward_attn)):
            x = stage(x)
            x, m = attn(x, m)
            latent.forward_maps.append(m)
            if i < len(self.encoder) - 1:
                latent.skips.append(x)
        latent.bottleneck = x

        r = 1.0 - mask.to(masked_image.dtype)
        for attn in self.reverse_attn:
            r = attn.advance(r)
            latent.reverse_maps.append(r)
        return latent

    def inject_attributes(self, latent: LatentFeatures, attrs: torch.Tensor) -> LatentFeatures:
        if attrs.dim() == 1:
            attrs = attrs.unsqueeze(0)
        if attrs.shape[-1] != self.config.attribute_dim:
            raise ValueError(
                f"attribute vector length {attrs.shape[-1]} != {self.config.attribute_dim}"
            )
        b, _, h, w = latent.bottleneck.shape
        if attrs.shape[0] == 1 and b > 1:
            attrs = attrs.expand(b, -1)
        tiled = attrs.to(latent.bottleneck.dtype)[:, :, None, None].expand(-1, -1, h, w)
        return LatentFeatures(
            bottleneck=torch.cat([latent.bottleneck, tiled], dim=1),
            skips=latent.skips,
            forward_maps=latent.forward_maps,
            reverse_maps=latent.reverse_maps,
            attributes=attrs,
        )

    def decode(self, latent: LatentFeatures) -> torch.Tensor:
        depth = self.config.resolved_depth
        want = self.config.stage_channels[-1] + self.config.attribute_dim
        if latent.bottleneck.shape[1] != want:
            raise ValueError(
                f"bottleneck has {latent.bottleneck.shape[1]} channels, expected {want}; "
                "call inject_attributes first"
            )
        x = latent.bottleneck
        for k, stage in enumerate(self.decoder):
            i = depth - 1 - k  # decoder stage producing resolution H / 2^i
            x = stage(x)
            x = x * latent.reverse_maps[i - 1]
            x = torch.cat([x, latent.skips[i - 1]], dim=1)
        return torch.tanh(self.final(x))

    def forward(self, masked_image, mask, attrs) -> torch.Tensor:
        squeeze = masked_image.dim() == 3
        latent = self.encode(masked_image, mask)
        out = self.decode(self.inject_attributes(latent, attrs))
        return out.squeeze(0) if squeeze else out


def generate(masked_image, mask, attrs, state: InpaintGenerator) -> torch.Tensor:
    """Functional completion: masked image + mask + attribute vector -> image."""
    return state(masked_image, mask, attrs)
