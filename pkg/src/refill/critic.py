"""Wasserstein critic with spectral-normalized convolutions and gradient penalty.

Scores are unbounded reals, higher meaning more real. Every conv weight is
divided by a power-iteration estimate of its largest singular value; the
per-layer power vectors update once per training forward and stay frozen in
eval mode so that scoring is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

SN_EPS = 1e-12  # guards division when a weight matrix collapses to zero


def power_iteration_sigma(
    weight: torch.Tensor, u: torch.Tensor, iterations: int = 1, eps: float = SN_EPS
) -> torch.Tensor:
    """Largest-singular-value estimate of ``weight`` reshaped to 2-D.

    ``u`` is the persistent left power vector and is updated in place when
    ``iterations`` > 0. The returned sigma is differentiable in ``weight``
    (u and v are treated as constants).
    """
    w2 = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        v = F.normalize(w2.t().mv(u), dim=0, eps=eps)
        for _ in range(max(iterations - 1, 0)):
            u_next = F.normalize(w2.mv(v), dim=0, eps=eps)
            v = F.normalize(w2.t().mv(u_next), dim=0, eps=eps)
        if iterations > 0:
            u.copy_(F.normalize(w2.mv(v), dim=0, eps=eps))
        # private copies: the buffer may be mutated by later forwards while
        # this sigma's autograd graph is still alive
        u_now = u.clone()
    return torch.einsum("i,ij,j->", u_now, w2, v)


def spectral_normalize(
    weight: torch.Tensor, u: torch.Tensor, iterations: int = 1, eps: float = SN_EPS
) -> torch.Tensor:
    """Weight divided by its estimated largest singular value."""
    sigma = power_iteration_sigma(weight, u, iterations=iterations, eps=eps)
    return weight / sigma.clamp_min(eps)


class SNConv2d(nn.Module):
    """Conv2d whose weight is spectrally normalized on every forward."""

    def __init__(self, cin, cout, kernel_size, stride=1, padding=0):
        super().__init__()
        ref = nn.Conv2d(cin, cout, kernel_size, stride, padding)
        self.weight = nn.Parameter(ref.weight.detach().clone())
        self.bias = nn.Parameter(ref.bias.detach().clone())
        self.stride = stride
        self.padding = padding
        self.register_buffer("u", F.normalize(torch.randn(cout), dim=0))
        # converge the power vector on the initial weight so sigma estimates
        # are accurate from the first forward on
        power_iteration_sigma(self.weight.detach(), self.u, iterations=20)

    def forward(self, x):
        w = spectral_normalize(self.weight, self.u, iterations=1 if self.training else 0)
        return F.conv2d(x, w, self.bias, self.stride, self.padding)


@dataclass(frozen=True)
class CriticConfig:
    resolution: int = 256
    base_channels: int = 64
    channel_cap: int = 512
    stages: int | None = None  # None: log2(resolution) - 2, final map at 4x4

    def __post_init__(self):
        s = self.resolved_stages
        if s < 1:
            raise ValueError("critic needs at least one stage")
        if self.resolution % (2**s) != 0:
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{s}")

    @property
    def resolved_stages(self) -> int:
        if self.stages is not None:
            return self.stages
        return int(math.log2(self.resolution)) - 2

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(
            min(self.base_channels * 2**i, self.channel_cap)
            for i in range(self.resolved_stages)
        )


class Critic(nn.Module):
    def __init__(self, config: CriticConfig):
        super().__init__()
        self.config = config
        layers = []
        cin = 3
        for c in config.stage_channels:
            layers += [SNConv2d(cin, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            cin = c
        self.features = nn.Sequential(*layers)
        self.head = SNConv2d(cin, 1, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected Bx3xHxW input, got {tuple(images.shape)}")
        if images.shape[-1] != self.config.resolution:
            raise ValueError(
                f"expected resolution {self.config.resolution}, got {images.shape[-1]}"
            )
        return self.head(self.features(images)).sum(dim=(1, 2, 3))

    def sn_weights(self):
        """(name, normalized weight) for every spectrally constrained layer."""
        for name, mod in self.named_modules():
            if isinstance(mod, SNConv2d):
                w = spectral_normalize(mod.weight.detach(), mod.u.clone(), iterations=0)
                yield name, w


def critic_score(images: torch.Tensor, state: Critic) -> torch.Tensor:
    return state(images)


def gradient_penalty(
    real: torch.Tensor,
    fake: torch.Tensor,
    critic_fn,
    lambda_gp: float = 10.0,
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """WGAN-GP term: lambda * E[(||grad of critic at blends||_2 - 1)^2].

    Blend points use one uniform epsilon per batch element, broadcast over
    pixels. Pass ``eps`` explicitly for reproducible draws.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ")
    b = real.shape[0]
    if eps is None:
        eps = torch.rand(b, 1, 1, 1, generator=generator, dtype=real.dtype, device=real.device)
    blend = (eps * real + (1.0 - eps) * fake.detach()).requires_grad_(True)
    scores = critic_fn(blend)
    if not scores.requires_grad:
        raise AssertionError("critic output does not depend on its input")
    grads = torch.autograd.grad(scores.sum(), blend, create_graph=True)[0]
    norms = grads.reshape(b, -1).norm(2, dim=1)
    return lambda_gp * ((norms - 1.0) ** 2).mean()


def loss_adversarial_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator side: maximize critic score, implemented as its negation."""
    if fake_scores.numel() == 0:
        raise ValueError("empty batch of scores")
    return -fake_scores.mean()


def loss_adversarial_d(
    real_scores: torch.Tensor, fake_scores: torch.Tensor, gp: torch.Tensor | float
) -> torch.Tensor:
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("empty batch of scores")
    return fake_scores.mean() - real_scores.mean() + gp
