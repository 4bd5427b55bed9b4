"""End-to-end optimization loop: dual-path generation, loss routing, updates.

One step does, in order: critic update(s) with gradient penalty on
(real, generated-with-extracted-attributes), the auxiliary extractor's
supervised update on real images, then a joint generator+extractor update.
Reconstruction terms flow through the ground-truth-attribute decode only;
adversarial and attribute-coupling terms flow through the extracted-attribute
decode only. Both decodes share one generator object.

All randomness (masks, blend epsilons, batch order, attribute draws) is
derived from (seed, step counter), so resuming from a snapshot reproduces an
uninterrupted run bit for bit.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoints import (
    AUX_VERSION,
    CRITIC_VERSION,
    EXTRACTOR_VERSION,
    GENERATOR_VERSION,
    SNAPSHOT_VERSION,
    check_version,
    content_id,
    model_archive,
)
from .critic import Critic, CriticConfig, gradient_penalty, loss_adversarial_d, loss_adversarial_g
from .data import Corpus, SplitConfig, split_indices
from .extractors import (
    AttributeExtractor,
    AuxExtractorConfig,
    AuxiliaryExtractor,
    ExtractorConfig,
    pretrain_extractor,
)
from .generator import GeneratorConfig, InpaintGenerator
from .losses import (
    FeatureExtractorHandle,
    LossReport,
    LossWeights,
    auto_scales,
    loss_attr,
    loss_hole,
    loss_ms_ssim,
    loss_perceptual,
    loss_style,
    loss_valid,
    total_loss,
    weighted_total,
)
from .masks import MaskSpec, apply_mask, composite, generate_combined_mask

_SEED_MOD = 2**63
_TAG = {"mask": 11, "eps": 13, "batch": 17, "attrs": 19}

ABLATABLE_TERMS = ("adv", "attr", "ms_ssim", "style", "percep", "hole", "valid")
_WEIGHT_FIELD = {"ms_ssim": "ssim"}  # report name -> LossWeights field


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; carries the step's full term dict."""

    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = terms
        bad = [k for k, v in terms.items() if not math.isfinite(v)]
        super().__init__(f"non-finite loss term(s) {bad} at step {step}: {terms}")


@dataclass(frozen=True)
class TrainConfig:
    resolution: int = 256
    batch_size: int = 8
    total_steps: int = 1000
    lr_generator: float = 1e-4
    lr_critic: float = 1e-4
    lr_extractor: float = 1e-4
    lr_aux: float = 1e-4
    adam_betas: tuple[float, float] = (0.5, 0.9)
    critic_steps: int = 1
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_interval: int = 1000
    checkpoint_dir: str | None = None
    log_path: str | None = None
    ablation: tuple[str, ...] = ()
    critic_on_composite: bool = False
    random_attr_mode: str = "bernoulli"  # or "uniform"
    msssim_scales: int | None = None  # None: widest pyramid the resolution allows
    ext_warm_start_steps: int = 0
    # model sizes
    gen_base_channels: int = 64
    gen_depth: int | None = None
    gen_channel_cap: int = 512
    critic_base_channels: int = 64
    critic_channel_cap: int = 512
    ext_width: float = 1.0
    aux_base_channels: int = 64
    aux_channel_cap: int = 512
    feature_seed: int = 0
    feature_width: int = 16
    # data split; None trains on the whole corpus
    split: SplitConfig | None = None
    # mask recipe; None picks resolution-scaled defaults
    mask_square_size: int | None = None
    mask_stroke_count: tuple[int, int] = (1, 20)
    mask_stroke_width: tuple[int, int] | None = None
    mask_bucket: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("lr_generator", "lr_critic", "lr_extractor", "lr_aux"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.random_attr_mode not in ("bernoulli", "uniform"):
            raise ValueError(f"unknown random_attr_mode {self.random_attr_mode!r}")
        unknown = set(self.ablation) - set(ABLATABLE_TERMS)
        if unknown:
            raise ValueError(f"unknown ablation term(s): {sorted(unknown)}")

    def effective_weights(self) -> LossWeights:
        zeroed = {_WEIGHT_FIELD.get(t, t): 0.0 for t in self.ablation}
        return dataclasses.replace(self.weights, **zeroed)

    def mask_spec(self, seed: int) -> MaskSpec:
        scale = self.resolution / 256.0
        square = self.mask_square_size
        if square is None:
            square = int(round(85 * scale))
        widths = self.mask_stroke_width
        if widths is None:
            widths = (max(1, round(5 * scale)), max(2, round(30 * scale)))
        return MaskSpec(
            height=self.resolution,
            width=self.resolution,
            square_size=square,
            stroke_count_range=self.mask_stroke_count,
            stroke_width_range=widths,
            target_ratio_bucket=self.mask_bucket,
            seed=seed,
        )

    def scales(self) -> int:
        return self.msssim_scales or auto_scales(self.resolution)


def _rng(seed: int, step: int, tag: str, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        [seed % _SEED_MOD, step % _SEED_MOD, _TAG[tag], extra % _SEED_MOD]
    )


def _derived_seed(seed: int, step: int, tag: str, extra: int = 0) -> int:
    return int(_rng(seed, step, tag, extra).integers(0, 2**31))


def batch_masks(config: TrainConfig, step: int, batch: int) -> torch.Tensor:
    """One fresh combined (strokes + square) mask per sample, derived from step."""
    specs = [config.mask_spec(_derived_seed(config.seed, step, "mask", i)) for i in range(batch)]
    return torch.stack([generate_combined_mask(s) for s in specs])


def random_attributes(k: int, seed: int, mode: str = "bernoulli") -> torch.Tensor:
    rng = np.random.default_rng(seed % _SEED_MOD)
    if mode == "bernoulli":
        draws = rng.integers(0, 2, size=(k, 8)).astype(np.float32)
    elif mode == "uniform":
        draws = rng.random((k, 8), dtype=np.float32)
    else:
        raise ValueError(f"unknown attribute mode {mode!r}")
    return torch.from_numpy(draws)


@dataclass
class TrainingSnapshot:
    """Everything needed to continue training bit-identically."""

    config: TrainConfig
    generator: InpaintGenerator
    critic: Critic
    extractor: AttributeExtractor
    aux: AuxiliaryExtractor
    features: FeatureExtractorHandle
    opt_generator: torch.optim.Adam
    opt_critic: torch.optim.Adam
    opt_aux: torch.optim.Adam
    step: int = 0

    def checkpoint_id(self) -> str:
        return content_id(self._model_archives(), self.step)

    def _model_archives(self) -> dict:
        return {
            "generator": model_archive(self.generator, self.generator.config, GENERATOR_VERSION),
            "critic": model_archive(self.critic, self.critic.config, CRITIC_VERSION),
            "extractor": model_archive(self.extractor, self.extractor.config, EXTRACTOR_VERSION),
            "aux": model_archive(self.aux, self.aux.config, AUX_VERSION),
        }

    def save(self, path) -> None:
        archives = self._model_archives()
        payload = {
            "version": SNAPSHOT_VERSION,
            "checkpoint_id": content_id(archives, self.step),
            "step": self.step,
            "config": _config_to_dict(self.config),
            **archives,
            "opt_generator": self.opt_generator.state_dict(),
            "opt_critic": self.opt_critic.state_dict(),
            "opt_aux": self.opt_aux.state_dict(),
        }
        torch.save(payload, path)


def _config_to_dict(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["weights"] = dataclasses.asdict(config.weights)
    d["split"] = dataclasses.asdict(config.split) if config.split else None
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d.get("weights", {}))
    if d.get("split"):
        d["split"] = SplitConfig(**d["split"])
    for key in ("adam_betas", "ablation", "mask_stroke_count", "mask_stroke_width", "mask_bucket"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return TrainConfig(**d)


def build_snapshot(config: TrainConfig) -> TrainingSnapshot:
    """Fresh models and optimizers, deterministically initialized from the seed."""
    torch.manual_seed(config.seed)
    generator = InpaintGenerator(
        GeneratorConfig(
            resolution=config.resolution,
            base_channels=config.gen_base_channels,
            depth=config.gen_depth,
            channel_cap=config.gen_channel_cap,
        )
    )
    critic = Critic(
        CriticConfig(
            resolution=config.resolution,
            base_channels=config.critic_base_channels,
            channel_cap=config.critic_channel_cap,
        )
    )
    extractor = AttributeExtractor(
        ExtractorConfig(resolution=config.resolution, width=config.ext_width)
    )
    aux = AuxiliaryExtractor(
        AuxExtractorConfig(
            resolution=config.resolution,
            base_channels=config.aux_base_channels,
            channel_cap=config.aux_channel_cap,
        )
    )
    features = FeatureExtractorHandle.fixed_random(config.feature_seed, config.feature_width)
    opt_generator = torch.optim.Adam(
        [
            {"params": generator.parameters(), "lr": config.lr_generator},
            {"params": extractor.parameters(), "lr": config.lr_extractor},
        ],
        lr=config.lr_generator,
        betas=config.adam_betas,
    )
    opt_critic = torch.optim.Adam(critic.parameters(), lr=config.lr_critic, betas=config.adam_betas)
    opt_aux = torch.optim.Adam(aux.parameters(), lr=config.lr_aux, betas=config.adam_betas)
    return TrainingSnapshot(
        config=config,
        generator=generator,
        critic=critic,
        extractor=extractor,
        aux=aux,
        features=features,
        opt_generator=opt_generator,
        opt_critic=opt_critic,
        opt_aux=opt_aux,
    )


def load_snapshot(path) -> TrainingSnapshot:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    check_version(payload, SNAPSHOT_VERSION, source=str(path))
    config = config_from_dict(payload["config"])
    snapshot = build_snapshot(config)
    for name, module, version in (
        ("generator", snapshot.generator, GENERATOR_VERSION),
        ("critic", snapshot.critic, CRITIC_VERSION),
        ("extractor", snapshot.extractor, EXTRACTOR_VERSION),
        ("aux", snapshot.aux, AUX_VERSION),
    ):
        archive = check_version(payload[name], version, source=name)
        module.load_state_dict(archive["params"])
    snapshot.opt_generator.load_state_dict(payload["opt_generator"])
    snapshot.opt_critic.load_state_dict(payload["opt_critic"])
    snapshot.opt_aux.load_state_dict(payload["opt_aux"])
    snapshot.step = int(payload["step"])
    return snapshot


def generator_terms(
    images: torch.Tensor,
    attrs: torch.Tensor,
    masked: torch.Tensor,
    masks: torch.Tensor,
    snapshot: TrainingSnapshot,
    config: TrainConfig,
    a_ext: torch.Tensor | None = None,
):
    """Generator-side loss terms for one batch.

    Reconstruction terms come from the decode conditioned on the ground-truth
    attributes; the adversarial and attribute-coupling terms come from the
    decode conditioned on ``a_ext`` (extracted from the intact images unless
    overridden). Returns (terms, fake image, aux reading, extracted attrs).
    """
    gen, ext, aux, critic = snapshot.generator, snapshot.extractor, snapshot.aux, snapshot.critic
    recon = gen(masked, masks, attrs)
    if a_ext is None:
        a_ext = ext(images)
    fake = gen(masked, masks, a_ext)
    comp = composite(masked, recon, masks)
    a_aux = aux(fake)
    critic_in = composite(masked, fake, masks) if config.critic_on_composite else fake
    terms = {
        "hole": loss_hole(recon, images, masks),
        "valid": loss_valid(recon, masked, masks),
        "percep": loss_perceptual(images, comp, snapshot.features),
        "style": loss_style(images, comp, snapshot.features),
        "ms_ssim": loss_ms_ssim(recon, images, scales=config.scales()),
        # the coupling half of the attribute constraint; the supervised half
        # trains only the auxiliary extractor
        "attr": torch.nn.functional.mse_loss(a_aux, a_ext),
        "adv_g": loss_adversarial_g(critic(critic_in)),
    }
    return terms, fake, a_aux, a_ext


def train_step(
    batch: tuple[torch.Tensor, torch.Tensor],
    snapshot: TrainingSnapshot,
    config: TrainConfig,
    masks: torch.Tensor | None = None,
) -> tuple[TrainingSnapshot, LossReport]:
    images, attrs = batch
    if images.dim() != 4:
        raise ValueError(f"expected a batched image tensor, got shape {tuple(images.shape)}")
    step = snapshot.step
    w = config.effective_weights()
    b = images.shape[0]

    if masks is None:
        masks = batch_masks(config, step, b)
    masked = apply_mask(images, masks)

    gen, critic, ext, aux = snapshot.generator, snapshot.critic, snapshot.extractor, snapshot.aux

    def critic_input(fake):
        return composite(masked, fake, masks) if config.critic_on_composite else fake

    # critic update(s); skipped entirely when the adversarial term is ablated
    adv_d_val, gp_val = 0.0, 0.0
    if w.adv > 0:
        with torch.no_grad():
            fake_frozen = critic_input(gen(masked, masks, ext(images)))
        for k in range(config.critic_steps):
            eps = torch.from_numpy(
                _rng(config.seed, step, "eps", k).random((b, 1, 1, 1))
            ).to(images.dtype)
            gp = gradient_penalty(images, fake_frozen, critic, lambda_gp=w.gp, eps=eps)
            l_d = loss_adversarial_d(critic(images), critic(fake_frozen), gp)
            snapshot.opt_critic.zero_grad()
            l_d.backward()
            snapshot.opt_critic.step()
            adv_d_val, gp_val = float(l_d.detach()), float(gp.detach())

    # auxiliary extractor learns ground-truth attributes before being read
    ae_on_gt = aux(images)
    l_ae = torch.nn.functional.mse_loss(attrs, ae_on_gt)
    snapshot.opt_aux.zero_grad()
    l_ae.backward()
    snapshot.opt_aux.step()

    # generator + extractor update
    terms, _, a_aux, a_ext = generator_terms(images, attrs, masked, masks, snapshot, config)
    objective = weighted_total(terms, w)
    snapshot.opt_generator.zero_grad()
    objective.backward()
    snapshot.opt_generator.step()

    report_terms = {k: float(v.detach()) for k, v in terms.items()}
    # reported attribute term is the full constraint, both halves
    report_terms["attr"] = float(
        loss_attr(a_aux.detach(), a_ext.detach(), attrs, ae_on_gt.detach())
    )
    report_terms["adv_d"] = adv_d_val
    report_terms["gp"] = gp_val
    if any(not math.isfinite(v) for v in report_terms.values()):
        raise TrainingDiverged(step, report_terms)

    snapshot.step = step + 1
    return snapshot, total_loss(report_terms, w, step=step)


def _train_pool(corpus: Corpus, config: TrainConfig) -> np.ndarray:
    if config.split is None:
        return np.arange(len(corpus))
    train_idx, _ = split_indices(corpus, config.split)
    return train_idx


def batch_indices_for_step(pool_size: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic batch composition: reshuffle each epoch, partial tail kept."""
    per_epoch = max(1, math.ceil(pool_size / batch_size))
    epoch, pos = divmod(step, per_epoch)
    order = np.random.default_rng([seed % _SEED_MOD, epoch, _TAG["batch"]]).permutation(pool_size)
    return order[pos * batch_size : (pos + 1) * batch_size]


def train(config: TrainConfig, corpus: Corpus, resume_from=None) -> TrainingSnapshot:
    """Run ``total_steps`` of training with periodic checkpoints and logging."""
    snapshot = load_snapshot(resume_from) if resume_from else build_snapshot(config)
    pool = _train_pool(corpus, config)

    if config.ext_warm_start_steps > 0 and snapshot.step == 0:
        warm = pool[: min(len(pool), 64)]
        images, attrs = corpus.batch(warm)
        pretrain_extractor(
            snapshot.extractor,
            images,
            attrs,
            steps=config.ext_warm_start_steps,
            seed=config.seed,
        )

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(config.log_path, "a") if config.log_path else None
    try:
        while snapshot.step < config.total_steps:
            idx = batch_indices_for_step(len(pool), config.batch_size, config.seed, snapshot.step)
            batch = corpus.batch(pool[idx])
            snapshot, report = train_step(batch, snapshot, config)
            if log_fh:
                log_fh.write(report.to_json() + "\n")
                log_fh.flush()
            if ckpt_dir and snapshot.step % config.checkpoint_interval == 0:
                snapshot.save(ckpt_dir / f"step_{snapshot.step:07d}.pt")
        if ckpt_dir:
            snapshot.save(ckpt_dir / "final.pt")
    finally:
        if log_fh:
            log_fh.close()
    return snapshot


# --- sampling ----------------------------------------------------------------


@torch.no_grad()
def complete(masked_image, mask, attrs, snapshot: TrainingSnapshot) -> torch.Tensor:
    """Generate and composite, preserving valid pixels exactly."""
    out = snapshot.generator(masked_image, mask, attrs)
    return composite(masked_image, out, mask)


@torch.no_grad()
def sample_pluralistic(
    masked_image: torch.Tensor,
    mask: torch.Tensor,
    k: int,
    seed: int,
    snapshot: TrainingSnapshot,
    mode: str | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """k completions of one masked image under k random attribute draws.

    Returns (completions (k,3,H,W), attributes (k,8)).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if masked_image.dim() != 3:
        raise ValueError("sample_pluralistic expects a single (3,H,W) image")
    attrs = random_attributes(k, seed, mode or snapshot.config.random_attr_mode)
    masked = masked_image.unsqueeze(0).expand(k, -1, -1, -1)
    m = mask.unsqueeze(0).expand(k, -1, -1, -1) if mask.dim() == 3 else mask
    out = snapshot.generator(masked, m, attrs)
    return composite(masked, out, m), attrs


@torch.no_grad()
def interpolate_attribute(
    masked_image: torch.Tensor,
    mask: torch.Tensor,
    base_attrs: torch.Tensor,
    index: int,
    intensity: float,
    snapshot: TrainingSnapshot,
) -> torch.Tensor:
    """Completion with one attribute overridden; intensities outside [0, 1]
    extrapolate beyond the trained range."""
    if not 0 <= index < 8:
        raise ValueError(f"attribute index {index} out of range [0, 8)")
    attrs = base_attrs.reshape(8).clone()
    attrs[index] = float(intensity)
    out = snapshot.generator(masked_image, mask, attrs)
    return composite(masked_image, out, mask)


def sweep_attribute(
    masked_image, mask, base_attrs, index, start, stop, steps, snapshot
) -> tuple[torch.Tensor, torch.Tensor]:
    """Filmstrip over one attribute; returns (images (steps,...), intensities)."""
    if steps < 1:
        raise ValueError("sweep needs at least one step")
    levels = torch.linspace(float(start), float(stop), steps)
    frames = torch.stack(
        [
            interpolate_attribute(masked_image, mask, base_attrs, index, float(v), snapshot)
            for v in levels
        ]
    )
    return frames, levels
