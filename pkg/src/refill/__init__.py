"""Reference-guided facial inpainting with attribute control.

A masked face image plus an 8-entry attribute vector go into an attention
U-Net generator; the attribute vector can come from a reference photo via the
attribute extractor, from explicit slider values, or from random draws for
pluralistic completion. Training pits the generator against a
spectral-normalized WGAN-GP critic under a seven-term composite loss.
"""

from .data import ATTRIBUTE_NAMES, SplitConfig, load_corpus, make_synthetic_corpus
from .masks import MaskSpec, apply_mask, composite, generate_combined_mask, generate_stroke_mask
from .train import (
    TrainConfig,
    TrainingSnapshot,
    build_snapshot,
    complete,
    interpolate_attribute,
    load_snapshot,
    sample_pluralistic,
    sweep_attribute,
    train,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "MaskSpec",
    "SplitConfig",
    "TrainConfig",
    "TrainingSnapshot",
    "apply_mask",
    "build_snapshot",
    "complete",
    "composite",
    "generate_combined_mask",
    "generate_stroke_mask",
    "interpolate_attribute",
    "load_corpus",
    "load_snapshot",
    "make_synthetic_corpus",
    "sample_pluralistic",
    "sweep_attribute",
    "train",
    "train_step",
]
