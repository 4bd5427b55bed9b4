"""Versioned checkpoint archives for the four learnable models.

Each archive is a torch container holding named parameter tensors plus the
builder config as plain metadata, under a version tag. Round trips are
bit-exact. The combined training snapshot embeds the four model archives,
optimizer moments, the step counter and a content-derived checkpoint id.
"""

from __future__ import annotations

import dataclasses
import hashlib

import torch

GENERATOR_VERSION = "refill-gen-v1"
CRITIC_VERSION = "refill-critic-v1"
EXTRACTOR_VERSION = "refill-ext-v1"
AUX_VERSION = "refill-aux-v1"
SNAPSHOT_VERSION = "refill-train-v1"


def _config_dict(config) -> dict:
    d = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def model_archive(module, config, version: str) -> dict:
    return {
        "version": version,
        "config": _config_dict(config),
        "params": {k: v.detach().clone() for k, v in module.state_dict().items()},
    }


def check_version(archive: dict, expected: str, source: str = "") -> dict:
    got = archive.get("version")
    if got != expected:
        raise ValueError(f"checkpoint {source or 'archive'} has version {got!r}, expected {expected!r}")
    return archive


def save_model(module, config, version: str, path) -> None:
    torch.save(model_archive(module, config, version), path)


def load_archive(path, expected_version: str) -> dict:
    archive = torch.load(path, map_location="cpu", weights_only=True)
    return check_version(archive, expected_version, source=str(path))


def content_id(archives: dict, step: int) -> str:
    """Deterministic id derived from every parameter byte plus the step."""
    h = hashlib.sha256()
    h.update(str(step).encode())
    for name in sorted(archives):
        h.update(name.encode())
        params = archives[name]["params"]
        for key in sorted(params):
            h.update(key.encode())
            h.update(params[key].numpy().tobytes())
    return h.hexdigest()[:16]
