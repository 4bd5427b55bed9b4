"""HTTP inference service: completion, attribute extraction, sampling, sweeps.

Images travel as base64-encoded PNG inside JSON bodies. One checkpoint is
active at a time and can be hot-swapped through the admin endpoint; requests
hold a reference to the bundle they started with, so in-flight work finishes
on the old state. Every completion response echoes the seed that produced it,
making results reproducible from the response alone.
"""

from __future__ import annotations

import base64
import io
import logging
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field

from .data import ATTRIBUTE_NAMES, denormalize, normalize
from .masks import apply_mask
from .train import (
    TrainingSnapshot,
    complete,
    load_snapshot,
    sample_pluralistic,
    sweep_attribute,
)

log = logging.getLogger("refill.service")

MAX_PAYLOAD_BYTES = 8 * 1024 * 1024


@dataclass
class ModelBundle:
    snapshot: TrainingSnapshot
    checkpoint_id: str
    resolution: int


def load_bundle(path) -> ModelBundle:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    snapshot = load_snapshot(path)
    snapshot.generator.eval()
    snapshot.extractor.eval()
    snapshot.critic.eval()
    snapshot.aux.eval()
    return ModelBundle(
        snapshot=snapshot,
        checkpoint_id=str(payload.get("checkpoint_id", "unknown")),
        resolution=snapshot.config.resolution,
    )


class SweepSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    index: int
    from_: float = Field(alias="from")
    to: float
    steps: int = 7


class CompletionRequest(BaseModel):
    image: str
    mask: str
    mode: Literal["reference", "explicit", "random"]
    reference_image: str | None = None
    attributes: list[float] | None = None
    k: int | None = None
    seed: int | None = None
    sweep: SweepSpec | None = None


class LoadRequest(BaseModel):
    path: str


def _b64_bytes(payload: str, what: str) -> bytes:
    if len(payload) > MAX_PAYLOAD_BYTES * 4 // 3 + 4:
        raise HTTPException(413, f"{what} payload exceeds {MAX_PAYLOAD_BYTES} bytes")
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception:
        raise HTTPException(400, f"{what} is not valid base64") from None
    if len(raw) > MAX_PAYLOAD_BYTES:
        raise HTTPException(413, f"{what} payload exceeds {MAX_PAYLOAD_BYTES} bytes")
    return raw


def _decode_image(payload: str, what: str = "image") -> torch.Tensor:
    raw = _b64_bytes(payload, what)
    try:
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception:
        raise HTTPException(400, f"{what} does not decode as an image") from None
    return normalize(np.asarray(img, dtype=np.uint8))


def _decode_mask(payload: str) -> torch.Tensor:
    raw = _b64_bytes(payload, "mask")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception:
        raise HTTPException(400, "mask does not decode as an image") from None
    if len(img.getbands()) != 1:
        raise HTTPException(400, "mask must be a single-channel image")
    arr = (np.asarray(img, dtype=np.uint8) >= 128).astype(np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


def _encode_image(image: torch.Tensor) -> str:
    arr = denormalize(image)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(checkpoint=None, studio_dir=None, max_batch: int = 16) -> FastAPI:
    app = FastAPI(title="refill inference service")
    app.state.bundle = load_bundle(checkpoint) if checkpoint else None
    app.state.swap_lock = threading.Lock()

    @app.middleware("http")
    async def request_log(request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        log.info(
            '{"method": "%s", "path": "%s", "status": %d, "ms": %.1f}',
            request.method,
            request.url.path,
            response.status_code,
            (time.perf_counter() - start) * 1000,
        )
        return response

    def bundle_or_409() -> ModelBundle:
        bundle = app.state.bundle
        if bundle is None:
            raise HTTPException(409, "no checkpoint loaded")
        return bundle

    @app.get("/v1/health")
    def health():
        bundle = app.state.bundle
        if bundle is None:
            return {"status": "no_checkpoint", "checkpoint_id": None, "resolution": None}
        return {
            "status": "ok",
            "checkpoint_id": bundle.checkpoint_id,
            "resolution": bundle.resolution,
        }

    @app.post("/v1/admin/load")
    def admin_load(req: LoadRequest):
        try:
            fresh = load_bundle(req.path)
        except FileNotFoundError:
            raise HTTPException(400, f"checkpoint file not found: {req.path}") from None
        except Exception as exc:
            raise HTTPException(400, f"cannot load checkpoint: {exc}") from None
        with app.state.swap_lock:
            app.state.bundle = fresh
        log.info("checkpoint swapped to %s (%s)", req.path, fresh.checkpoint_id)
        return {"status": "ok", "checkpoint_id": fresh.checkpoint_id}

    @app.post("/v1/extract")
    def extract(body: dict):
        bundle = bundle_or_409()
        if "image" not in body:
            raise HTTPException(400, "missing 'image' field")
        image = _decode_image(body["image"])
        if image.shape[-1] != bundle.resolution or image.shape[-2] != bundle.resolution:
            raise HTTPException(
                400,
                f"image must be {bundle.resolution}x{bundle.resolution} for this checkpoint",
            )
        with torch.no_grad():
            attrs = bundle.snapshot.extractor(image)
        return {"attributes": [float(v) for v in attrs], "names": list(ATTRIBUTE_NAMES)}

    @app.post("/v1/complete")
    def complete_endpoint(req: CompletionRequest):
        bundle = bundle_or_409()
        snapshot = bundle.snapshot
        image = _decode_image(req.image)
        mask = _decode_mask(req.mask)
        if image.shape[-2:] != mask.shape[-2:]:
            raise HTTPException(
                400,
                f"image {tuple(image.shape[-2:])} and mask {tuple(mask.shape[-2:])} sizes differ",
            )
        if image.shape[-1] != bundle.resolution:
            raise HTTPException(
                400,
                f"inputs must be {bundle.resolution}x{bundle.resolution} for this checkpoint",
            )
        k = req.k if req.k is not None else 1
        if k < 1:
            raise HTTPException(422, "k must be >= 1")
        if k > max_batch:
            raise HTTPException(422, f"k exceeds the server's max batch of {max_batch}")
        if req.mode != "random" and k != 1:
            raise HTTPException(422, f"k > 1 requires mode=random, got mode={req.mode}")
        seed = req.seed if req.seed is not None else secrets.randbits(31)

        masked = apply_mask(image, mask)

        def base_attrs() -> torch.Tensor:
            if req.mode == "explicit":
                if req.attributes is None:
                    raise HTTPException(422, "mode=explicit requires 'attributes'")
                if len(req.attributes) != 8:
                    raise HTTPException(422, f"need 8 attributes, got {len(req.attributes)}")
                return torch.tensor(req.attributes, dtype=torch.float32)
            if req.mode == "reference":
                if req.reference_image is None:
                    raise HTTPException(422, "mode=reference requires 'reference_image'")
                ref = _decode_image(req.reference_image, "reference_image")
                if ref.shape[-1] != bundle.resolution:
                    raise HTTPException(
                        400, f"reference image must be {bundle.resolution} px"
                    )
                with torch.no_grad():
                    return snapshot.extractor(ref)
            raise HTTPException(422, "random mode has no base attribute vector")

        if req.sweep is not None:
            if req.mode == "random":
                raise HTTPException(422, "sweep requires mode=explicit or mode=reference")
            if not 0 <= req.sweep.index < 8:
                raise HTTPException(422, f"sweep index {req.sweep.index} out of range [0, 8)")
            if req.sweep.steps < 1:
                raise HTTPException(422, "sweep needs at least one step")
            base = base_attrs()
            frames, levels = sweep_attribute(
                masked, mask, base, req.sweep.index, req.sweep.from_, req.sweep.to,
                req.sweep.steps, snapshot,
            )
            used = []
            for v in levels:
                a = base.reshape(8).clone()
                a[req.sweep.index] = float(v)
                used.append([float(x) for x in a])
            images = [_encode_image(frames[i]) for i in range(frames.shape[0])]
        elif req.mode == "random":
            outs, attrs = sample_pluralistic(masked, mask, k, seed, snapshot)
            images = [_encode_image(outs[i]) for i in range(k)]
            used = [[float(x) for x in attrs[i]] for i in range(k)]
        else:
            attrs = base_attrs()
            out = complete(masked, mask, attrs, snapshot)
            images = [_encode_image(out)]
            used = [[float(x) for x in attrs.reshape(8)]]

        return {"images": images, "attributes_used": used, "seed": seed, "mode": req.mode}

    if studio_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=studio_dir, html=True), name="studio")

    return app
