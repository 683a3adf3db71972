"""HTTP inference service backing the studio UI.

Each uploaded page gets a session. A ``colorize`` call runs the prior stages
and one generator forward, caching every intermediate; subsequent ``blend``
calls only re-run the CIELAB chroma interpolation, so dragging the lambda
slider costs O(pixels) and never touches the model. Hint or reference
updates invalidate the cached rough-color and generator stages; blending is
refused (409) until the client re-colorizes.
"""

from __future__ import annotations

import base64
import hashlib
import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from . import colorspace
from .errors import ContractViolation, InkalignError
from .generator import AlignmentVAE
from .hints import HintSet, load_hints, save_hints
from .imagetypes import BlendWeight, ImagePlane, ImageStack
from .pipeline import InferenceRequest, colorize as colorize_op
from .priors import HintSplatRoughColor, IdentityShading, RoughColorPrior, ShadingPrior
from .seeding import derive_seed


class ColorizeBody(BaseModel):
    lambda_ab: float = Field(default=0.8, ge=0.0, le=1.0)
    deterministic: bool = True
    seed: int = 0


class BlendBody(BaseModel):
    lambda_ab: float = Field(ge=0.0, le=1.0)


@dataclass
class SessionRecord:
    session_id: str
    page: ImagePlane
    hints: HintSet | None = None
    reference: ImageStack | None = None
    x_g: ImagePlane | None = None
    x_col: ImageStack | None = None
    y_hat: ImageStack | None = None
    y_hat_lab: ImageStack | None = None
    x_col_lab: ImageStack | None = None
    last_y: ImageStack | None = None
    cache_key: str | None = None
    cache_valid: bool = False
    forward_count: int = 0
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def invalidate(self) -> None:
        self.x_col = None
        self.y_hat = None
        self.y_hat_lab = None
        self.x_col_lab = None
        self.cache_key = None
        self.cache_valid = False

    def touch(self) -> None:
        self.updated_at = time.time()


def _png_bytes(arr: np.ndarray, mode: str) -> bytes:
    from PIL import Image

    scaled = np.clip(arr * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(scaled, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def _b64_stack(stack: ImageStack) -> str:
    return base64.b64encode(_png_bytes(stack.data, "RGB")).decode("ascii")


def _b64_plane(plane: ImagePlane) -> str:
    return base64.b64encode(_png_bytes(plane.data, "L")).decode("ascii")


def _decode_upload(payload: bytes) -> np.ndarray:
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(payload))
        img.load()
    except Exception as exc:
        raise HTTPException(status_code=422, detail=f"undecodable image: {exc}") from exc
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def create_app(
    model: AlignmentVAE,
    *,
    shading_prior: ShadingPrior | None = None,
    rough_prior: RoughColorPrior | None = None,
    max_upload_bytes: int = 32 * 1024 * 1024,
    session_ttl: float = 3600.0,
    max_concurrent_forwards: int = 2,
) -> FastAPI:
    """Build the service around one read-only model instance.

    Forwards are dispatched under a bounded semaphore; per-session mutations
    are serialized by a session lock.
    """
    app = FastAPI(title="inkalign", version="0.1.0")
    shading = shading_prior or IdentityShading()
    rough = rough_prior or HintSplatRoughColor()
    sessions: dict[str, SessionRecord] = {}
    registry_lock = threading.Lock()
    forward_slots = threading.Semaphore(max_concurrent_forwards)
    model.eval()

    def _sweep_expired() -> None:
        now = time.time()
        with registry_lock:
            dead = [sid for sid, s in sessions.items() if now - s.updated_at > session_ttl]
            for sid in dead:
                del sessions[sid]

    def _get(session_id: str) -> SessionRecord:
        with registry_lock:
            record = sessions.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return record

    async def _read_body(request: Request) -> bytes:
        body = await request.body()
        if len(body) > max_upload_bytes:
            raise HTTPException(status_code=413, detail="upload exceeds size limit")
        return body

    def _cache_key(record: SessionRecord, deterministic: bool, seed: int) -> str:
        h = hashlib.sha256()
        h.update(save_hints(record.hints).encode() if record.hints else b"no-hints")
        if record.reference is not None:
            h.update(np.ascontiguousarray(record.reference.data).tobytes())
        else:
            h.update(b"no-reference")
        h.update(f"{deterministic}:{seed}".encode())
        return h.hexdigest()

    @app.post("/api/sessions", status_code=201)
    async def create_session(request: Request):
        _sweep_expired()
        body = await _read_body(request)
        if not body:
            raise HTTPException(status_code=422, detail="empty upload")
        arr = _decode_upload(body)
        page = ImagePlane(arr @ np.array([0.299, 0.587, 0.114]))
        f = model.config.downsample_factor
        if page.height % f or page.width % f:
            raise HTTPException(
                status_code=422,
                detail=f"page dims {page.width}x{page.height} must be divisible by {f}",
            )
        record = SessionRecord(session_id=uuid.uuid4().hex, page=page)
        with registry_lock:
            sessions[record.session_id] = record
        return {
            "session_id": record.session_id,
            "width": page.width,
            "height": page.height,
        }

    @app.put("/api/sessions/{session_id}/hints")
    async def put_hints(session_id: str, request: Request):
        record = _get(session_id)
        body = await _read_body(request)
        try:
            hints = load_hints(body.decode("utf-8"))
        except (ContractViolation, UnicodeDecodeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        if (hints.height, hints.width) != (record.page.height, record.page.width):
            raise HTTPException(
                status_code=422,
                detail=(
                    f"hint page {hints.width}x{hints.height} does not match session "
                    f"page {record.page.width}x{record.page.height}"
                ),
            )
        with record.lock:
            record.hints = hints
            record.invalidate()
            record.touch()
        return {"ok": True, "hint_count": len(hints.hints), "cache_valid": False}

    @app.put("/api/sessions/{session_id}/reference")
    async def put_reference(session_id: str, request: Request):
        record = _get(session_id)
        body = await _read_body(request)
        arr = _decode_upload(body)
        with record.lock:
            record.reference = ImageStack(arr)
            record.invalidate()
            record.touch()
        return {"ok": True, "cache_valid": False}

    @app.post("/api/sessions/{session_id}/colorize")
    def colorize_session(session_id: str, body: ColorizeBody):
        record = _get(session_id)
        with record.lock:
            request = InferenceRequest(
                page=record.page,
                hints=record.hints,
                reference=record.reference,
                lambda_ab=BlendWeight(body.lambda_ab),
                deterministic=body.deterministic,
                seed=body.seed,
            )
            try:
                with forward_slots:
                    result = colorize_op(request, shading, rough, model)
            except InkalignError as exc:
                raise HTTPException(status_code=500, detail=str(exc)) from exc
            record.x_g = result.x_g
            record.x_col = result.x_col
            record.y_hat = result.y_hat
            record.y_hat_lab = colorspace.rgb_to_lab(result.y_hat)
            record.x_col_lab = colorspace.rgb_to_lab(result.x_col)
            record.last_y = result.y
            record.cache_key = _cache_key(record, body.deterministic, body.seed)
            record.cache_valid = True
            record.forward_count += 1
            record.touch()
            return {
                "session_id": session_id,
                "lambda_ab": body.lambda_ab,
                "forward_count": record.forward_count,
                "cache_key": record.cache_key,
                "y": _b64_stack(result.y),
                "stages": {
                    "x_g": _b64_plane(result.x_g),
                    "x_col": _b64_stack(result.x_col),
                    "y_hat": _b64_stack(result.y_hat),
                },
            }

    @app.post("/api/sessions/{session_id}/blend")
    def blend_session(session_id: str, body: BlendBody):
        record = _get(session_id)
        with record.lock:
            if not record.cache_valid or record.y_hat_lab is None:
                raise HTTPException(
                    status_code=409,
                    detail="cached stages are stale; run colorize first",
                )
            blended = colorspace.blend_chroma(
                record.y_hat_lab, record.x_col_lab, BlendWeight(body.lambda_ab)
            )
            y = colorspace.lab_to_rgb(blended)
            record.last_y = y
            record.touch()
            return {
                "session_id": session_id,
                "lambda_ab": body.lambda_ab,
                "forward_count": record.forward_count,
                "y": _b64_stack(y),
            }

    @app.get("/api/sessions/{session_id}")
    def session_status(session_id: str):
        record = _get(session_id)
        return {
            "session_id": session_id,
            "width": record.page.width,
            "height": record.page.height,
            "hint_count": len(record.hints.hints) if record.hints else 0,
            "has_reference": record.reference is not None,
            "cache_valid": record.cache_valid,
            "cache_key": record.cache_key,
            "forward_count": record.forward_count,
            "created_at": record.created_at,
            "updated_at": record.updated_at,
        }

    @app.get("/api/health")
    def health():
        return {"ok": True, "sessions": len(sessions)}

    _mount_studio(app)
    return app


def _mount_studio(app: FastAPI) -> None:
    """Serve the studio frontend build when one is available."""
    import os
    from pathlib import Path

    candidates = []
    if os.environ.get("INKALIGN_STUDIO_DIR"):
        candidates.append(Path(os.environ["INKALIGN_STUDIO_DIR"]))
    candidates.append(Path(__file__).resolve().parents[2] / "frontend" / "dist")
    for dist in candidates:
        if dist.is_dir() and (dist / "index.html").exists():
            from fastapi.staticfiles import StaticFiles

            app.mount("/studio", StaticFiles(directory=str(dist), html=True), name="studio")
            return
