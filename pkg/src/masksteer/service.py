"""HTTP session service for interactive steering of a trained model.

Sessions are server-held (autoregression needs an authoritative current
frame). Images travel as base64 PNG inside JSON; masks as 8-bit grayscale
where value >= 128 means foreground. Errors are JSON ``{code, message}``.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .control import ControlParams
from .data import frame_to_uint8, uint8_to_frame
from .trainer import ModelBundle, advance, load_checkpoint

DEFAULT_TTL_SECONDS = 30 * 60
HISTORY_CAPACITY = 64


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _png_b64_from_uint8(arr: np.ndarray, mode: str) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_frame(frame: torch.Tensor) -> str:
    return _png_b64_from_uint8(frame_to_uint8(frame), "RGB")


def encode_mask(mask: torch.Tensor) -> str:
    u = np.rint(mask.detach().cpu().numpy() * 255.0).clip(0, 255).astype(np.uint8)
    return _png_b64_from_uint8(u, "L")


def decode_frame(b64: str) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return uint8_to_frame(np.asarray(im.convert("RGB")))
    except Exception as exc:
        raise ApiError(400, "bad_image", f"could not decode frame image: {exc}")


def decode_mask_b64(b64: str) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("L"))
        return torch.from_numpy((arr >= 128).astype(np.float32))
    except Exception as exc:
        raise ApiError(400, "bad_control", f"could not decode control mask: {exc}")


@dataclass
class ModelEntry:
    bundle: ModelBundle
    resolution: tuple[int, int] | None   # (H, W); None accepts any /16 size
    stage: int


@dataclass
class Session:
    session_id: str
    model_id: str
    frame: torch.Tensor                  # (1,3,H,W)
    mask: torch.Tensor                   # (1,1,H,W) soft, == M(frame)
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_CAPACITY))
    created: float = field(default_factory=time.monotonic)
    last_used: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)


def load_model_entry(ckpt_path: str | Path) -> ModelEntry:
    models, payload = load_checkpoint(ckpt_path)
    models.eval_()
    res = payload.get("image_size")
    return ModelEntry(models, tuple(res) if res else None, payload["stage"])


def create_app(models: dict[str, ModelEntry], ttl_seconds: float = DEFAULT_TTL_SECONDS,
               clock=time.monotonic) -> FastAPI:
    app = FastAPI(title="masksteer session service")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def reap():
        now = clock()
        with registry_lock:
            dead = [sid for sid, s in sessions.items()
                    if now - s.last_used > ttl_seconds]
            for sid in dead:
                del sessions[sid]

    def get_session(session_id: str) -> Session:
        reap()
        sess = sessions.get(session_id)
        if sess is None:
            raise ApiError(404, "unknown_session", f"no session {session_id}")
        return sess

    def parse_control(body: dict, resolution: tuple[int, int]) -> ControlParams:
        if not isinstance(body, dict) or "mode" not in body:
            raise ApiError(400, "bad_control", "control record needs a 'mode' field")
        mode = body.get("mode")
        try:
            if mode in ("nonparam", "non-param"):
                if "mask" not in body:
                    raise ApiError(400, "bad_control", "nonparam control needs 'mask'")
                mask = decode_mask_b64(body["mask"])
                if tuple(mask.shape) != resolution:
                    raise ApiError(422, "resolution_mismatch",
                                   f"control mask {tuple(mask.shape)} does not match "
                                   f"session resolution {resolution}")
                return ControlParams(mode="nonparam", mask=mask)
            fields = {k: float(body[k]) for k in ("dx", "dy", "rot", "sx", "sy", "shear")
                      if k in body}
            return ControlParams(mode=mode, **fields)
        except ApiError:
            raise
        except ValueError as exc:
            msg = str(exc)
            if "degenerate" in msg:
                raise ApiError(422, "degenerate_affine", msg)
            raise ApiError(400, "bad_control", msg)
        except (TypeError, KeyError) as exc:
            raise ApiError(400, "bad_control", f"malformed control record: {exc}")

    @app.get("/api/v1/models")
    async def list_models():
        return {"models": [
            {"model_id": mid,
             "resolution": list(e.resolution) if e.resolution else None,
             "stage": e.stage}
            for mid, e in models.items()]}

    @app.post("/api/v1/sessions")
    async def create_session(body: dict):
        model_id = body.get("model_id")
        entry = models.get(model_id)
        if entry is None:
            raise ApiError(404, "unknown_model", f"no model {model_id!r}")
        if "frame" not in body:
            raise ApiError(400, "bad_image", "missing 'frame' field")
        frame = decode_frame(body["frame"])
        h, w = frame.shape[-2:]
        if entry.resolution is not None and (h, w) != entry.resolution:
            raise ApiError(422, "resolution_mismatch",
                           f"frame is {h}x{w}, model expects "
                           f"{entry.resolution[0]}x{entry.resolution[1]}")
        if h % 16 or w % 16:
            raise ApiError(422, "resolution_mismatch",
                           f"frame size {h}x{w} must be divisible by 16")
        reap()
        with torch.no_grad():
            mask = entry.bundle.masknet(frame.unsqueeze(0))
        sess = Session(uuid.uuid4().hex, model_id, frame.unsqueeze(0), mask)
        with registry_lock:
            sessions[sess.session_id] = sess
        return {"session_id": sess.session_id,
                "mask": encode_mask(mask[0, 0]),
                "width": w, "height": h}

    @app.post("/api/v1/sessions/{session_id}/step")
    async def step(session_id: str, body: dict):
        sess = get_session(session_id)
        entry = models[sess.model_id]
        resolution = tuple(sess.frame.shape[-2:])
        control = parse_control(body, resolution)
        warning = None
        if control.mode == "nonparam" and float(control.mask.sum()) == 0:
            warning = "empty foreground"
        with sess.lock:
            with torch.no_grad():
                frame, mask, m_c = advance(entry.bundle, sess.frame, sess.mask, control)
            sess.history.append((sess.frame[0], sess.mask[0, 0]))
            sess.frame, sess.mask = frame, mask
            sess.last_used = clock()
        out = {"frame": encode_frame(frame[0]),
               "mask": encode_mask(mask[0, 0]),
               "control_mask": encode_mask(m_c[0, 0])}
        if warning:
            out["warning"] = warning
        return out

    @app.get("/api/v1/sessions/{session_id}")
    async def get_state(session_id: str):
        sess = get_session(session_id)
        with sess.lock:
            sess.last_used = clock()
            return {"session_id": sess.session_id,
                    "model_id": sess.model_id,
                    "frame": encode_frame(sess.frame[0]),
                    "mask": encode_mask(sess.mask[0, 0]),
                    "history": {"length": len(sess.history),
                                "capacity": HISTORY_CAPACITY}}

    @app.delete("/api/v1/sessions/{session_id}")
    async def delete_session(session_id: str):
        with registry_lock:
            if session_id not in sessions:
                raise ApiError(404, "unknown_session", f"no session {session_id}")
            del sessions[session_id]
        return {"ok": True}

    return app
