"""Pluggable hole filling behind a single contract.

Two inpainters live here: a deterministic pull-push pyramid fallback
that needs nothing but numpy, and an HTTP client for a remote diffusion
service. Both honor the same guarantee: pixels outside the fill mask
survive within 2/255 per channel.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass

import numpy as np
import requests
from PIL import Image

PRESERVE_TOL = 2.0 / 255.0


class InpaintError(Exception):
    """Invalid inpainting request."""


class TransportError(InpaintError):
    """Remote inpainter unreachable or timed out."""

    def __init__(self, endpoint: str, message: str):
        super().__init__(f"{message} (endpoint: {endpoint})")
        self.endpoint = endpoint


class ContractViolation(InpaintError):
    """Remote inpainter returned a response violating the wire contract."""


@dataclass
class InpaintRequest:
    image: np.ndarray       # (H, W, 3) float in [0, 1]
    mask: np.ndarray        # (H, W) bool, True = fill
    seed: int = 0

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InpaintError("image must be HxWx3")
        if self.mask.shape != self.image.shape[:2]:
            raise InpaintError("mask dimensions must match the image")
        if self.mask.all():
            raise InpaintError("mask covers every pixel; nothing to anchor on")


@dataclass
class InpainterBinding:
    kind: str = "fallback"          # "fallback" | "remote"
    endpoint: str | None = None
    timeout: float = 120.0
    max_edge: int = 2048

    def __post_init__(self):
        if self.kind not in ("fallback", "remote"):
            raise InpaintError(f"unknown inpainter kind: {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise InpaintError("remote inpainter requires an endpoint")


def _bilinear_up(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    """Upsample a 2x-downsampled image back to (h, w) with bilinear
    interpolation at the block-center sample positions."""
    ch, cw = coarse.shape[:2]
    ys = np.clip((np.arange(h) - 0.5) / 2.0, 0.0, ch - 1.0)
    xs = np.clip((np.arange(w) - 0.5) / 2.0, 0.0, cw - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    tl = coarse[y0[:, None], x0[None, :]]
    tr = coarse[y0[:, None], x1[None, :]]
    bl = coarse[y1[:, None], x0[None, :]]
    br = coarse[y1[:, None], x1[None, :]]
    return ((1 - fy) * ((1 - fx) * tl + fx * tr)
            + fy * ((1 - fx) * bl + fx * br))


def pushpull_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Classic pull-push pyramid fill.

    Pull: weighted 2x block averages of known pixels down to a 1x1
    level. Push: walk back up, blending each level with the bilinear
    upsampling of the coarser one by confidence weight. Known pixels
    are returned untouched.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise InpaintError("mask dimensions must match the image")
    known = ~mask
    if not known.any():
        raise InpaintError("no known pixels to fill from")

    levels = [(img * known[:, :, None], known.astype(np.float64))]
    while max(levels[-1][1].shape) > 1:
        v, w = levels[-1]
        h, wd = w.shape
        ph, pw = (h + 1) // 2 * 2, (wd + 1) // 2 * 2
        vp = np.zeros((ph, pw, 3))
        wp = np.zeros((ph, pw))
        vp[:h, :wd] = v * w[:, :, None]
        wp[:h, :wd] = w
        v2 = (vp[0::2, 0::2] + vp[0::2, 1::2] + vp[1::2, 0::2] + vp[1::2, 1::2])
        w2 = (wp[0::2, 0::2] + wp[0::2, 1::2] + wp[1::2, 0::2] + wp[1::2, 1::2])
        nz = w2 > 0
        v2[nz] /= w2[nz][:, None]
        levels.append((v2, np.minimum(w2, 1.0)))

    filled = levels[-1][0]
    for v, w in reversed(levels[:-1]):
        up = _bilinear_up(filled, w.shape[0], w.shape[1])
        filled = w[:, :, None] * v + (1 - w[:, :, None]) * up
    out = img.copy()
    out[mask] = np.clip(filled[mask], 0.0, 1.0)
    return out


def _box_blur_inside(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """3x3 box blur applied only to masked pixels, smoothing pyramid
    blockiness without touching known content."""
    padded = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(image)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy:dy + image.shape[0], dx:dx + image.shape[1]]
    out = image.copy()
    out[mask] = acc[mask] / 9.0
    return out


def _encode_png(image: np.ndarray) -> str:
    arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0),
                  0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_png(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def remote_inpaint(req: InpaintRequest, endpoint: str,
                   timeout: float = 120.0) -> np.ndarray:
    """POST the request to an inpainting service and validate the reply."""
    mask_img = req.mask.astype(np.float64)[:, :, None].repeat(3, axis=2)
    payload = {
        "image": _encode_png(req.image),
        "mask": _encode_png(mask_img),
        "seed": int(req.seed),
    }
    try:
        resp = requests.post(endpoint.rstrip("/") + "/inpaint", json=payload,
                             timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(endpoint, f"inpaint request failed: {exc}") from exc
    if resp.status_code != 200:
        raise ContractViolation(
            f"service returned HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        body = resp.json()
        out = _decode_png(body["image"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ContractViolation(f"malformed service response: {exc}") from exc
    if out.shape != req.image.shape:
        raise ContractViolation(
            f"response dimensions {out.shape[:2]} differ from "
            f"request {req.image.shape[:2]}")
    drift = np.abs(out - req.image)[~req.mask]
    if drift.size and drift.max() > PRESERVE_TOL + 1e-9:
        raise ContractViolation(
            f"unmasked pixels drifted by {drift.max():.4f} "
            f"(limit {PRESERVE_TOL:.4f})")
    return out


def inpaint(req: InpaintRequest, binding: InpainterBinding) -> np.ndarray:
    """Dispatch to the configured inpainter."""
    if max(req.image.shape[:2]) > binding.max_edge:
        raise InpaintError(
            f"image edge {max(req.image.shape[:2])} exceeds the "
            f"{binding.max_edge}px cap")
    if not req.mask.any():
        return req.image.copy()
    if binding.kind == "remote":
        return remote_inpaint(req, binding.endpoint, binding.timeout)
    filled = pushpull_fill(req.image, req.mask)
    return _box_blur_inside(filled, req.mask)
