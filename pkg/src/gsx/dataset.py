"""Dataset directory I/O: cameras.json, PNG images/masks, depth dumps.

Layout (written by the scene generator, consumed by training):
``cameras.json``, ``train/####.png``, ``masks/####.png``,
``gt/object_<id>/####.png``, ``scene.ply``, ``object_<id>.ply``,
``spec.json``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from gsx.types import Camera, ValidationError

DEPTH_MAGIC = b"GSXD"


class DatasetError(ValueError):
    """Inconsistent or incomplete dataset directory."""


def save_image(path, image: np.ndarray) -> None:
    """Write an HxWx3 float image in [0,1] as 8-bit RGB PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_mask(path, labels: np.ndarray) -> None:
    """Write an HxW integer label map as 8-bit single-channel PNG."""
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise ValidationError("label ids must fit in 8 bits")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int64)


def save_binary_mask(path, mask: np.ndarray) -> None:
    save_mask(path, np.asarray(mask, dtype=bool).astype(np.uint8) * 255)


def load_binary_mask(path) -> np.ndarray:
    return load_mask(path) > 127


def save_depth(path, depth: np.ndarray) -> None:
    """Write an HxW float32 depth map with a 16-byte header."""
    d = np.asarray(depth, dtype=np.float32)
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIxxxx", DEPTH_MAGIC, w, h))
        f.write(d.tobytes())


def load_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise DatasetError("depth file header truncated")
        magic, w, h = struct.unpack("<4sIIxxxx", header)
        if magic != DEPTH_MAGIC:
            raise DatasetError("bad depth file magic")
        payload = f.read(4 * w * h)
    if len(payload) < 4 * w * h:
        raise DatasetError("depth file payload truncated")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)


def save_cameras(path, cameras: list[Camera]) -> None:
    with open(path, "w") as f:
        json.dump([cam.to_dict() for cam in cameras], f, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as f:
        raw = json.load(f)
    return [Camera.from_dict(d) for d in raw]


def load_dataset(directory):
    """Load (images, cameras, masks) from a dataset directory.

    Images and cameras are index-aligned; `masks` is None when the
    directory has no ``masks/`` subdirectory.
    """
    directory = Path(directory)
    cam_path = directory / "cameras.json"
    if not cam_path.exists():
        raise DatasetError(f"missing {cam_path}")
    cameras = load_cameras(cam_path)
    image_files = sorted((directory / "train").glob("*.png"))
    if len(image_files) != len(cameras):
        raise DatasetError(
            f"camera/image count mismatch: {len(cameras)} cameras, "
            f"{len(image_files)} images")
    images = [load_image(p) for p in image_files]
    for img, cam in zip(images, cameras):
        if img.shape[:2] != (cam.height, cam.width):
            raise DatasetError("image dimensions do not match camera")

    masks = None
    mask_dir = directory / "masks"
    if mask_dir.is_dir():
        mask_files = sorted(mask_dir.glob("*.png"))
        if len(mask_files) != len(cameras):
            raise DatasetError("camera/mask count mismatch")
        masks = [load_mask(p) for p in mask_files]
        spec_path = directory / "spec.json"
        class_count = None
        if spec_path.exists():
            with open(spec_path) as f:
                class_count = json.load(f).get("class_count")
        for m, cam in zip(masks, cameras):
            if m.shape != (cam.height, cam.width):
                raise DatasetError("mask dimensions do not match camera")
            if class_count is not None and m.max() >= class_count:
                raise DatasetError(
                    f"mask label {int(m.max())} exceeds class count {class_count}")
    return images, cameras, masks
