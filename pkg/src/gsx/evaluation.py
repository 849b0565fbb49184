"""Object-extraction quality metrics.

PSNR and SSIM are computed on crops around the ground-truth object: the
tight bounding box of non-background pixels, expanded 1.2x about its
center and clamped to the frame. Per-view rows are averaged per object
and per scene with a plain arithmetic mean of the dB / SSIM values.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from gsx.losses import ssim_value

PSNR_CAP_DB = 100.0
WHITE_THRESHOLD = 250.0 / 255.0


class EvaluationError(ValueError):
    """Misaligned or malformed evaluation inputs."""


@dataclass
class MetricRow:
    scene_id: str
    object_id: int
    view_id: int
    psnr: float
    ssim: float
    crop: tuple[int, int, int, int]    # (row0, col0, row1, col1) inclusive


def tight_bbox(image: np.ndarray,
               alpha: np.ndarray | None = None) -> tuple[int, int, int, int]:
    """Minimal rectangle containing the object.

    Uses alpha > 0 when an alpha map is given, otherwise any pixel that
    is not white within 250/255 per channel. Returns inclusive
    (row0, col0, row1, col1).
    """
    if alpha is not None:
        occupied = np.asarray(alpha) > 0
    else:
        occupied = np.any(np.asarray(image) < WHITE_THRESHOLD, axis=-1)
    if not occupied.any():
        raise EvaluationError("no object pixels to bound")
    rows = np.flatnonzero(occupied.any(axis=1))
    cols = np.flatnonzero(occupied.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def expand_bbox(rect: tuple[int, int, int, int], factor: float,
                height: int, width: int) -> tuple[int, int, int, int]:
    """Scale the rectangle about its center, rounding outward and
    clamping to the image bounds."""
    r0, c0, r1, c1 = rect
    cy = (r0 + r1) / 2.0
    cx = (c0 + c1) / 2.0
    hh = (r1 - r0) * factor / 2.0
    hw = (c1 - c0) * factor / 2.0
    return (max(int(np.floor(cy - hh)), 0),
            max(int(np.floor(cx - hw)), 0),
            min(int(np.ceil(cy + hh)), height - 1),
            min(int(np.ceil(cx + hw)), width - 1))


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """10*log10(1/MSE) on [0,1] images, capped at 100 dB."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _crop(img, rect):
    r0, c0, r1, c1 = rect
    return img[r0:r1 + 1, c0:c1 + 1]


def evaluate_object(pred_images: list[np.ndarray],
                    gt_images: list[np.ndarray],
                    gt_alphas: list[np.ndarray] | None = None,
                    scene_id: str = "scene", object_id: int = 1,
                    expand: float = 1.2,
                    ssim_window: int = 11) -> tuple[list[MetricRow], dict]:
    """Per-view cropped PSNR/SSIM rows plus their means.

    Crops derive from the ground truth only, so prediction errors cannot
    shift the evaluation region. Views whose GT shows no object pixels
    are skipped with a warning.
    """
    if len(pred_images) != len(gt_images):
        raise EvaluationError("prediction/ground-truth view counts differ")
    rows = []
    for view_id, (pred, gt) in enumerate(zip(pred_images, gt_images)):
        if pred.shape != gt.shape:
            raise EvaluationError(f"view {view_id}: shape mismatch")
        alpha = gt_alphas[view_id] if gt_alphas is not None else None
        try:
            rect = tight_bbox(gt, alpha)
        except EvaluationError:
            warnings.warn(f"view {view_id}: empty ground truth, skipped")
            continue
        rect = expand_bbox(rect, expand, gt.shape[0], gt.shape[1])
        pc, gc = _crop(pred, rect), _crop(gt, rect)
        if min(pc.shape[0], pc.shape[1]) >= ssim_window:
            ssim = ssim_value(pc, gc, window_size=ssim_window)
        else:
            win = max(min(pc.shape[0], pc.shape[1]), 3)
            ssim = ssim_value(pc, gc, window_size=win - 1 + win % 2)
        rows.append(MetricRow(scene_id=scene_id, object_id=object_id,
                              view_id=view_id, psnr=psnr(pc, gc),
                              ssim=float(ssim), crop=rect))
    summary = {
        "scene_id": scene_id,
        "object_id": object_id,
        "views": len(rows),
        "mean_psnr": float(np.mean([r.psnr for r in rows])) if rows else None,
        "mean_ssim": float(np.mean([r.ssim for r in rows])) if rows else None,
        "lpips": "unavailable",
    }
    return rows, summary


def summarize_scene(summaries: list[dict], scene_id: str = "scene") -> dict:
    """Arithmetic mean of per-object means."""
    valid = [s for s in summaries if s["mean_psnr"] is not None]
    return {
        "scene_id": scene_id,
        "objects": len(valid),
        "mean_psnr": float(np.mean([s["mean_psnr"] for s in valid]))
        if valid else None,
        "mean_ssim": float(np.mean([s["mean_ssim"] for s in valid]))
        if valid else None,
        "lpips": "unavailable",
    }


def rows_to_csv(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["scene_id", "object_id", "view_id", "psnr", "ssim",
                     "crop_r0", "crop_c0", "crop_r1", "crop_c1"])
    for r in rows:
        writer.writerow([r.scene_id, r.object_id, r.view_id,
                         f"{r.psnr:.6f}", f"{r.ssim:.6f}", *r.crop])
    return buf.getvalue()


def report_json(rows: list[MetricRow], summaries: list[dict],
                scene: dict) -> str:
    return json.dumps({
        "rows": [asdict(r) for r in rows],
        "objects": summaries,
        "scene": scene,
    }, indent=1)


def report_table(summaries: list[dict], scene: dict) -> str:
    """Plain-text summary, one object per line plus the scene mean."""
    lines = [f"{'object':>8} {'PSNR (dB)':>10} {'SSIM':>8} {'LPIPS':>12}"]
    for s in summaries:
        if s["mean_psnr"] is None:
            lines.append(f"{s['object_id']:>8} {'n/a':>10} {'n/a':>8} "
                         f"{'unavailable':>12}")
        else:
            lines.append(f"{s['object_id']:>8} {s['mean_psnr']:>10.2f} "
                         f"{s['mean_ssim']:>8.4f} {'unavailable':>12}")
    if scene["mean_psnr"] is not None:
        lines.append(f"{'mean':>8} {scene['mean_psnr']:>10.2f} "
                     f"{scene['mean_ssim']:>8.4f} {'unavailable':>12}")
    return "\n".join(lines)
