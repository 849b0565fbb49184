"""Occlusion reasoning: depth-comparison masks, morphological smoothing,
inpainting-camera sampling, and 2x2 grid assembly.

A pixel is marked to-inpaint when the full-scene depth is strictly
closer than the object-only depth. With the renderer's +inf sentinel on
uncovered pixels this automatically includes background covered by the
scene, letting the inpainter clean up object borders.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from gsx.types import Camera, GaussianCloud


def occlusion_mask(scene_depth: np.ndarray, object_depth: np.ndarray) -> np.ndarray:
    """Strict depth comparison; True marks pixels to inpaint."""
    scene_depth = np.asarray(scene_depth)
    object_depth = np.asarray(object_depth)
    if scene_depth.shape != object_depth.shape:
        raise ValueError("depth map shapes differ")
    return scene_depth < object_depth


def morphological_open(mask: np.ndarray, kernel: int = 17) -> np.ndarray:
    """Erosion then dilation with a square structuring element and zero
    padding outside the image for both passes."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    mask = np.asarray(mask, dtype=bool)
    if kernel == 1:
        return mask.copy()
    structure = np.ones((kernel, kernel), dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return ndimage.binary_dilation(eroded, structure=structure, border_value=0)


def silhouette_band(alpha: np.ndarray, threshold: float = 0.05,
                    iterations: int = 8) -> np.ndarray:
    """Object coverage dilated by ``iterations`` pixels.

    Inpainting repairs the object where an occluder hid it, which can
    only be on or just beyond the object's own silhouette.  Intersecting
    occlusion masks with this band keeps fills from spreading over the
    occluder's whole footprint, where they would overwrite pixels the
    object model should leave empty.
    """
    coverage = np.asarray(alpha) > threshold
    return ndimage.binary_dilation(coverage, iterations=iterations)


def morphological_open_reference(mask: np.ndarray, kernel: int = 17) -> np.ndarray:
    """Naive double-loop erosion/dilation oracle for tests."""
    mask = np.asarray(mask, dtype=bool)
    r = kernel // 2
    h, w = mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r:r + h, r:r + w] = mask
    eroded = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            eroded[y, x] = padded[y:y + kernel, x:x + kernel].all()
    padded[:] = False
    padded[r:r + h, r:r + w] = eroded
    dilated = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            dilated[y, x] = padded[y:y + kernel, x:x + kernel].any()
    return dilated


def look_at_camera(eye: np.ndarray, target: np.ndarray,
                   intrinsics: Camera, up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera at `eye` whose optical axis passes through `target`,
    borrowing intrinsics (size, focal, principal point)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return Camera(width=intrinsics.width, height=intrinsics.height,
                  fx=intrinsics.fx, fy=intrinsics.fy,
                  cx=intrinsics.cx, cy=intrinsics.cy,
                  rotation=rot, translation=-rot @ eye)


def sample_object_cameras(object_cloud: GaussianCloud, intrinsics: Camera,
                          count: int = 4, seed: int = 0,
                          elevation_deg=(10.0, 45.0),
                          radius_multiplier: float = 2.5,
                          min_distance: float = 0.0) -> list[Camera]:
    """Object-centered viewpoints: uniform azimuth, bounded elevation,
    radius proportional to the object's bounding sphere. `min_distance`
    keeps the cameras clear of surrounding scene clutter."""
    if object_cloud.count == 0:
        raise ValueError("cannot sample cameras around an empty cloud")
    rng = np.random.default_rng(seed)
    centroid = object_cloud.positions.mean(axis=0)
    radius = float(np.linalg.norm(object_cloud.positions - centroid,
                                  axis=1).max())
    dist = max(radius_multiplier * max(radius, 1e-6), min_distance)
    cams = []
    for _ in range(count):
        azimuth = rng.uniform(0.0, 2 * np.pi)
        elevation = np.deg2rad(rng.uniform(*elevation_deg))
        eye = centroid + dist * np.array([
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation)])
        cams.append(look_at_camera(eye, centroid, intrinsics))
    return cams


def assemble_grid(images: list[np.ndarray]) -> np.ndarray:
    """Four HxW images to one 2Hx2W grid, row-major (TL, TR, BL, BR)."""
    if len(images) != 4:
        raise ValueError("grid assembly needs exactly 4 images")
    shape = images[0].shape
    for img in images[1:]:
        if img.shape != shape:
            raise ValueError("grid images must share a common shape")
    top = np.concatenate([images[0], images[1]], axis=1)
    bottom = np.concatenate([images[2], images[3]], axis=1)
    return np.concatenate([top, bottom], axis=0)


def split_grid(grid: np.ndarray) -> list[np.ndarray]:
    """Inverse of assemble_grid."""
    h, w = grid.shape[0], grid.shape[1]
    if h % 2 or w % 2:
        raise ValueError("grid dimensions must be even")
    hh, hw = h // 2, w // 2
    return [grid[:hh, :hw].copy(), grid[:hh, hw:].copy(),
            grid[hh:, :hw].copy(), grid[hh:, hw:].copy()]
