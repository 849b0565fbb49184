"""Object-centric floater removal.

Each Gaussian's distance to its K-th nearest *other* Gaussian is
computed exactly with a uniform-grid search (ring expansion until the
K-th candidate bound is certified); Gaussians whose distance exceeds the
connectivity threshold eps are pruned. A brute-force O(N^2) oracle is
kept alongside for verification.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from gsx._backend import use_numba
from gsx.types import GaussianCloud, ValidationError


@dataclass
class KnnConfig:
    k: int = 50
    eps: float | None = None     # None -> 2 * median K-th distance
    grid_cell: float | None = None  # None -> eps

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("K must be >= 1")
        if self.eps is not None and self.eps <= 0:
            raise ValidationError("eps must be > 0")
        if self.grid_cell is not None and self.grid_cell <= 0:
            raise ValidationError("grid_cell must be > 0")


@dataclass
class PruneReport:
    pruned_count: int
    kept_count: int
    pruned_fraction: float
    kth_distances: np.ndarray
    wall_seconds: float
    k: int
    eps: float

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({
                "pruned_count": self.pruned_count,
                "kept_count": self.kept_count,
                "pruned_fraction": self.pruned_fraction,
                "k": self.k,
                "eps": self.eps,
                "wall_seconds": self.wall_seconds,
                "kth_distance_max": float(np.max(self.kth_distances, initial=0.0)),
            }, f, indent=1)


def brute_force_kth_distances(positions: np.ndarray, k: int,
                              chunk: int = 256) -> np.ndarray:
    """O(N^2) oracle: exact K-th other-point distance, +inf when fewer
    than K other points exist."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    out = np.full(n, np.inf)
    if n - 1 < k:
        return out
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = (diff ** 2).sum(axis=2)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        out[start:stop] = np.sqrt(kth)
    return out


def _grid_layout(pts: np.ndarray, cell: float, max_cells: int = 4_000_000):
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    while True:
        dims = np.maximum((span / cell).astype(np.int64) + 1, 1)
        if int(np.prod(dims)) <= max_cells:
            break
        cell *= 2.0
    coords = np.minimum((pts - lo) / cell, dims - 1).astype(np.int64)
    coords = np.maximum(coords, 0)
    ids = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]
    order = np.argsort(ids, kind="stable")
    starts = np.zeros(int(np.prod(dims)) + 1, dtype=np.int64)
    np.add.at(starts, ids + 1, 1)
    starts = np.cumsum(starts)
    return coords, order.astype(np.int64), starts, dims, cell


def kth_neighbor_distances(positions: np.ndarray, k: int,
                           grid_cell: float | None = None) -> np.ndarray:
    """Exact K-th other-point Euclidean distance for every point."""
    pts = np.ascontiguousarray(np.asarray(positions, dtype=np.float64)
                               .reshape(-1, 3))
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0)
    if n - 1 < k:
        return np.full(n, np.inf)
    if grid_cell is None:
        # A fraction of the expected K-th distance on uniform data: fine
        # enough that ring shells hug the true neighborhood (so few
        # excess candidates are scanned), coarse enough that walking
        # empty cells stays cheap.  0.18 is the measured optimum at
        # 200k points, K=1000, and is flat for small K.
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        vol = float(np.prod(np.maximum(hi - lo, 1e-12)))
        grid_cell = max(0.18 * (vol * k / n) ** (1.0 / 3.0), 1e-9)
    if not use_numba() or n < 512:
        return brute_force_kth_distances(pts, k)
    coords, order, starts, dims, cell = _grid_layout(pts, float(grid_cell))
    from gsx.pruning._grid_numba import grid_kth_distances
    return grid_kth_distances(np.ascontiguousarray(pts[order]),
                              np.ascontiguousarray(coords[order]),
                              order, starts,
                              dims[0], dims[1], dims[2], cell, k)


def prune_floaters(cloud: GaussianCloud, cfg: KnnConfig
                   ) -> tuple[GaussianCloud, PruneReport]:
    """Remove Gaussians whose K-th neighbor distance strictly exceeds eps,
    preserving the relative order of survivors."""
    t0 = time.time()
    if cfg.eps is not None and cfg.eps <= 0:
        raise ValidationError("eps must be > 0")
    # Clamp K for small clouds so they are judged against the densest
    # neighborhood they can offer instead of an infinite distance.
    k = min(cfg.k, max(cloud.count - 1, 1))
    dists = kth_neighbor_distances(cloud.positions, k,
                                   grid_cell=cfg.grid_cell or cfg.eps)
    eps = cfg.eps
    if eps is None:
        # Adaptive default: inliers share a common density scale, so a
        # fixed multiple of the median K-th distance separates floaters.
        finite = dists[np.isfinite(dists)]
        eps = 2.0 * float(np.median(finite)) if finite.size \
            else 0.02 * cloud.scene_radius
    if eps <= 0:
        raise ValidationError("resolved eps must be > 0")
    keep = dists <= eps
    kept = cloud.subset(keep)
    report = PruneReport(
        pruned_count=int((~keep).sum()), kept_count=int(keep.sum()),
        pruned_fraction=float((~keep).sum() / max(cloud.count, 1)),
        kth_distances=dists, wall_seconds=time.time() - t0,
        k=k, eps=float(eps))
    if cloud.count and report.kept_count == 0:
        warnings.warn("pruning removed every Gaussian")
    return kept, report
