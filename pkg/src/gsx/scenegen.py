"""Procedural multi-object Gaussian scene generator.

Builds cluttered tabletop-style scenes from analytic primitives
(spheres, boxes, ellipsoid clusters), converts each surface to a small
Gaussian cloud, renders training views of the full scene and per-object
ground-truth views on white, and emits exact per-pixel object masks.
Because the primitives stay analytic, an independent ray-intersection
oracle can decide occlusion per pixel without touching the renderer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsx import dataset
from gsx.occlusion import look_at_camera
from gsx.ply import save_gaussian_ply
from gsx.renderer import render
from gsx.sh import C0
from gsx.types import Camera, GaussianCloud, ValidationError


class GenerationError(RuntimeError):
    """Object placement failed within the retry budget."""


@dataclass
class SceneSpec:
    object_count: int = 5
    primitive_mix: tuple[str, ...] = ("sphere", "box", "ellipsoid-cluster")
    region_half_size: float = 1.0
    occlusion_bias: float = 0.5
    seed: int = 0
    train_views: int = 50
    test_views: int = 50
    width: int = 128
    height: int = 128
    gaussians_per_object: int = 2000
    feature_dim: int = 16

    def __post_init__(self):
        if not 5 <= self.object_count <= 20:
            raise ValidationError("object_count must be in [5, 20]")
        if self.train_views < 1 or self.test_views < 1:
            raise ValidationError("view counts must be >= 1")
        if not 0.0 <= self.occlusion_bias <= 1.0:
            raise ValidationError("occlusion_bias must be in [0, 1]")
        bad = set(self.primitive_mix) - {"sphere", "box", "ellipsoid-cluster"}
        if bad or not self.primitive_mix:
            raise ValidationError(f"unknown primitives: {sorted(bad)}")


@dataclass
class Primitive:
    """One convex analytic part: a sphere, axis-aligned box, or
    axis-aligned ellipsoid, all centered at `center`."""
    kind: str                 # "sphere" | "box" | "ellipsoid"
    center: np.ndarray        # (3,)
    extent: np.ndarray        # radius*ones / half-extents / semi-axes


@dataclass
class SceneObject:
    object_id: int            # 1-based; 0 is background
    parts: list[Primitive]
    albedo: np.ndarray        # (3,)

    @property
    def bounding_radius(self) -> float:
        best = 0.0
        for p in self.parts:
            r = float(np.linalg.norm(p.extent)) if p.kind != "sphere" \
                else float(p.extent[0])
            best = max(best, float(np.linalg.norm(p.center)) + r)
        return best


@dataclass
class GeneratedScene:
    spec: SceneSpec
    objects: list[SceneObject]
    placements: np.ndarray            # (n_obj, 3) object origins
    cloud: GaussianCloud              # full scene
    object_slices: list[slice]        # per-object ranges into `cloud`
    train_cameras: list[Camera]
    test_cameras: list[Camera]
    train_images: list[np.ndarray]
    masks: list[np.ndarray]           # per-view frontmost object id maps
    gt_images: dict[int, list[np.ndarray]]   # object id -> test renders

    def object_cloud(self, object_id: int) -> GaussianCloud:
        sl = self.object_slices[object_id - 1]
        return self.cloud.subset(np.arange(sl.start, sl.stop))


def _sample_sphere_surface(rng, count):
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_primitive_surface(rng, prim: Primitive, count: int) -> np.ndarray:
    if prim.kind == "sphere":
        return prim.center + prim.extent[0] * _sample_sphere_surface(rng, count)
    if prim.kind == "ellipsoid":
        return prim.center + prim.extent * _sample_sphere_surface(rng, count)
    # Box: pick faces proportional to area, then uniform on the face.
    hx, hy, hz = prim.extent
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(count, 2))
    pts = np.empty((count, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    for i in range(count):
        a = axis[i]
        others = [j for j in range(3) if j != a]
        pts[i, a] = sign[i] * prim.extent[a]
        pts[i, others[0]] = uv[i, 0] * prim.extent[others[0]]
        pts[i, others[1]] = uv[i, 1] * prim.extent[others[1]]
    return prim.center + pts


def _make_object(rng, object_id: int, kind: str, size: float) -> SceneObject:
    albedo = rng.uniform(0.15, 0.9, size=3)
    if kind == "sphere":
        parts = [Primitive("sphere", np.zeros(3), np.full(3, size))]
    elif kind == "box":
        half = size * rng.uniform(0.6, 1.0, size=3)
        parts = [Primitive("box", np.zeros(3), half)]
    else:
        parts = []
        for _ in range(rng.integers(2, 4)):
            off = rng.uniform(-0.5, 0.5, size=3) * size
            axes = size * rng.uniform(0.35, 0.7, size=3)
            parts.append(Primitive("ellipsoid", off, axes))
    return SceneObject(object_id, parts, albedo)


def _object_gaussians(rng, obj: SceneObject, origin: np.ndarray,
                      count: int, feature_dim: int) -> GaussianCloud:
    surf_area = sum(float(np.prod(p.extent)) ** (2 / 3) for p in obj.parts)
    weights = [float(np.prod(p.extent)) ** (2 / 3) / surf_area
               for p in obj.parts]
    counts = np.maximum(np.round(np.array(weights) * count).astype(int), 1)
    pts = np.concatenate([
        _sample_primitive_surface(rng, p, c)
        for p, c in zip(obj.parts, counts)]) + origin
    n = pts.shape[0]
    mean_extent = float(np.mean([np.mean(p.extent) for p in obj.parts]))
    scale = 2.0 * mean_extent / np.sqrt(count)
    colors = np.clip(obj.albedo + rng.normal(0, 0.02, size=(n, 3)), 0.0, 1.0)
    return GaussianCloud(
        positions=pts,
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        scales=np.full((n, 3), scale) * rng.uniform(0.8, 1.2, size=(n, 3)),
        opacities=np.full(n, 0.85),
        color_coeffs=((colors - 0.5) / C0)[:, :, None],
        object_features=np.zeros((n, feature_dim)))


def _ring_cameras(rng, count, width, height, center, distance,
                  elevation_range=(35.0, 65.0)):
    """Stratified azimuth ring of perspective cameras aimed at `center`."""
    focal = 1.7 * max(width, height)
    intr = Camera(width=width, height=height, fx=focal, fy=focal,
                  cx=width / 2.0, cy=height / 2.0,
                  rotation=np.eye(3), translation=np.zeros(3))
    cams = []
    for i in range(count):
        azimuth = 2 * np.pi * (i + rng.uniform(0.0, 1.0)) / count
        elev = np.deg2rad(rng.uniform(*elevation_range))
        eye = center + distance * np.array([
            np.cos(elev) * np.cos(azimuth),
            np.cos(elev) * np.sin(azimuth),
            np.sin(elev)])
        cams.append(look_at_camera(eye, center, intr))
    return cams


def _ray_part_hits(prim: Primitive, origin: np.ndarray,
                   dirs: np.ndarray) -> np.ndarray:
    """Nearest positive intersection parameter per ray, +inf on miss."""
    o = origin - prim.center
    if prim.kind in ("sphere", "ellipsoid"):
        inv = 1.0 / prim.extent
        os = o * inv
        ds = dirs * inv
        a = np.sum(ds * ds, axis=1)
        b = 2.0 * np.sum(os[None, :] * ds, axis=1) if os.ndim == 1 \
            else 2.0 * np.sum(os * ds, axis=1)
        c = np.sum(os * os) - 1.0
        disc = b * b - 4 * a * c
        t = np.full(dirs.shape[0], np.inf)
        hit = disc >= 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        near = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        t[hit] = near[hit]
        return t
    # Axis-aligned box via the slab method.
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = 1.0 / dirs
        t_a = (-prim.extent[None, :] - o[None, :]) * inv_d
        t_b = (prim.extent[None, :] - o[None, :]) * inv_d
    t_near = np.nanmax(np.minimum(t_a, t_b), axis=1)
    t_far = np.nanmin(np.maximum(t_a, t_b), axis=1)
    hit = (t_far >= t_near) & (t_far > 1e-9)
    t = np.where(t_near > 1e-9, t_near, t_far)
    return np.where(hit, t, np.inf)


def trace_objects(scene_objects: list[SceneObject], placements: np.ndarray,
                  cam: Camera) -> np.ndarray:
    """Per-object analytic hit depth along each pixel ray, shape
    (n_obj, H, W); +inf where the object is missed."""
    h, w = cam.height, cam.width
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(xs - cam.cx) / cam.fx,
                         (ys - cam.cy) / cam.fy,
                         np.ones_like(xs)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ cam.rotation     # world-space ray directions
    origin = cam.center
    depths = np.full((len(scene_objects), h * w), np.inf)
    for i, obj in enumerate(scene_objects):
        for part in obj.parts:
            shifted = Primitive(part.kind, part.center + placements[i],
                                part.extent)
            # Camera-space z equals t because dirs_cam has unit z.
            t = _ray_part_hits(shifted, origin, dirs)
            depths[i] = np.minimum(depths[i], t)
    return depths.reshape(len(scene_objects), h, w)


def occlusion_oracle(scene: "GeneratedScene", cam: Camera) -> np.ndarray:
    """Boolean (n_obj, H, W): object i is hit by the pixel ray but some
    other object's surface lies strictly in front of it."""
    depths = trace_objects(scene.objects, scene.placements, cam)
    frontmost = depths.min(axis=0)
    hit = np.isfinite(depths)
    return hit & (frontmost[None] < depths - 1e-9)


def _place_objects(rng, spec: SceneSpec, radii: np.ndarray) -> np.ndarray:
    """Sample xy positions with bias-controlled spacing; z keeps each
    object resting around the ground plane."""
    spacing = 2.2 - 2.0 * spec.occlusion_bias    # multiples of radius sums
    # Sparse layouts need more room, so the region grows as the bias drops.
    half = spec.region_half_size * (
        0.55 + 1.85 * (1.0 - spec.occlusion_bias) ** 2)
    placements = np.zeros((spec.object_count, 3))
    for i in range(spec.object_count):
        for attempt in range(200):
            xy = rng.uniform(-half, half, size=2)
            ok = True
            for j in range(i):
                min_d = spacing * (radii[i] + radii[j])
                if np.linalg.norm(xy - placements[j, :2]) < min_d:
                    ok = False
                    break
            if ok:
                placements[i, :2] = xy
                placements[i, 2] = radii[i] * rng.uniform(0.0, 0.4)
                break
        else:
            raise GenerationError(
                f"could not place object {i + 1} after 200 attempts; "
                "reduce object sizes or raise occlusion_bias")
    return placements


def generate_scene(spec: SceneSpec) -> GeneratedScene:
    """Build the scene, render every view, and derive exact masks."""
    rng = np.random.default_rng(spec.seed)
    size_hi = 0.45 * spec.region_half_size / np.sqrt(spec.object_count)
    objects = []
    for i in range(spec.object_count):
        kind = spec.primitive_mix[i % len(spec.primitive_mix)]
        size = rng.uniform(0.6, 1.0) * size_hi
        objects.append(_make_object(rng, i + 1, kind, size))
    radii = np.array([o.bounding_radius for o in objects])

    for restart in range(20):
        placements = _place_objects(rng, spec, radii)
        center = placements.mean(axis=0)
        extent = float(np.linalg.norm(
            placements[:, :2] - center[None, :2], axis=1).max() + radii.max())
        # Higher occlusion bias also lowers the camera ring: side-on views
        # let objects block each other, overhead views rarely do.
        b = spec.occlusion_bias
        elev = (35.0 - 27.0 * b, 65.0 - 42.0 * b)
        train_cams = _ring_cameras(rng, spec.train_views, spec.width,
                                   spec.height, center, 3.3 * extent,
                                   elevation_range=elev)
        test_cams = _ring_cameras(rng, spec.test_views, spec.width,
                                  spec.height, center, 3.3 * extent,
                                  elevation_range=elev)
        if spec.occlusion_bias > 0.0:
            break
        occluded = 0
        for cam in train_cams:
            depths = trace_objects(objects, placements, cam)
            frontmost = depths.min(axis=0)
            occluded += int(np.sum(np.isfinite(depths)
                                   & (frontmost[None] < depths - 1e-9)))
        if occluded == 0:
            break
    else:
        raise GenerationError("no occlusion-free placement found")

    clouds = []
    slices = []
    offset = 0
    for obj, origin in zip(objects, placements):
        sub = _object_gaussians(rng, obj, origin,
                                spec.gaussians_per_object, spec.feature_dim)
        clouds.append(sub)
        slices.append(slice(offset, offset + sub.count))
        offset += sub.count
    full = GaussianCloud(
        positions=np.concatenate([c.positions for c in clouds]),
        rotations=np.concatenate([c.rotations for c in clouds]),
        scales=np.concatenate([c.scales for c in clouds]),
        opacities=np.concatenate([c.opacities for c in clouds]),
        color_coeffs=np.concatenate([c.color_coeffs for c in clouds]),
        object_features=np.concatenate([c.object_features for c in clouds]))

    train_images = []
    masks = []
    for cam in train_cams:
        out = render(full, cam)
        train_images.append(out.color)
        per_obj = np.stack([render(c, cam).depth for c in clouds])
        front = per_obj.min(axis=0)
        label = np.where(np.isfinite(front),
                         per_obj.argmin(axis=0) + 1, 0)
        masks.append(label.astype(np.int64))

    gt_images = {}
    for obj, sub in zip(objects, clouds):
        gt_images[obj.object_id] = [render(sub, cam).color
                                    for cam in test_cams]

    return GeneratedScene(
        spec=spec, objects=objects, placements=placements, cloud=full,
        object_slices=slices, train_cameras=train_cams,
        test_cameras=test_cams, train_images=train_images, masks=masks,
        gt_images=gt_images)


def save_scene(scene: GeneratedScene, directory) -> None:
    """Emit the dataset layout consumed by training and evaluation."""
    directory = Path(directory)
    (directory / "train").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(exist_ok=True)
    dataset.save_cameras(directory / "cameras.json", scene.train_cameras)
    dataset.save_cameras(directory / "test_cameras.json", scene.test_cameras)
    for i, (img, mask) in enumerate(zip(scene.train_images, scene.masks)):
        dataset.save_image(directory / "train" / f"{i:04d}.png", img)
        dataset.save_mask(directory / "masks" / f"{i:04d}.png", mask)
    for oid, images in scene.gt_images.items():
        gt_dir = directory / "gt" / f"object_{oid}"
        gt_dir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            dataset.save_image(gt_dir / f"{i:04d}.png", img)
    save_gaussian_ply(scene.cloud, directory / "scene.ply")
    for obj in scene.objects:
        save_gaussian_ply(scene.object_cloud(obj.object_id),
                          directory / f"object_{obj.object_id}.ply")
    with open(directory / "spec.json", "w") as f:
        json.dump({
            "object_count": scene.spec.object_count,
            "class_count": scene.spec.object_count + 1,
            "seed": scene.spec.seed,
            "occlusion_bias": scene.spec.occlusion_bias,
            "width": scene.spec.width,
            "height": scene.spec.height,
            "train_views": scene.spec.train_views,
            "test_views": scene.spec.test_views,
            "object_ids": [o.object_id for o in scene.objects],
        }, f, indent=1)
