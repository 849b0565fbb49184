"""Shared domain types: Gaussians, clouds, cameras, configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

UNIT_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when a domain object violates one of its invariants."""


@dataclass(frozen=True)
class Gaussian:
    """A single anisotropic 3D Gaussian primitive."""

    position: np.ndarray       # (3,) world units
    rotation: np.ndarray       # (4,) unit quaternion (w, x, y, z)
    scale: np.ndarray          # (3,) per-axis stddev, world units, > 0
    opacity: float             # in [0, 1]
    color_coeffs: np.ndarray   # (3, (deg+1)^2) spherical-harmonic coefficients
    object_feature: np.ndarray # (d,) unitless

    def validate(self) -> None:
        if abs(np.linalg.norm(self.rotation) - 1.0) > UNIT_TOL:
            raise ValidationError("rotation quaternion is not unit norm")
        if not np.all(self.scale > 0):
            raise ValidationError("scale components must be strictly positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValidationError("opacity must lie in [0, 1]")


def sh_coeff_count(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2


class GaussianCloud:
    """Ordered collection of Gaussians stored as packed arrays.

    Arrays are float64 internally; the on-disk PLY format is float32.
    Instances are treated as immutable value objects: optimization code
    builds new clouds via `replace_arrays` rather than mutating in place.
    """

    __slots__ = ("positions", "rotations", "scales", "opacities",
                 "color_coeffs", "object_features", "scene_radius")

    def __init__(self, positions, rotations, scales, opacities,
                 color_coeffs, object_features, scene_radius=None,
                 validate=True):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        cc = np.asarray(color_coeffs, dtype=np.float64)
        feat = np.asarray(object_features, dtype=np.float64)
        if n == 0:
            h = cc.shape[-1] if cc.ndim == 3 else 1
            d = feat.shape[-1] if feat.ndim == 2 else 0
            self.color_coeffs = cc.reshape(0, 3, h)
            self.object_features = feat.reshape(0, d)
        else:
            self.color_coeffs = cc.reshape(n, 3, -1)
            self.object_features = feat.reshape(n, -1)
        if scene_radius is None:
            scene_radius = compute_scene_radius(self.positions)
        self.scene_radius = float(scene_radius)
        if validate:
            self.validate()

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    @property
    def feature_dim(self) -> int:
        return self.object_features.shape[1]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.color_coeffs.shape[2]))) - 1

    def validate(self) -> None:
        if self.count == 0:
            return
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValidationError("rotation quaternions must have unit norm")
        if not np.all(self.scales > 0):
            raise ValidationError("scale components must be strictly positive")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValidationError("opacities must lie in [0, 1]")
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("positions must be finite")
        min_radius = compute_scene_radius(self.positions)
        if self.scene_radius < min_radius * (1 - 1e-6) - 1e-12:
            raise ValidationError("scene_radius smaller than the bounding sphere")

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            color_coeffs=self.color_coeffs[i].copy(),
            object_feature=self.object_features[i].copy(),
        )

    def subset(self, mask_or_indices) -> "GaussianCloud":
        idx = np.asarray(mask_or_indices)
        return GaussianCloud(
            self.positions[idx], self.rotations[idx], self.scales[idx],
            self.opacities[idx], self.color_coeffs[idx],
            self.object_features[idx], validate=False,
        )

    def replace_arrays(self, **kwargs) -> "GaussianCloud":
        data = {name: getattr(self, name) for name in
                ("positions", "rotations", "scales", "opacities",
                 "color_coeffs", "object_features")}
        data.update(kwargs)
        return GaussianCloud(**data, validate=False)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(), self.rotations.copy(), self.scales.copy(),
            self.opacities.copy(), self.color_coeffs.copy(),
            self.object_features.copy(), scene_radius=self.scene_radius,
            validate=False,
        )

    def allclose(self, other: "GaussianCloud", tol: float = 0.0) -> bool:
        if self.count != other.count:
            return False
        names = ("positions", "rotations", "scales", "opacities",
                 "color_coeffs", "object_features")
        if tol == 0.0:
            return all(np.array_equal(getattr(self, n), getattr(other, n))
                       for n in names)
        return all(np.allclose(getattr(self, n), getattr(other, n), atol=tol)
                   for n in names)

    @staticmethod
    def empty(sh_degree: int = 0, feature_dim: int = 16) -> "GaussianCloud":
        h = sh_coeff_count(sh_degree)
        return GaussianCloud(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros((0,)), np.zeros((0, 3, h)), np.zeros((0, feature_dim)),
            scene_radius=0.0, validate=False,
        )


def compute_scene_radius(positions: np.ndarray) -> float:
    if positions.shape[0] == 0:
        return 0.0
    centroid = positions.mean(axis=0)
    return float(np.linalg.norm(positions - centroid, axis=1).max())


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus world-to-camera extrinsics."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-to-camera rotation
    translation: np.ndarray  # (3,)  world-to-camera translation

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.width < 1 or self.height < 1:
            raise ValidationError("camera dimensions must be >= 1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > UNIT_TOL:
            raise ValidationError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        w2c = np.concatenate([self.rotation, self.translation[:, None]], axis=1)
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "world_to_camera": [float(v) for v in w2c.reshape(-1)],
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        w2c = np.asarray(d["world_to_camera"], dtype=np.float64).reshape(3, 4)
        return Camera(
            width=int(d["width"]), height=int(d["height"]),
            fx=float(d["fx"]), fy=float(d["fy"]),
            cx=float(d["cx"]), cy=float(d["cy"]),
            rotation=w2c[:, :3], translation=w2c[:, 3],
        )


@dataclass
class ClassifierWeights:
    """Linear per-pixel classifier mapping composited features to class logits."""

    weight: np.ndarray  # (C, d)
    bias: np.ndarray    # (C,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise ValidationError("classifier weight/bias shapes disagree")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("classifier weights must be finite")

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    def logits_for(self, features: np.ndarray) -> np.ndarray:
        """Apply to features along the last axis."""
        return features @ self.weight.T + self.bias

    def copy(self) -> "ClassifierWeights":
        return ClassifierWeights(self.weight.copy(), self.bias.copy())


@dataclass
class PipelineConfig:
    """All pipeline hyperparameters, with desk-scale defaults.

    `knn_eps=None` resolves to an adaptive threshold at prune time. The
    `preset` helper exposes the full-scale parameter sets (K=1000 with
    eps 0.2 for real scenes, 0.1 for synthetic ones).
    """

    lambda_dssim: float = 0.2
    lambda_obj: float = 1.0
    lambda_l1_inpaint: float = 0.5
    lambda_perc: float = 0.1
    lambda_opacity: float = 0.01
    lambda_scale: float = 0.01
    knn_k: int = 50
    knn_eps: float | None = None
    distill_iters: int = 500
    finetune_iters: int = 100
    pretrain_iters: int = 2000
    sh_degree: int = 0
    feature_dim: int = 16
    class_count: int = 2
    rng_seed: int = 0
    init_gaussians: int = 4000    # random-init count when pretraining
    inpaint_views: int = 4
    opening_kernel: int = 17
    lr_position: float = 1.6e-4   # multiplied by scene_radius
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_color: float = 2.5e-3
    lr_feature: float = 2.5e-3
    lr_classifier: float = 5e-3

    def __post_init__(self):
        for name in ("lambda_dssim", "lambda_obj", "lambda_l1_inpaint",
                     "lambda_perc", "lambda_opacity", "lambda_scale"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.knn_k < 1:
            raise ValidationError("knn_k must be >= 1")
        if self.knn_eps is not None and self.knn_eps <= 0:
            raise ValidationError("knn_eps must be > 0")
        if self.opening_kernel < 1 or self.opening_kernel % 2 == 0:
            raise ValidationError("opening_kernel must be odd and >= 1")

    @staticmethod
    def preset(name: str) -> "PipelineConfig":
        presets = {
            "desk": {},
            "full-real": {"knn_k": 1000, "knn_eps": 0.2},
            "full-synthetic": {"knn_k": 1000, "knn_eps": 0.1},
        }
        if name not in presets:
            raise ValidationError(f"unknown preset {name!r}")
        return PipelineConfig(**presets[name])

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        valid = {f.name for f in fields(PipelineConfig)}
        unknown = set(d) - valid
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return PipelineConfig(**d)
