"""Shared fixtures: deterministic random clouds, cameras, and images."""

import numpy as np
import pytest

from gsx.types import Camera, GaussianCloud


def random_cloud(rng, n, sh_degree=0, feature_dim=4, spread=1.0):
    h = (sh_degree + 1) ** 2
    coeffs = np.zeros((n, 3, h))
    coeffs[:, :, 0] = rng.normal(0.0, 0.8, (n, 3))
    if h > 1:
        coeffs[:, :, 1:] = rng.normal(0.0, 0.1, (n, 3, h - 1))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        positions=rng.uniform(-spread, spread, (n, 3)),
        rotations=quats,
        scales=rng.uniform(0.05, 0.3, (n, 3)) * spread,
        opacities=rng.uniform(0.2, 0.95, n),
        color_coeffs=coeffs,
        object_features=rng.normal(0.0, 0.5, (n, feature_dim)))


def look_down_camera(width=32, height=32, distance=4.0, focal=None):
    focal = focal or 1.2 * max(width, height)
    return Camera(width=width, height=height, fx=focal, fy=focal,
                  cx=width / 2.0, cy=height / 2.0,
                  rotation=np.eye(3),
                  translation=np.array([0.0, 0.0, distance]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
