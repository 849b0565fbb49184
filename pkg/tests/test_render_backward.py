"""Analytic renderer gradients against central finite differences."""

import numpy as np
import pytest

from gsx.renderer import render, render_backward
from gsx.types import ClassifierWeights, GaussianCloud

from conftest import look_down_camera, random_cloud

REL_TOL = 1e-4
ABS_TOL = 1e-6


def _scalar_loss(cloud, cam, clf, weights):
    """Deterministic scalar probe: weighted sums of the render outputs."""
    out = render(cloud, cam, clf)
    value = float(np.sum(out.color * weights["color"]))
    value += float(np.sum(out.alpha * weights["alpha"]))
    finite = np.isfinite(out.depth)
    value += float(np.sum(np.where(finite, out.depth, 0.0)
                          * weights["depth"]))
    if clf is not None:
        value += float(np.sum(out.logits * weights["logits"]))
    return value, finite


def _numeric_grad(arr, eval_fn, eps=1e-5):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = eval_fn()
        flat[i] = orig - eps
        fm = eval_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def _check(analytic, numeric, label):
    denom = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(analytic - numeric)
    bad = err > ABS_TOL + REL_TOL * denom
    assert not bad.any(), (
        f"{label}: {bad.sum()} gradient mismatches, "
        f"max err {err.max():.3e}")


@pytest.mark.parametrize("trial", range(3))
def test_all_parameter_gradients_match_fd(trial):
    rng = np.random.default_rng(90 + trial)
    cloud = random_cloud(rng, 6, sh_degree=trial % 2, feature_dim=3)
    cam = look_down_camera(16, 16)
    clf = ClassifierWeights(rng.normal(0, 0.3, (2, 3)),
                            rng.normal(0, 0.1, 2))
    weights = {
        "color": rng.normal(size=(16, 16, 3)),
        "alpha": rng.normal(size=(16, 16)),
        "depth": rng.normal(size=(16, 16)),
        "logits": rng.normal(size=(16, 16, 2)),
    }
    base_value, finite = _scalar_loss(cloud, cam, clf, weights)
    d_depth = np.where(finite, weights["depth"], 0.0)
    grads = render_backward(cloud, cam, clf,
                            d_color=weights["color"],
                            d_alpha=weights["alpha"],
                            d_depth=d_depth,
                            d_logits=weights["logits"])

    def value():
        return _scalar_loss(cloud, cam, clf, weights)[0]

    _check(grads.positions,
           _numeric_grad(cloud.positions, value), "positions")
    _check(grads.scales, _numeric_grad(cloud.scales, value), "scales")
    _check(grads.opacities,
           _numeric_grad(cloud.opacities, value), "opacities")
    _check(grads.rotations,
           _numeric_grad(cloud.rotations, value), "rotations")
    _check(grads.color_coeffs,
           _numeric_grad(cloud.color_coeffs, value), "color_coeffs")
    _check(grads.object_features,
           _numeric_grad(cloud.object_features, value), "object_features")
    _check(grads.classifier_weight,
           _numeric_grad(clf.weight, value), "classifier_weight")
    _check(grads.classifier_bias,
           _numeric_grad(clf.bias, value), "classifier_bias")


def test_color_only_gradient_numpy_backend(monkeypatch):
    monkeypatch.setenv("GSX_NO_NUMBA", "1")
    rng = np.random.default_rng(7)
    cloud = random_cloud(rng, 5)
    cam = look_down_camera(12, 12)
    w = rng.normal(size=(12, 12, 3))

    def value():
        return float(np.sum(render(cloud, cam).color * w))

    grads = render_backward(cloud, cam, None, d_color=w)
    _check(grads.positions, _numeric_grad(cloud.positions, value),
           "positions (numpy backend)")
    _check(grads.opacities, _numeric_grad(cloud.opacities, value),
           "opacities (numpy backend)")


def test_rejects_nonfinite_upstream():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 3)
    cam = look_down_camera(8, 8)
    bad = np.full((8, 8, 3), np.nan)
    with pytest.raises(FloatingPointError):
        render_backward(cloud, cam, None, d_color=bad)


def test_zero_upstream_zero_gradient(rng):
    cloud = random_cloud(rng, 4)
    cam = look_down_camera(8, 8)
    grads = render_backward(cloud, cam, None,
                            d_color=np.zeros((8, 8, 3)))
    assert np.allclose(grads.positions, 0.0)
    assert np.allclose(grads.opacities, 0.0)
