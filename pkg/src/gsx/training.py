"""Optimization loops: scene pretraining, object-feature distillation,
object selection, and occlusion-inpainted fine-tuning.

Scales and opacities are optimized in log / logit space so their
invariants (positive scale, opacity in (0,1)) hold by construction;
rotations are renormalized to unit quaternions after every step.
All loops are deterministic for a fixed seed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from gsx import losses
from gsx.renderer import render, render_backward
from gsx.types import Camera, ClassifierWeights, GaussianCloud, PipelineConfig

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass
class OptimizerState:
    """Per-parameter Adam moment accumulators."""

    moments: dict = field(default_factory=dict)  # name -> (m, v)
    step: int = 0

    def ensure(self, name: str, shape) -> None:
        if name not in self.moments:
            self.moments[name] = (np.zeros(shape), np.zeros(shape))


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def add(self, iteration: int, components: dict) -> None:
        row = {"iteration": iteration}
        row.update(components)
        row["total"] = float(sum(components.values()))
        self.records.append(row)

    def to_csv(self, path) -> None:
        if not self.records:
            with open(path, "w") as f:
                f.write("iteration,total\n")
            return
        keys = list(self.records[0].keys())
        with open(path, "w") as f:
            f.write(",".join(keys) + "\n")
            for row in self.records:
                f.write(",".join(str(row[k]) for k in keys) + "\n")


def adam_step(params: dict, grads: dict, state: OptimizerState,
              lr_table: dict) -> dict:
    """One Adam update over a dict of parameter arrays, in place on copies.

    Returns the updated parameter dict; `state` is mutated. A parameter
    named 'rotations' is renormalized row-wise after its update.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        state.ensure(name, p.shape)
        m, v = state.moments[name]
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        state.moments[name] = (m, v)
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        new_p = p - lr_table[name] * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if name == "rotations":
            new_p = new_p / np.linalg.norm(new_p, axis=-1, keepdims=True)
        out[name] = new_p
    return out


def _cloud_to_params(cloud: GaussianCloud, trainable: tuple) -> dict:
    full = {
        "positions": cloud.positions.copy(),
        "rotations": cloud.rotations.copy(),
        "log_scales": np.log(cloud.scales),
        "logit_opacities": _logit(cloud.opacities),
        "color_coeffs": cloud.color_coeffs.copy(),
        "object_features": cloud.object_features.copy(),
    }
    return {k: v for k, v in full.items() if k in trainable}


def _params_to_cloud(cloud: GaussianCloud, params: dict) -> GaussianCloud:
    updates = {}
    if "positions" in params:
        updates["positions"] = params["positions"]
    if "rotations" in params:
        updates["rotations"] = params["rotations"]
    if "log_scales" in params:
        updates["scales"] = np.exp(params["log_scales"])
    if "logit_opacities" in params:
        updates["opacities"] = _sigmoid(params["logit_opacities"])
    if "color_coeffs" in params:
        updates["color_coeffs"] = params["color_coeffs"]
    if "object_features" in params:
        updates["object_features"] = params["object_features"]
    return cloud.replace_arrays(**updates)


def _logit(x):
    x = np.clip(x, 1e-9, 1 - 1e-9)
    return np.log(x) - np.log1p(-x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _reparam_grads(param_grads, cloud: GaussianCloud, trainable: tuple) -> dict:
    """Chain renderer gradients into the optimization space."""
    full = {
        "positions": param_grads.positions,
        "rotations": param_grads.rotations,
        "log_scales": param_grads.scales * cloud.scales,
        "logit_opacities": param_grads.opacities * cloud.opacities
        * (1 - cloud.opacities),
        "color_coeffs": param_grads.color_coeffs,
        "object_features": param_grads.object_features,
    }
    return {k: v for k, v in full.items() if k in trainable}


def _lr_table(config: PipelineConfig, scene_radius: float) -> dict:
    return {
        "positions": config.lr_position * max(scene_radius, 1e-6),
        "rotations": config.lr_rotation,
        "log_scales": config.lr_scale,
        "logit_opacities": config.lr_opacity,
        "color_coeffs": config.lr_color,
        "object_features": config.lr_feature,
        "classifier_weight": config.lr_classifier,
        "classifier_bias": config.lr_classifier,
    }


GEOMETRY_PARAMS = ("positions", "rotations", "log_scales", "logit_opacities",
                   "color_coeffs")


def pretrain_scene(cloud: GaussianCloud, images: list, cameras: list,
                   config: PipelineConfig) -> tuple[GaussianCloud, TrainReport]:
    """Photometric training of the full-scene model.

    Minimizes (1-l)*L1 + l*D-SSIM plus the opacity/scale regularizers over
    uniformly sampled training views. The Gaussian count stays fixed.
    """
    if not images:
        raise ValueError("empty dataset")
    t0 = time.time()
    rng = np.random.default_rng(config.rng_seed)
    params = _cloud_to_params(cloud, GEOMETRY_PARAMS)
    state = OptimizerState()
    lrs = _lr_table(config, cloud.scene_radius)
    report = TrainReport()
    current = cloud
    for it in range(config.pretrain_iters):
        view = int(rng.integers(0, len(images)))
        out, ctx = render(current, cameras[view], with_ctx=True)
        l1 = losses.l1_loss(out.color, images[view])
        ds = losses.dssim_loss(out.color, images[view])
        o_reg, s_reg = losses.reg_losses(current)
        d_color = ((1 - config.lambda_dssim) * l1.gradient
                   + config.lambda_dssim * ds.gradient)
        grads = render_backward(current, cameras[view], None,
                                d_color=d_color, ctx=ctx)
        # The regularizers sum over Gaussians; applied per-count so their
        # constant pull cannot drown the per-pixel photometric gradient.
        reg_norm = 1.0 / max(current.count, 1)
        grads.opacities = (grads.opacities
                           + config.lambda_opacity * reg_norm * o_reg.gradient)
        grads.scales = (grads.scales
                        + config.lambda_scale * reg_norm * s_reg.gradient)
        gdict = _reparam_grads(grads, current, GEOMETRY_PARAMS)
        params = adam_step(params, gdict, state, lrs)
        current = _params_to_cloud(current, params)
        report.add(it, {
            "l1": l1.value, "dssim": ds.value,
            "o_reg": config.lambda_opacity * reg_norm * o_reg.value,
            "s_reg": config.lambda_scale * reg_norm * s_reg.value,
        })
    report.wall_seconds = time.time() - t0
    return current, report


def distill_object_features(cloud: GaussianCloud, cameras: list, masks: list,
                            config: PipelineConfig
                            ) -> tuple[GaussianCloud, ClassifierWeights]:
    """Train per-Gaussian object features and the shallow classifier.

    Geometry, color and opacity are left bit-identical; only the feature
    vectors and the linear classifier move, minimizing the per-pixel
    cross entropy against the label maps.
    """
    if len(cameras) != len(masks):
        raise ValueError("mask/view count mismatch")
    c = config.class_count
    if c < 2:
        raise ValueError("need at least background + one object class")
    rng = np.random.default_rng(config.rng_seed + 1)
    d = cloud.feature_dim
    features = cloud.object_features
    if not features.any():
        features = rng.normal(0.0, 0.02, features.shape)
    classifier = ClassifierWeights(rng.normal(0.0, 0.1, (c, d)), np.zeros(c))
    current = cloud.replace_arrays(object_features=features)

    params = {"object_features": current.object_features.copy(),
              "classifier_weight": classifier.weight.copy(),
              "classifier_bias": classifier.bias.copy()}
    state = OptimizerState()
    lrs = _lr_table(config, cloud.scene_radius)
    for it in range(config.distill_iters):
        view = int(rng.integers(0, len(cameras)))
        out, ctx = render(current, cameras[view], classifier, with_ctx=True)
        ce = losses.object_ce_loss(out.logits, masks[view])
        grads = render_backward(current, cameras[view], classifier,
                                d_logits=config.lambda_obj * ce.gradient,
                                ctx=ctx)
        gdict = {"object_features": grads.object_features,
                 "classifier_weight": grads.classifier_weight,
                 "classifier_bias": grads.classifier_bias}
        params = adam_step(params, gdict, state, lrs)
        current = current.replace_arrays(
            object_features=params["object_features"])
        classifier = ClassifierWeights(params["classifier_weight"],
                                       params["classifier_bias"])
    return current, classifier


def classify_gaussians(cloud: GaussianCloud,
                       classifier: ClassifierWeights) -> np.ndarray:
    """Per-Gaussian class id: classifier argmax applied to each feature."""
    return np.argmax(classifier.logits_for(cloud.object_features), axis=1)


def select_object(cloud: GaussianCloud, classifier: ClassifierWeights,
                  object_id: int) -> GaussianCloud:
    if not (1 <= object_id <= classifier.class_count - 1):
        raise ValueError(f"object_id must be in [1, {classifier.class_count - 1}]")
    mask = classify_gaussians(cloud, classifier) == object_id
    if not mask.any():
        warnings.warn(f"object {object_id}: empty selection")
    return cloud.subset(mask)


def masked_l1(pred: np.ndarray, target: np.ndarray,
              mask: np.ndarray) -> losses.LossValue:
    """Mean absolute difference restricted to mask-true pixels."""
    sel = np.asarray(mask, dtype=bool)
    count = max(int(sel.sum()) * pred.shape[2], 1)
    diff = (pred - target) * sel[:, :, None]
    value = float(np.sum(np.abs(diff)) / count)
    grad = np.sign(diff) / count
    return losses.LossValue(value, grad)


def finetune_with_inpainted(object_cloud: GaussianCloud,
                            originals: tuple, inpainted: tuple,
                            config: PipelineConfig
                            ) -> tuple[GaussianCloud, TrainReport]:
    """Fine-tune the object model against the scene images plus the four
    inpainted object-centered views.

    Every iteration applies masked L1 against one original training image
    (restricted to pixels where the object is frontmost); even-numbered
    iterations additionally apply the inpainting loss (weighted L1 plus
    the perceptual proxy, round-robin over the inpainted views). No
    D-SSIM term is used here.
    """
    orig_cams, orig_images, vis_masks = originals
    inp_cams, inp_images = inpainted
    if len(inp_cams) != len(inp_images) or not inp_cams:
        raise ValueError("missing inpainted views")
    t0 = time.time()
    rng = np.random.default_rng(config.rng_seed + 2)
    params = _cloud_to_params(object_cloud, GEOMETRY_PARAMS)
    state = OptimizerState()
    lrs = _lr_table(config, object_cloud.scene_radius)
    report = TrainReport()
    current = object_cloud
    for it in range(config.finetune_iters):
        view = int(rng.integers(0, len(orig_cams)))
        out, ctx = render(current, orig_cams[view], with_ctx=True)
        l1 = masked_l1(out.color, orig_images[view], vis_masks[view])
        grads = render_backward(current, orig_cams[view], None,
                                d_color=l1.gradient, ctx=ctx)
        components = {"l1_original": l1.value,
                      "l1_inpaint": 0.0, "perceptual": 0.0}
        if it % 2 == 0:
            j = (it // 2) % len(inp_cams)
            out_i, ctx_i = render(current, inp_cams[j], with_ctx=True)
            l1_i = losses.l1_loss(out_i.color, inp_images[j])
            perc = losses.perceptual_loss(out_i.color, inp_images[j])
            d_color = (config.lambda_l1_inpaint * l1_i.gradient
                       + config.lambda_perc * perc.gradient)
            g2 = render_backward(current, inp_cams[j], None,
                                 d_color=d_color, ctx=ctx_i)
            for name in ("positions", "rotations", "scales", "opacities",
                         "color_coeffs"):
                setattr(grads, name,
                        getattr(grads, name) + getattr(g2, name))
            components["l1_inpaint"] = config.lambda_l1_inpaint * l1_i.value
            components["perceptual"] = config.lambda_perc * perc.value
        gdict = _reparam_grads(grads, current, GEOMETRY_PARAMS)
        params = adam_step(params, gdict, state, lrs)
        current = _params_to_cloud(current, params)
        report.add(it, components)
    report.wall_seconds = time.time() - t0
    return current, report
