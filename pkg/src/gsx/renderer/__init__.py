"""Differentiable splatting renderer.

Produces per-pixel color, expected depth, accumulated opacity, and
(optionally) object-class logits, with analytic gradients for every
Gaussian parameter and the classifier weights. Compositing follows
front-to-back alpha blending of depth-sorted splats over an opaque
background; pixels whose accumulated opacity falls below `tau_cov`
carry a +inf depth sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsx import sh
from gsx._backend import use_numba
from gsx.renderer._project import (BLUR_FLOOR, SKIP_ALPHA, Z_NEAR,
                                   backward_projection, project_gaussians)
from gsx.types import Camera, ClassifierWeights, GaussianCloud

TAU_COV = 0.5
WHITE = np.ones(3)


def _kernels():
    if use_numba():
        from gsx.renderer import _composite_numba as mod
    else:
        from gsx.renderer import _composite_numpy as mod
    return mod


@dataclass
class Splat2D:
    """A Gaussian projected into one view."""

    mean2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray    # (2, 2) pixels^2, includes the blur floor
    depth: float         # camera-frame z
    color: np.ndarray    # (3,) view-dependent RGB in [0, 1]
    opacity: float
    source_index: int


@dataclass
class RenderOutput:
    color: np.ndarray            # (H, W, 3) in [0, 1]
    depth: np.ndarray            # (H, W), +inf where alpha < tau_cov
    alpha: np.ndarray            # (H, W) in [0, 1]
    logits: np.ndarray | None    # (H, W, C) when a classifier was supplied
    feature: np.ndarray | None   # (H, W, d) composited feature map


@dataclass
class ParamGradients:
    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    color_coeffs: np.ndarray
    object_features: np.ndarray
    classifier_weight: np.ndarray | None = None
    classifier_bias: np.ndarray | None = None


def project_gaussian(g, cam: Camera, z_near: float = Z_NEAR,
                     blur: float = BLUR_FLOOR) -> Splat2D | None:
    """Project a single Gaussian; None when culled (behind the near plane
    or 3-sigma footprint off screen)."""
    ctx = project_gaussians(g.position[None], g.rotation[None], g.scale[None],
                            np.array([1.0]), cam, z_near=z_near, blur=blur,
                            opacity_cull=False)
    if ctx["indices"].shape[0] == 0:
        return None
    colors, _, _, _, _ = sh.eval_colors(
        g.color_coeffs[None], g.position[None], cam.center,
        int(round(np.sqrt(g.color_coeffs.shape[1]))) - 1)
    return Splat2D(mean2d=ctx["mean2d"][0], cov2d=ctx["cov"][0],
                   depth=float(ctx["depths"][0]), color=colors[0],
                   opacity=float(g.opacity), source_index=0)


def _prepare(cloud: GaussianCloud, cam: Camera, with_features: bool,
             z_near: float, blur: float):
    ctx = project_gaussians(cloud.positions, cloud.rotations, cloud.scales,
                            cloud.opacities, cam, z_near=z_near, blur=blur)
    kept = ctx["indices"]
    colors, basis, dirs, inv, inside = sh.eval_colors(
        cloud.color_coeffs[kept], cloud.positions[kept], cam.center,
        cloud.sh_degree)
    ctx.update(colors=colors, sh_basis=basis, sh_dirs=dirs, sh_inv=inv,
               sh_inside=inside)
    # Front-to-back, ties broken by original index for determinism.
    order = np.lexsort((kept, ctx["depths"]))
    ctx["order"] = order
    feats = (cloud.object_features[kept] if with_features
             else np.zeros((kept.shape[0], 0)))
    ctx["splats"] = tuple(np.ascontiguousarray(arr[order]) for arr in (
        ctx["mean2d"], ctx["conic"], cloud.opacities[kept], colors,
        ctx["depths"], feats, ctx["bboxes"]))
    return ctx


def render(cloud: GaussianCloud, cam: Camera,
           classifier: ClassifierWeights | None = None,
           background: np.ndarray = WHITE, tau_cov: float = TAU_COV,
           z_near: float = Z_NEAR, blur: float = BLUR_FLOOR,
           with_ctx: bool = False):
    """Render one view. Returns RenderOutput (and the forward ctx when
    `with_ctx` is set, for reuse by `render_backward`)."""
    background = np.asarray(background, dtype=np.float64)
    ctx = _prepare(cloud, cam, classifier is not None, z_near, blur)
    mod = _kernels()
    means, conics, opac, colors, depths, feats, bboxes = ctx["splats"]
    out_color, out_alpha, out_depthnum, out_feat, transmit, last_rank = \
        mod.composite_forward(means, conics, opac, colors, depths, feats,
                              bboxes, cam.height, cam.width)
    out_color = out_color + transmit[:, :, None] * background
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(out_alpha >= tau_cov,
                         out_depthnum / np.where(out_alpha > 0, out_alpha, 1.0),
                         np.inf)
    logits = classifier.logits_for(out_feat) if classifier is not None else None
    output = RenderOutput(color=out_color, depth=depth, alpha=out_alpha,
                          logits=logits,
                          feature=out_feat if classifier is not None else None)
    if with_ctx:
        ctx.update(transmit=transmit, last_rank=last_rank,
                   out_alpha=out_alpha, out_depthnum=out_depthnum,
                   out_feat=out_feat, background=background, tau_cov=tau_cov)
        return output, ctx
    return output


def render_backward(cloud: GaussianCloud, cam: Camera,
                    classifier: ClassifierWeights | None,
                    d_color=None, d_depth=None, d_alpha=None, d_logits=None,
                    background: np.ndarray = WHITE, tau_cov: float = TAU_COV,
                    z_near: float = Z_NEAR, blur: float = BLUR_FLOOR,
                    ctx=None) -> ParamGradients:
    """Gradients of a scalar loss w.r.t. all Gaussian parameters.

    Upstream gradients may be given for any subset of the render outputs;
    missing ones are treated as zero. `d_depth` must be zero wherever the
    depth map carries the +inf sentinel.
    """
    for name, arr in (("d_color", d_color), ("d_depth", d_depth),
                      ("d_alpha", d_alpha), ("d_logits", d_logits)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite upstream gradient {name}")
    if ctx is None:
        _, ctx = render(cloud, cam, classifier, background=background,
                        tau_cov=tau_cov, z_near=z_near, blur=blur,
                        with_ctx=True)
    h, w = cam.height, cam.width
    background = ctx["background"]
    d_color = np.zeros((h, w, 3)) if d_color is None else np.asarray(d_color, dtype=np.float64)
    d_alpha = np.zeros((h, w)) if d_alpha is None else np.asarray(d_alpha, dtype=np.float64).copy()

    out_alpha = ctx["out_alpha"]
    covered = out_alpha >= ctx["tau_cov"]
    d_depthnum = np.zeros((h, w))
    if d_depth is not None:
        safe_alpha = np.where(covered, out_alpha, 1.0)
        d_depthnum = np.where(covered, d_depth / safe_alpha, 0.0)
        d_alpha = d_alpha + np.where(
            covered, -d_depth * ctx["out_depthnum"] / safe_alpha ** 2, 0.0)

    n_feat = ctx["splats"][5].shape[1]
    d_feat = np.zeros((h, w, n_feat))
    g_cls_w = g_cls_b = None
    if d_logits is not None and classifier is not None:
        d_feat = d_logits @ classifier.weight
        g_cls_w = np.einsum("hwc,hwd->cd", d_logits, ctx["out_feat"])
        g_cls_b = d_logits.sum(axis=(0, 1))
    d_tfinal = d_color @ background

    mod = _kernels()
    means, conics, opac, colors, depths, feats, bboxes = ctx["splats"]
    g_mean_s, g_conic_s, g_opac_s, g_color_s, g_depth_s, g_feat_s = \
        mod.composite_backward(means, conics, opac, colors, depths, feats,
                               bboxes, ctx["transmit"], ctx["last_rank"],
                               d_color, d_alpha, d_depthnum, d_feat, d_tfinal)

    # Undo the depth sort back to projection (kept-splat) order.
    order = ctx["order"]
    m = order.shape[0]
    g_mean = np.zeros((m, 2)); g_mean[order] = g_mean_s
    g_conic = np.zeros((m, 3)); g_conic[order] = g_conic_s
    g_opac = np.zeros(m); g_opac[order] = g_opac_s
    g_col = np.zeros((m, 3)); g_col[order] = g_color_s
    g_depth = np.zeros(m); g_depth[order] = g_depth_s
    g_feat = np.zeros((m, n_feat)); g_feat[order] = g_feat_s

    kept = ctx["indices"]
    g_pos_k, g_quat_k, g_scale_k = backward_projection(
        ctx, cloud.rotations, cloud.scales, g_mean, g_conic, g_depth, cam)
    g_coeffs_k, g_rel_k = sh.backward_colors(
        g_col, cloud.color_coeffs[kept], ctx["sh_basis"], ctx["sh_dirs"],
        ctx["sh_inv"], ctx["sh_inside"], cloud.sh_degree)
    g_pos_k = g_pos_k + g_rel_k

    n = cloud.count
    grads = ParamGradients(
        positions=np.zeros((n, 3)), rotations=np.zeros((n, 4)),
        scales=np.zeros((n, 3)), opacities=np.zeros(n),
        color_coeffs=np.zeros_like(cloud.color_coeffs),
        object_features=np.zeros_like(cloud.object_features),
        classifier_weight=g_cls_w, classifier_bias=g_cls_b)
    np.add.at(grads.positions, kept, g_pos_k)
    np.add.at(grads.rotations, kept, g_quat_k)
    np.add.at(grads.scales, kept, g_scale_k)
    np.add.at(grads.opacities, kept, g_opac)
    np.add.at(grads.color_coeffs, kept, g_coeffs_k)
    if n_feat:
        np.add.at(grads.object_features, kept, g_feat)
    return grads


def render_reference(cloud: GaussianCloud, cam: Camera,
                     classifier: ClassifierWeights | None = None,
                     background: np.ndarray = WHITE, tau_cov: float = TAU_COV,
                     z_near: float = Z_NEAR,
                     blur: float = BLUR_FLOOR) -> RenderOutput:
    """Naive per-pixel reference renderer: every pixel composites every
    projected splat with no bounding-box culling. Test oracle for the
    accelerated path."""
    background = np.asarray(background, dtype=np.float64)
    ctx = _prepare(cloud, cam, classifier is not None, z_near, blur)
    means, conics, opac, colors, depths, feats, _ = ctx["splats"]
    h, w = cam.height, cam.width
    d = feats.shape[1]
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    px = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    n_px = px.shape[0]
    m = means.shape[0]
    if m:
        delta = px[:, None, :] - means[None, :, :]      # (P, M, 2)
        power = (-0.5 * (conics[None, :, 0] * delta[:, :, 0] ** 2
                         + conics[None, :, 2] * delta[:, :, 1] ** 2)
                 - conics[None, :, 1] * delta[:, :, 0] * delta[:, :, 1])
        a = np.minimum(opac[None, :] * np.exp(power), 0.99)
        a = np.where(a < 1.0 / 255.0, 0.0, a)
        after = np.cumprod(1.0 - a, axis=1)             # T after splat i
        t_before = np.concatenate([np.ones((n_px, 1)), after[:, :-1]], axis=1)
        contributing = (t_before >= 1e-4) & (a > 0)
        wgt = np.where(contributing, a * t_before, 0.0)  # (P, M)
        # Final transmittance: value after the last contributing splat.
        any_c = contributing.any(axis=1)
        last = m - 1 - np.argmax(contributing[:, ::-1], axis=1)
        t_final = np.where(any_c, after[np.arange(n_px), last], 1.0)
    else:
        wgt = np.zeros((n_px, 0))
        t_final = np.ones(n_px)
    color = wgt @ colors + t_final[:, None] * background
    alpha = wgt.sum(axis=1)
    depthnum = wgt @ depths
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(alpha >= tau_cov,
                         depthnum / np.where(alpha > 0, alpha, 1.0), np.inf)
    feat = wgt @ feats if d else None
    logits = None
    if classifier is not None and feat is not None:
        logits = classifier.logits_for(feat).reshape(h, w, -1)
    return RenderOutput(color=color.reshape(h, w, 3),
                        depth=depth.reshape(h, w),
                        alpha=alpha.reshape(h, w), logits=logits,
                        feature=feat.reshape(h, w, d) if d else None)
