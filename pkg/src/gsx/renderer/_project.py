"""EWA-style projection of 3D Gaussians to screen-space splats.

A Gaussian with rotation R and per-axis stddev S has world covariance
Sigma = R diag(S^2) R^T. Its screen footprint is M Sigma M^T + blur*I
with M = J W, where W is the camera rotation and J the perspective
Jacobian at the Gaussian center. Pixel (x, y) samples at integer
coordinates.
"""

from __future__ import annotations

import numpy as np

Z_NEAR = 0.01
BLUR_FLOOR = 0.3
SKIP_ALPHA = 1.0 / 255.0


def quat_to_rotmats(quats: np.ndarray) -> np.ndarray:
    """Unit-normalized quaternion (w, x, y, z) to rotation matrices."""
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def rotmat_grad_to_quat(quats: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Chain d(loss)/d(R) back to the raw (unnormalized) quaternion."""
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    q = quats / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dR_dw = mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dR_dx = mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dR_dy = mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dR_dz = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    d_qn = np.stack([np.einsum("nij,nij->n", d_rot, dd)
                     for dd in (dR_dw, dR_dx, dR_dy, dR_dz)], axis=1)
    # q_n = q / |q|; pull the gradient through the normalization.
    radial = np.einsum("nk,nk->n", d_qn, q)
    return (d_qn - radial[:, None] * q) / norms


def project_gaussians(positions, rotations, scales, opacities, cam,
                      z_near=Z_NEAR, blur=BLUR_FLOOR, opacity_cull=True):
    """Project all Gaussians; returns a ctx dict for kept splats.

    Culls Gaussians behind the near plane, those whose 3-sigma screen
    footprint misses the image, and (optionally) those too transparent
    to ever pass the 1/255 compositing skip.
    """
    n = positions.shape[0]
    w2c = cam.rotation
    t_cam = positions @ w2c.T + cam.translation
    in_front = t_cam[:, 2] > z_near
    if opacity_cull:
        in_front &= opacities > SKIP_ALPHA
    idx = np.nonzero(in_front)[0]
    t = t_cam[idx]
    tz = t[:, 2]

    rot3 = quat_to_rotmats(rotations[idx])
    s2 = scales[idx] ** 2
    sigma3 = np.einsum("nij,nj,nkj->nik", rot3, s2, rot3)

    jac = np.zeros((idx.shape[0], 2, 3))
    jac[:, 0, 0] = cam.fx / tz
    jac[:, 0, 2] = -cam.fx * t[:, 0] / tz ** 2
    jac[:, 1, 1] = cam.fy / tz
    jac[:, 1, 2] = -cam.fy * t[:, 1] / tz ** 2
    m_proj = jac @ w2c
    cov = np.einsum("nij,njk,nlk->nil", m_proj, sigma3, m_proj)
    cov[:, 0, 0] += blur
    cov[:, 1, 1] += blur

    mean2d = np.stack([cam.fx * t[:, 0] / tz + cam.cx,
                       cam.fy * t[:, 1] / tz + cam.cy], axis=1)

    va, vb, vc = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = va * vc - vb ** 2
    conic = np.stack([vc / det, -vb / det, va / det], axis=1)
    lam_max = 0.5 * (va + vc) + np.sqrt(0.25 * (va - vc) ** 2 + vb ** 2)

    r3 = 3.0 * np.sqrt(lam_max)
    on_screen = ((mean2d[:, 0] + r3 >= 0) & (mean2d[:, 0] - r3 <= cam.width - 1)
                 & (mean2d[:, 1] + r3 >= 0) & (mean2d[:, 1] - r3 <= cam.height - 1))

    if opacity_cull:
        r_cut = np.sqrt(2.0 * np.maximum(np.log(255.0 * opacities[idx]), 0.0)
                        * lam_max)
    else:
        r_cut = r3
    x0 = np.maximum(np.ceil(mean2d[:, 0] - r_cut), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + r_cut), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - r_cut), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + r_cut), cam.height - 1).astype(np.int64)
    nonempty = (x0 <= x1) & (y0 <= y1)

    keep = on_screen & nonempty
    sub = np.nonzero(keep)[0]
    return {
        "indices": idx[sub],          # into the original cloud
        "t_cam": t[sub],
        "rot3": rot3[sub],
        "sigma3": sigma3[sub],
        "jac": jac[sub],
        "m_proj": m_proj[sub],
        "cov": cov[sub],
        "conic": conic[sub],
        "mean2d": mean2d[sub],
        "depths": tz[sub],
        "bboxes": np.stack([x0, x1, y0, y1], axis=1)[sub],
        "w2c": w2c,
    }


def backward_projection(ctx, quats, scales, g_mean2d, g_conic, g_depth, cam):
    """Chain splat-space gradients back to position/rotation/scale.

    Returns per-kept-splat gradients (d_position, d_quat, d_scale) in the
    ctx's splat order.
    """
    t = ctx["t_cam"]
    tz = t[:, 2]
    w2c = ctx["w2c"]
    conic = ctx["conic"]
    sigma3 = ctx["sigma3"]
    m_proj = ctx["m_proj"]
    rot3 = ctx["rot3"]
    kept = ctx["indices"]

    # conic = cov^-1 (packed a, b, c); d_cov = -conic_full G conic_full.
    lam = np.zeros((conic.shape[0], 2, 2))
    lam[:, 0, 0] = conic[:, 0]
    lam[:, 0, 1] = lam[:, 1, 0] = conic[:, 1]
    lam[:, 1, 1] = conic[:, 2]
    g_lam = np.zeros_like(lam)
    g_lam[:, 0, 0] = g_conic[:, 0]
    g_lam[:, 0, 1] = g_lam[:, 1, 0] = 0.5 * g_conic[:, 1]
    g_lam[:, 1, 1] = g_conic[:, 2]
    g_cov = -np.einsum("nij,njk,nkl->nil", lam, g_lam, lam)

    # cov = M Sigma M^T + blur I.
    g_sigma3 = np.einsum("nji,njk,nkl->nil", m_proj, g_cov, m_proj)
    g_m = 2.0 * np.einsum("nij,njk,nkl->nil", g_cov, m_proj, sigma3)
    g_jac = np.einsum("nij,kj->nik", g_m, w2c)

    # Sigma = R diag(s^2) R^T.
    s2 = scales[kept] ** 2
    g_rot3 = 2.0 * np.einsum("nij,njk,nk->nik", g_sigma3, rot3, s2)
    rtgr = np.einsum("nji,njk,nkl->nil", rot3, g_sigma3, rot3)
    g_scale = 2.0 * scales[kept] * np.einsum("nii->ni", rtgr)
    g_quat = rotmat_grad_to_quat(quats[kept], g_rot3)

    # Camera-frame point gradient from mean2d, depth, and the Jacobian.
    g_t = np.zeros_like(t)
    g_t[:, 0] = g_mean2d[:, 0] * cam.fx / tz - g_jac[:, 0, 2] * cam.fx / tz ** 2
    g_t[:, 1] = g_mean2d[:, 1] * cam.fy / tz - g_jac[:, 1, 2] * cam.fy / tz ** 2
    g_t[:, 2] = (g_depth
                 - g_mean2d[:, 0] * cam.fx * t[:, 0] / tz ** 2
                 - g_mean2d[:, 1] * cam.fy * t[:, 1] / tz ** 2
                 - g_jac[:, 0, 0] * cam.fx / tz ** 2
                 - g_jac[:, 1, 1] * cam.fy / tz ** 2
                 + g_jac[:, 0, 2] * 2.0 * cam.fx * t[:, 0] / tz ** 3
                 + g_jac[:, 1, 2] * 2.0 * cam.fy * t[:, 1] / tz ** 3)
    g_pos = g_t @ w2c
    return g_pos, g_quat, g_scale
