"""Real spherical-harmonic basis up to degree 3, with derivatives.

Colors are evaluated as ``basis(dir) @ coeffs + 0.5`` per channel, with
`dir` the unit vector from the camera center to the Gaussian. Degree 0
reduces to plain RGB.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values, shape (N, (degree+1)^2); `dirs` must be unit vectors."""
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((n, (degree + 1) ** 2))
    out[:, 0] = C0
    if degree >= 1:
        out[:, 1] = -C1 * y
        out[:, 2] = C1 * z
        out[:, 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = C2[0] * x * y
        out[:, 5] = C2[1] * y * z
        out[:, 6] = C2[2] * (2 * zz - xx - yy)
        out[:, 7] = C2[3] * x * z
        out[:, 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = C3[0] * y * (3 * xx - yy)
        out[:, 10] = C3[1] * x * y * z
        out[:, 11] = C3[2] * y * (4 * zz - xx - yy)
        out[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[:, 13] = C3[4] * x * (4 * zz - xx - yy)
        out[:, 14] = C3[5] * z * (xx - yy)
        out[:, 15] = C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(dir), shape (N, (degree+1)^2, 3), holding dir unnormalized."""
    dirs = np.atleast_2d(dirs)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    h = (degree + 1) ** 2
    jac = np.zeros((n, h, 3))
    if degree >= 1:
        jac[:, 1, 1] = -C1
        jac[:, 2, 2] = C1
        jac[:, 3, 0] = -C1
    if degree >= 2:
        jac[:, 4, 0] = C2[0] * y
        jac[:, 4, 1] = C2[0] * x
        jac[:, 5, 1] = C2[1] * z
        jac[:, 5, 2] = C2[1] * y
        jac[:, 6, 0] = C2[2] * (-2 * x)
        jac[:, 6, 1] = C2[2] * (-2 * y)
        jac[:, 6, 2] = C2[2] * (4 * z)
        jac[:, 7, 0] = C2[3] * z
        jac[:, 7, 2] = C2[3] * x
        jac[:, 8, 0] = C2[4] * (2 * x)
        jac[:, 8, 1] = C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        jac[:, 9, 0] = C3[0] * (6 * x * y)
        jac[:, 9, 1] = C3[0] * (3 * xx - 3 * yy)
        jac[:, 10, 0] = C3[1] * (y * z)
        jac[:, 10, 1] = C3[1] * (x * z)
        jac[:, 10, 2] = C3[1] * (x * y)
        jac[:, 11, 0] = C3[2] * (-2 * x * y)
        jac[:, 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
        jac[:, 11, 2] = C3[2] * (8 * y * z)
        jac[:, 12, 0] = C3[3] * (-6 * x * z)
        jac[:, 12, 1] = C3[3] * (-6 * y * z)
        jac[:, 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
        jac[:, 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
        jac[:, 13, 1] = C3[4] * (-2 * x * y)
        jac[:, 13, 2] = C3[4] * (8 * x * z)
        jac[:, 14, 0] = C3[5] * (2 * x * z)
        jac[:, 14, 1] = C3[5] * (-2 * y * z)
        jac[:, 14, 2] = C3[5] * (xx - yy)
        jac[:, 15, 0] = C3[6] * (3 * xx - 3 * yy)
        jac[:, 15, 1] = C3[6] * (-6 * x * y)
    return jac


def eval_colors(coeffs: np.ndarray, positions: np.ndarray,
                cam_center: np.ndarray, degree: int):
    """Per-Gaussian RGB in [0,1] and intermediates for the backward pass.

    Returns (colors, basis, unit_dirs, inv_norms, clip_mask).
    """
    rel = positions - cam_center[None, :]
    norms = np.linalg.norm(rel, axis=1)
    inv = 1.0 / np.maximum(norms, 1e-12)
    dirs = rel * inv[:, None]
    basis = sh_basis(dirs, degree)
    raw = np.einsum("nh,nch->nc", basis, coeffs) + 0.5
    colors = np.clip(raw, 0.0, 1.0)
    inside = (raw > 0.0) & (raw < 1.0)
    return colors, basis, dirs, inv, inside


def backward_colors(d_colors: np.ndarray, coeffs: np.ndarray, basis: np.ndarray,
                    dirs: np.ndarray, inv: np.ndarray, inside: np.ndarray,
                    degree: int):
    """Gradients of a scalar loss w.r.t. SH coefficients and positions."""
    d_raw = d_colors * inside
    d_coeffs = np.einsum("nc,nh->nch", d_raw, basis)
    if degree == 0:
        return d_coeffs, np.zeros_like(dirs)
    jac = sh_basis_jacobian(dirs, degree)
    d_basis = np.einsum("nc,nch->nh", d_raw, coeffs)
    d_dirs = np.einsum("nh,nhk->nk", d_basis, jac)
    # dir = rel / |rel|: project out the radial component and rescale.
    radial = np.einsum("nk,nk->n", d_dirs, dirs)
    d_rel = (d_dirs - radial[:, None] * dirs) * inv[:, None]
    return d_coeffs, d_rel
