"""Scalar training objectives with gradients w.r.t. their image inputs.

L1, D-SSIM ((1-SSIM)/2 with the classic 11x11 Gaussian window), per-pixel
cross entropy on rendered class logits, a hand-crafted multi-scale
perceptual proxy, and the opacity/scale regularizers. Every loss returns
a LossValue carrying the scalar and the gradient w.r.t. the first
(predicted) input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from gsx.types import GaussianCloud

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")


def l1_loss(pred: np.ndarray, target: np.ndarray) -> LossValue:
    """Mean absolute difference over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    diff = pred - target
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return LossValue(value, grad)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x, y, window):
    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    sxx = convolve2d(x * x, window, mode="valid")
    syy = convolve2d(y * y, window, mode="valid")
    sxy = convolve2d(x * y, window, mode="valid")
    var_x = sxx - mu_x ** 2
    var_y = syy - mu_y ** 2
    cov = sxy - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_x, mu_y, a1, a2, b1, b2)


def ssim_value(pred: np.ndarray, target: np.ndarray, window_size: int = 11,
               sigma: float = 1.5) -> float:
    """Mean SSIM over valid windows and channels, on [0,1]-range images."""
    pred = np.atleast_3d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_3d(np.asarray(target, dtype=np.float64))
    _check_shapes(pred, target)
    if min(pred.shape[0], pred.shape[1]) < window_size:
        raise ValueError("image smaller than SSIM window")
    window = gaussian_window(window_size, sigma)
    vals = [np.mean(_ssim_channel(pred[:, :, c], target[:, :, c], window)[0])
            for c in range(pred.shape[2])]
    return float(np.mean(vals))


def dssim_loss(pred: np.ndarray, target: np.ndarray, window_size: int = 11,
               sigma: float = 1.5) -> LossValue:
    """(1 - SSIM) / 2 with gradient w.r.t. `pred`."""
    pred_in = np.asarray(pred, dtype=np.float64)
    pred3 = np.atleast_3d(pred_in)
    target3 = np.atleast_3d(np.asarray(target, dtype=np.float64))
    _check_shapes(pred3, target3)
    if min(pred3.shape[0], pred3.shape[1]) < window_size:
        raise ValueError("image smaller than SSIM window")
    window = gaussian_window(window_size, sigma)
    channels = pred3.shape[2]
    total = 0.0
    grad = np.zeros_like(pred3)
    for c in range(channels):
        x = pred3[:, :, c]
        y = target3[:, :, c]
        s, (mu_x, mu_y, a1, a2, b1, b2) = _ssim_channel(x, y, window)
        total += np.mean(s)
        # upstream of each SSIM-map entry for loss = (1 - mean(S)) / 2
        u = -0.5 / (s.size * channels)
        inv_b = 1.0 / (b1 * b2)
        d_cov = 2 * a1 * inv_b          # dS/d(sigma_xy) * 2... dS/dA2 * 2
        d_varx = -s / b2                # dS/d(sigma_x^2)
        coef_mu = (2 * mu_y * a2 * inv_b       # through A1
                   - 2 * mu_x * s / b1         # through B1
                   - 2 * mu_x * d_varx         # var_x = Sxx - mu_x^2
                   - mu_y * d_cov)             # cov = Sxy - mu_x mu_y
        grad[:, :, c] = u * (
            convolve2d(coef_mu, window, mode="full")
            + 2 * x * convolve2d(d_varx, window, mode="full")
            + y * convolve2d(d_cov, window, mode="full"))
    value = (1.0 - total / channels) / 2.0
    return LossValue(float(value), grad.reshape(pred_in.shape))


def object_ce_loss(logit_map: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean per-pixel cross entropy between class logits and integer labels."""
    logits = np.asarray(logit_map, dtype=np.float64)
    labels = np.asarray(labels)
    h, w, c = logits.shape
    if labels.shape != (h, w):
        raise ValueError("label map shape does not match logits")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=2, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=2))
    picked = np.take_along_axis(shifted, labels[:, :, None], axis=2)[:, :, 0]
    value = float(np.mean(log_z - picked))
    softmax = np.exp(shifted - log_z[:, :, None])
    onehot = np.zeros_like(softmax)
    np.put_along_axis(onehot, labels[:, :, None], 1.0, axis=2)
    grad = (softmax - onehot) / (h * w)
    return LossValue(value, grad)


def _central_diff(img, axis):
    g = np.zeros_like(img)
    sl_p = [slice(None)] * img.ndim
    sl_m = [slice(None)] * img.ndim
    sl_c = [slice(None)] * img.ndim
    sl_p[axis] = slice(2, None)
    sl_m[axis] = slice(None, -2)
    sl_c[axis] = slice(1, -1)
    g[tuple(sl_c)] = 0.5 * (img[tuple(sl_p)] - img[tuple(sl_m)])
    return g


def _central_diff_adjoint(grad, axis):
    out = np.zeros_like(grad)
    sl_p = [slice(None)] * grad.ndim
    sl_m = [slice(None)] * grad.ndim
    sl_c = [slice(None)] * grad.ndim
    sl_p[axis] = slice(2, None)
    sl_m[axis] = slice(None, -2)
    sl_c[axis] = slice(1, -1)
    out[tuple(sl_p)] += 0.5 * grad[tuple(sl_c)]
    out[tuple(sl_m)] -= 0.5 * grad[tuple(sl_c)]
    return out


def _downsample2(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2]
                   + img[1::2, 0::2] + img[1::2, 1::2])


def _upsample2_adjoint(grad, shape):
    out = np.zeros(shape, dtype=grad.dtype)
    h, w = grad.shape[0] * 2, grad.shape[1] * 2
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy:h:2, dx:w:2] += 0.25 * grad
    return out


def _structural_gradient_distance(pred, target, levels=3):
    """Per-level mean |grad(pred) - grad(target)| plus D-SSIM, averaged."""
    if min(pred.shape[0], pred.shape[1]) < 2 ** (levels - 1) * 4:
        raise ValueError("image too small for the pyramid")
    channels = pred.shape[2]
    total = 0.0
    grad_out = np.zeros_like(pred)
    for c in range(channels):
        xs = [pred[:, :, c]]
        ts = [target[:, :, c]]
        for _ in range(levels - 1):
            xs.append(_downsample2(xs[-1]))
            ts.append(_downsample2(ts[-1]))
        level_grads = []
        for lv in range(levels):
            x, t = xs[lv], ts[lv]
            g_lv = np.zeros_like(x)
            lv_val = 0.0
            for axis in (0, 1):
                dx = _central_diff(x, axis)
                dt = _central_diff(t, axis)
                diff = dx - dt
                lv_val += 0.5 * np.mean(np.abs(diff))
                g_lv += _central_diff_adjoint(0.5 * np.sign(diff) / diff.size,
                                              axis)
            win = min(11, min(x.shape))
            if win % 2 == 0:
                win -= 1
            ds = dssim_loss(x, t, window_size=win)
            lv_val += ds.value
            g_lv += ds.gradient
            total += lv_val / (levels * channels)
            level_grads.append(g_lv / (levels * channels))
        # Pull level gradients back to full resolution.
        acc = level_grads[-1]
        for lv in range(levels - 2, -1, -1):
            acc = level_grads[lv] + _upsample2_adjoint(acc, xs[lv].shape)
        grad_out[:, :, c] = acc
    return total, grad_out


_PERCEPTUAL_REGISTRY = {"structural-gradient": _structural_gradient_distance}


def register_perceptual_metric(name: str, fn) -> None:
    """Register a metric (pred, target) -> (value, grad); it must be >= 0
    and zero iff pred == target."""
    _PERCEPTUAL_REGISTRY[name] = fn


def perceptual_loss(pred: np.ndarray, target: np.ndarray,
                    metric: str = "structural-gradient") -> LossValue:
    pred_in = np.asarray(pred, dtype=np.float64)
    pred3 = np.atleast_3d(pred_in)
    target3 = np.atleast_3d(np.asarray(target, dtype=np.float64))
    _check_shapes(pred3, target3)
    value, grad = _PERCEPTUAL_REGISTRY[metric](pred3, target3)
    return LossValue(float(value), grad.reshape(pred_in.shape))


def reg_losses(cloud: GaussianCloud) -> tuple[LossValue, LossValue]:
    """Opacity and scale regularizers.

    The scale term sums the square roots of the covariance eigenvalues,
    which for Sigma = R diag(S^2) R^T is exactly the sum of the stddevs,
    so the closed form sums the scale entries directly.
    """
    o_reg = LossValue(float(np.sum(np.abs(cloud.opacities))),
                      np.sign(cloud.opacities).astype(np.float64))
    s_reg = LossValue(float(np.sum(cloud.scales)),
                      np.ones_like(cloud.scales))
    return o_reg, s_reg
