"""Pure-numpy twin of the numba compositing kernels.

Same splat-major traversal and per-pixel arithmetic as the numba path,
vectorized over each splat's bounding box.
"""

import numpy as np

ALPHA_CLAMP = 0.99
SKIP_ALPHA = 1.0 / 255.0
MIN_TRANSMIT = 1e-4


def composite_forward(means, conics, opacities, colors, depths, feats, bboxes,
                      height, width):
    d = feats.shape[1]
    out_color = np.zeros((height, width, 3))
    out_alpha = np.zeros((height, width))
    out_depthnum = np.zeros((height, width))
    out_feat = np.zeros((height, width, d))
    transmit = np.ones((height, width))
    last_rank = np.full((height, width), -1, dtype=np.int32)

    for s in range(means.shape[0]):
        x0, x1, y0, y1 = bboxes[s]
        ys = slice(y0, y1 + 1)
        xs = slice(x0, x1 + 1)
        dx = np.arange(x0, x1 + 1) - means[s, 0]
        dy = np.arange(y0, y1 + 1) - means[s, 1]
        ca, cb, cc = conics[s]
        power = (-0.5 * (ca * dx[None, :] ** 2 + cc * dy[:, None] ** 2)
                 - cb * dx[None, :] * dy[:, None])
        a = np.minimum(opacities[s] * np.exp(power), ALPHA_CLAMP)
        t_cur = transmit[ys, xs]
        active = (t_cur >= MIN_TRANSMIT) & (a >= SKIP_ALPHA)
        w = np.where(active, a * t_cur, 0.0)
        out_color[ys, xs] += w[:, :, None] * colors[s]
        out_alpha[ys, xs] += w
        out_depthnum[ys, xs] += w * depths[s]
        out_feat[ys, xs] += w[:, :, None] * feats[s]
        transmit[ys, xs] = np.where(active, t_cur * (1.0 - a), t_cur)
        last_rank[ys, xs] = np.where(active, s, last_rank[ys, xs])
    return out_color, out_alpha, out_depthnum, out_feat, transmit, last_rank


def composite_backward(means, conics, opacities, colors, depths, feats, bboxes,
                       transmit_final, last_rank,
                       d_color, d_alpha, d_depthnum, d_feat, d_tfinal):
    m = means.shape[0]
    d = feats.shape[1]
    g_mean = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opac = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_depth = np.zeros(m)
    g_feat = np.zeros((m, d))

    height, width = transmit_final.shape
    t_run = transmit_final.copy()
    s_color = np.zeros((height, width, 3))
    s_alpha = np.zeros((height, width))
    s_depth = np.zeros((height, width))
    s_feat = np.zeros((height, width, d))

    for s in range(m - 1, -1, -1):
        x0, x1, y0, y1 = bboxes[s]
        ys = slice(y0, y1 + 1)
        xs = slice(x0, x1 + 1)
        dx = np.arange(x0, x1 + 1) - means[s, 0]
        dy = np.arange(y0, y1 + 1) - means[s, 1]
        ca, cb, cc = conics[s]
        dxg = dx[None, :] * np.ones_like(dy)[:, None]
        dyg = dy[:, None] * np.ones_like(dx)[None, :]
        power = -0.5 * (ca * dxg ** 2 + cc * dyg ** 2) - cb * dxg * dyg
        raw = opacities[s] * np.exp(power)
        clamped = raw > ALPHA_CLAMP
        a = np.minimum(raw, ALPHA_CLAMP)
        active = (s <= last_rank[ys, xs]) & (a >= SKIP_ALPHA)
        one_minus = np.where(active, 1.0 - a, 1.0)
        t_before = np.where(active, t_run[ys, xs] / one_minus, t_run[ys, xs])
        w = np.where(active, a * t_before, 0.0)

        d_a = np.zeros_like(w)
        for k in range(3):
            up = d_color[ys, xs, k]
            g_color[s, k] += float(np.sum(up * w))
            d_a += up * (colors[s, k] * t_before - s_color[ys, xs, k] / one_minus)
        d_a += d_alpha[ys, xs] * (t_before - s_alpha[ys, xs] / one_minus)
        up_d = d_depthnum[ys, xs]
        g_depth[s] += float(np.sum(up_d * w))
        d_a += up_d * (depths[s] * t_before - s_depth[ys, xs] / one_minus)
        for j in range(d):
            up_f = d_feat[ys, xs, j]
            g_feat[s, j] += float(np.sum(up_f * w))
            d_a += up_f * (feats[s, j] * t_before - s_feat[ys, xs, j] / one_minus)
        d_a -= d_tfinal[ys, xs] * transmit_final[ys, xs] / one_minus
        d_a = np.where(active & ~clamped, d_a, 0.0)

        s_color[ys, xs] += w[:, :, None] * colors[s]
        s_alpha[ys, xs] += w
        s_depth[ys, xs] += w * depths[s]
        s_feat[ys, xs] += w[:, :, None] * feats[s]
        t_run[ys, xs] = t_before

        g_opac[s] += float(np.sum(d_a * np.exp(power)))
        d_power = d_a * a
        g_conic[s, 0] += float(np.sum(d_power * (-0.5 * dxg ** 2)))
        g_conic[s, 1] += float(np.sum(d_power * (-dxg * dyg)))
        g_conic[s, 2] += float(np.sum(d_power * (-0.5 * dyg ** 2)))
        g_mean[s, 0] += float(np.sum(d_power * (ca * dxg + cb * dyg)))
        g_mean[s, 1] += float(np.sum(d_power * (cb * dxg + cc * dyg)))
    return g_mean, g_conic, g_opac, g_color, g_depth, g_feat
