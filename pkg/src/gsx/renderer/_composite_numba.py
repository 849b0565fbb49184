"""Numba kernels for front-to-back alpha compositing.

Splat arrays arrive pre-sorted front-to-back. The forward kernel walks
splats in order and updates every pixel inside the splat's certified
bounding box; the backward kernel walks them in reverse, reconstructing
per-pixel transmittance from the stored final value.
"""

import numpy as np
from numba import njit

ALPHA_CLAMP = 0.99
SKIP_ALPHA = 1.0 / 255.0
MIN_TRANSMIT = 1e-4


@njit(cache=True)
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
        mx = means[s, 0]
        my = means[s, 1]
        ca = conics[s, 0]
        cb = conics[s, 1]
        cc = conics[s, 2]
        op = opacities[s]
        z = depths[s]
        x0, x1, y0, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                t_cur = transmit[y, x]
                if t_cur < MIN_TRANSMIT:
                    continue
                dx = x - mx
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                a = op * np.exp(power)
                if a > ALPHA_CLAMP:
                    a = ALPHA_CLAMP
                if a < SKIP_ALPHA:
                    continue
                w = a * t_cur
                for k in range(3):
                    out_color[y, x, k] += w * colors[s, k]
                out_alpha[y, x] += w
                out_depthnum[y, x] += w * z
                for j in range(d):
                    out_feat[y, x, j] += w * feats[s, j]
                transmit[y, x] = t_cur * (1.0 - a)
                last_rank[y, x] = s
    return out_color, out_alpha, out_depthnum, out_feat, transmit, last_rank


@njit(cache=True)
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
        mx = means[s, 0]
        my = means[s, 1]
        ca = conics[s, 0]
        cb = conics[s, 1]
        cc = conics[s, 2]
        op = opacities[s]
        z = depths[s]
        x0, x1, y0, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                if s > last_rank[y, x]:
                    continue
                dx = x - mx
                power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                a = op * np.exp(power)
                clamped = a > ALPHA_CLAMP
                if clamped:
                    a = ALPHA_CLAMP
                if a < SKIP_ALPHA:
                    continue
                one_minus = 1.0 - a
                t_before = t_run[y, x] / one_minus
                w = a * t_before

                d_a = 0.0
                for k in range(3):
                    up = d_color[y, x, k]
                    g_color[s, k] += up * w
                    d_a += up * (colors[s, k] * t_before
                                 - s_color[y, x, k] / one_minus)
                up_a = d_alpha[y, x]
                d_a += up_a * (t_before - s_alpha[y, x] / one_minus)
                up_d = d_depthnum[y, x]
                g_depth[s] += up_d * w
                d_a += up_d * (z * t_before - s_depth[y, x] / one_minus)
                for j in range(d):
                    up_f = d_feat[y, x, j]
                    g_feat[s, j] += up_f * w
                    d_a += up_f * (feats[s, j] * t_before
                                   - s_feat[y, x, j] / one_minus)
                d_a -= d_tfinal[y, x] * transmit_final[y, x] / one_minus

                # Update suffix accumulators and transmittance.
                for k in range(3):
                    s_color[y, x, k] += colors[s, k] * w
                s_alpha[y, x] += w
                s_depth[y, x] += z * w
                for j in range(d):
                    s_feat[y, x, j] += feats[s, j] * w
                t_run[y, x] = t_before

                if clamped:
                    continue
                g_opac[s] += d_a * np.exp(power)
                d_power = d_a * a
                g_conic[s, 0] += d_power * (-0.5 * dx * dx)
                g_conic[s, 1] += d_power * (-dx * dy)
                g_conic[s, 2] += d_power * (-0.5 * dy * dy)
                g_mean[s, 0] += d_power * (ca * dx + cb * dy)
                g_mean[s, 1] += d_power * (cb * dx + cc * dy)
    return g_mean, g_conic, g_opac, g_color, g_depth, g_feat
