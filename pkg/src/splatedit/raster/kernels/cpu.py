"""Pure-numpy pixel kernels: the fallback when the compiled core is absent.

Sweeps Gaussians in blend order, vectorized over each one's coverage box,
maintaining a running transmittance image. Semantics are identical to the
compiled kernels; only the loop structure differs.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def forward(mean2d, conic, color, opacity, depth, boxes, tile_csr,
            width, height, alpha_clip, alpha_min, t_min, collect):
    x0, x1, y0, y1 = boxes
    m = mean2d.shape[0]
    blend = np.zeros((height, width, 3))
    alpha = np.zeros((height, width))
    depth_sum = np.zeros((height, width))
    T = np.ones((height, width))
    c_pix, c_pos, c_o, c_T = [], [], [], []

    for j in range(m):
        if x1[j] < x0[j] or y1[j] < y0[j]:
            continue
        sl = (slice(y0[j], y1[j] + 1), slice(x0[j], x1[j] + 1))
        dx = np.arange(x0[j], x1[j] + 1, dtype=np.float64) + 0.5 - mean2d[j, 0]
        dy = np.arange(y0[j], y1[j] + 1, dtype=np.float64) + 0.5 - mean2d[j, 1]
        dxg = dx[None, :]
        dyg = dy[:, None]
        A, B, C = conic[j]
        sigma = 0.5 * (A * dxg * dxg + C * dyg * dyg) + B * dxg * dyg
        a = np.minimum(opacity[j] * np.exp(-sigma), alpha_clip)
        valid = (sigma >= 0) & (a >= alpha_min) & (T[sl] >= t_min)
        if not valid.any():
            continue
        tw = np.where(valid, a * T[sl], 0.0)
        blend[sl] += tw[:, :, None] * color[j]
        alpha[sl] += tw
        depth_sum[sl] += depth[j] * tw
        if collect:
            yy, xx = np.nonzero(valid)
            c_pix.append(((yy + y0[j]) * width + (xx + x0[j])).astype(np.int64))
            c_pos.append(np.full(yy.size, j, dtype=np.int32))
            c_o.append(a[valid])
            c_T.append(T[sl][valid])
        T[sl] = np.where(valid, T[sl] * (1.0 - a), T[sl])

    contribs = None
    if collect:
        if c_pix:
            pix = np.concatenate(c_pix)
            pos = np.concatenate(c_pos)
            o = np.concatenate(c_o)
            Tv = np.concatenate(c_T)
            srt = np.argsort(pix, kind="stable")  # keeps blend order per pixel
            pix, pos, o, Tv = pix[srt], pos[srt], o[srt], Tv[srt]
        else:
            pix = np.zeros(0, dtype=np.int64)
            pos = np.zeros(0, dtype=np.int32)
            o = Tv = np.zeros(0, dtype=np.float64)
        offsets = np.zeros(height * width + 1, dtype=np.int64)
        np.add.at(offsets, pix + 1, 1)
        np.cumsum(offsets, out=offsets)
        contribs = (offsets, pos, o, Tv)

    cache = {
        "mean2d": mean2d, "conic": conic, "color": color,
        "opacity": opacity, "boxes": boxes, "width": width, "height": height,
        "alpha_clip": alpha_clip, "alpha_min": alpha_min, "t_min": t_min,
        "blend": blend, "T_final": T,
    }
    return blend, alpha, depth_sum, T, contribs, cache


def backward(cache, d_color_img, background):
    """Adjoint of the blend: a second forward sweep with suffix bookkeeping."""
    mean2d = cache["mean2d"]
    conic = cache["conic"]
    color = cache["color"]
    opacity = cache["opacity"]
    x0, x1, y0, y1 = cache["boxes"]
    alpha_clip = cache["alpha_clip"]
    alpha_min = cache["alpha_min"]
    t_min = cache["t_min"]
    blend_total = cache["blend"]
    T_final = cache["T_final"]
    height, width = cache["height"], cache["width"]
    m = mean2d.shape[0]
    bg = np.asarray(background, dtype=np.float64)

    d_mean2d = np.zeros((m, 2))
    d_conic = np.zeros((m, 3))
    d_col = np.zeros((m, 3))
    d_op = np.zeros(m)

    T = np.ones((height, width))
    C_run = np.zeros((height, width, 3))
    bg_dot = np.einsum("hwc,c->hw", d_color_img, bg)
    for j in range(m):
        if x1[j] < x0[j] or y1[j] < y0[j]:
            continue
        sl = (slice(y0[j], y1[j] + 1), slice(x0[j], x1[j] + 1))
        dxg = (np.arange(x0[j], x1[j] + 1, dtype=np.float64) + 0.5 - mean2d[j, 0])[None, :]
        dyg = (np.arange(y0[j], y1[j] + 1, dtype=np.float64) + 0.5 - mean2d[j, 1])[:, None]
        A, B, C = conic[j]
        sigma = 0.5 * (A * dxg * dxg + C * dyg * dyg) + B * dxg * dyg
        G = np.exp(-sigma)
        raw = opacity[j] * G
        a = np.minimum(raw, alpha_clip)
        valid = (sigma >= 0) & (a >= alpha_min) & (T[sl] >= t_min)
        if not valid.any():
            continue
        Tj = T[sl]
        tw = np.where(valid, a * Tj, 0.0)
        gpix = d_color_img[sl]

        d_col[j] += np.einsum("hwc,hw->c", gpix, tw)

        contrib = tw[:, :, None] * color[j]
        S = blend_total[sl] - C_run[sl] - contrib
        om = np.maximum(1.0 - a, 1e-12)
        d_a = (np.einsum("hwc,c->hw", gpix, color[j]) * Tj
               - np.einsum("hwc,hwc->hw", gpix, S) / om
               - bg_dot[sl] * T_final[sl] / om)
        flows = valid & (raw < alpha_clip)
        d_a = np.where(flows, d_a, 0.0)

        d_op[j] += np.sum(G * d_a)
        d_sigma = -opacity[j] * G * d_a
        d_mean2d[j, 0] += np.sum(d_sigma * (-(A * dxg + B * dyg)))
        d_mean2d[j, 1] += np.sum(d_sigma * (-(B * dxg + C * dyg)))
        d_conic[j, 0] += np.sum(d_sigma * 0.5 * dxg * dxg)
        d_conic[j, 1] += np.sum(d_sigma * dxg * dyg)
        d_conic[j, 2] += np.sum(d_sigma * 0.5 * dyg * dyg)

        C_run[sl] += contrib
        T[sl] = np.where(valid, Tj * (1.0 - a), Tj)

    return d_mean2d, d_conic, d_col, d_op
