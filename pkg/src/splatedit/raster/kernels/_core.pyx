# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tile-walking pixel kernels for the splat blend.

Per tile, pixels walk the depth-ordered candidate list front to back; the
backward pass re-walks it back to front reconstructing transmittance from
the stored final value. Tiles are independent, so the loops parallelize
over tiles; accumulation here is single-threaded and therefore trivially
deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

NAME = "compiled"


def forward(double[:, ::1] mean2d, double[:, ::1] conic, double[:, ::1] color,
            double[::1] opacity, double[::1] depth, boxes, tile_csr,
            int width, int height, double alpha_clip, double alpha_min,
            double t_min, bint collect):
    cdef int tiles_x = tile_csr[2]
    cdef int tiles_y = tile_csr[3]
    cdef long[::1] offsets = tile_csr[0]
    cdef int[::1] items = tile_csr[1]
    cdef int[::1] bx0 = boxes[0]
    cdef int[::1] bx1 = boxes[1]
    cdef int[::1] by0 = boxes[2]
    cdef int[::1] by1 = boxes[3]
    cdef int tile_size = tile_csr[4]

    blend_np = np.zeros((height, width, 3), dtype=np.float64)
    alpha_np = np.zeros((height, width), dtype=np.float64)
    depth_np = np.zeros((height, width), dtype=np.float64)
    tfin_np = np.ones((height, width), dtype=np.float64)
    last_np = np.full((height, width), -1, dtype=np.int64)
    nblend_np = np.zeros(height * width, dtype=np.int64)
    cdef double[:, :, ::1] blend = blend_np
    cdef double[:, ::1] alpha = alpha_np
    cdef double[:, ::1] depth_sum = depth_np
    cdef double[:, ::1] T_final = tfin_np
    cdef long[:, ::1] last_item = last_np
    cdef long[::1] n_blend = nblend_np

    cdef int tile, ty, tx, px, py, px0, px1, py0, py1, j
    cdef long it, start, stop
    cdef double T, cx, cy, dx, dy, A, B, C, sigma, raw, a, tw

    for tile in range(tiles_x * tiles_y):
        start = offsets[tile]
        stop = offsets[tile + 1]
        if start == stop:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        px0 = tx * tile_size
        px1 = min(px0 + tile_size, width)
        py0 = ty * tile_size
        py1 = min(py0 + tile_size, height)
        for py in range(py0, py1):
            for px in range(px0, px1):
                T = 1.0
                cx = px + 0.5
                cy = py + 0.5
                for it in range(start, stop):
                    if T < t_min:
                        break
                    j = items[it]
                    if px < bx0[j] or px > bx1[j] or py < by0[j] or py > by1[j]:
                        continue
                    dx = cx - mean2d[j, 0]
                    dy = cy - mean2d[j, 1]
                    A = conic[j, 0]
                    B = conic[j, 1]
                    C = conic[j, 2]
                    sigma = 0.5 * (A * dx * dx + C * dy * dy) + B * dx * dy
                    if sigma < 0:
                        continue
                    raw = opacity[j] * exp(-sigma)
                    a = raw if raw < alpha_clip else alpha_clip
                    if a < alpha_min:
                        continue
                    tw = a * T
                    blend[py, px, 0] += tw * color[j, 0]
                    blend[py, px, 1] += tw * color[j, 1]
                    blend[py, px, 2] += tw * color[j, 2]
                    alpha[py, px] += tw
                    depth_sum[py, px] += depth[j] * tw
                    last_item[py, px] = it
                    n_blend[py * width + px] += 1
                    T = T * (1.0 - a)
                T_final[py, px] = T

    contribs = None
    if collect:
        offs_np = np.zeros(height * width + 1, dtype=np.int64)
        np.cumsum(nblend_np, out=offs_np[1:])
        total = int(offs_np[height * width])
        pos_np = np.zeros(total, dtype=np.int32)
        o_np = np.zeros(total, dtype=np.float64)
        T_np = np.zeros(total, dtype=np.float64)
        _fill_contribs(mean2d, conic, opacity, boxes, tile_csr, width, height,
                       alpha_clip, alpha_min, t_min, offs_np, pos_np, o_np, T_np)
        contribs = (offs_np, pos_np, o_np, T_np)

    cache = {
        "mean2d": np.asarray(mean2d), "conic": np.asarray(conic),
        "color": np.asarray(color), "opacity": np.asarray(opacity),
        "boxes": boxes, "tile_csr": tile_csr, "width": width, "height": height,
        "alpha_clip": alpha_clip, "alpha_min": alpha_min, "t_min": t_min,
        "T_final": tfin_np, "last_item": last_np,
    }
    return blend_np, alpha_np, depth_np, tfin_np, contribs, cache


def _fill_contribs(double[:, ::1] mean2d, double[:, ::1] conic,
                   double[::1] opacity, boxes, tile_csr, int width, int height,
                   double alpha_clip, double alpha_min, double t_min,
                   long[::1] offs, int[::1] pos, double[::1] o_out,
                   double[::1] T_out):
    cdef int tiles_x = tile_csr[2]
    cdef int tiles_y = tile_csr[3]
    cdef long[::1] offsets = tile_csr[0]
    cdef int[::1] items = tile_csr[1]
    cdef int[::1] bx0 = boxes[0]
    cdef int[::1] bx1 = boxes[1]
    cdef int[::1] by0 = boxes[2]
    cdef int[::1] by1 = boxes[3]
    cdef int tile_size = tile_csr[4]

    cdef int tile, ty, tx, px, py, px0, px1, py0, py1, j
    cdef long it, start, stop, cur
    cdef double T, cx, cy, dx, dy, A, B, C, sigma, raw, a

    for tile in range(tiles_x * tiles_y):
        start = offsets[tile]
        stop = offsets[tile + 1]
        if start == stop:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        px0 = tx * tile_size
        px1 = min(px0 + tile_size, width)
        py0 = ty * tile_size
        py1 = min(py0 + tile_size, height)
        for py in range(py0, py1):
            for px in range(px0, px1):
                T = 1.0
                cx = px + 0.5
                cy = py + 0.5
                cur = offs[py * width + px]
                for it in range(start, stop):
                    if T < t_min:
                        break
                    j = items[it]
                    if px < bx0[j] or px > bx1[j] or py < by0[j] or py > by1[j]:
                        continue
                    dx = cx - mean2d[j, 0]
                    dy = cy - mean2d[j, 1]
                    A = conic[j, 0]
                    B = conic[j, 1]
                    C = conic[j, 2]
                    sigma = 0.5 * (A * dx * dx + C * dy * dy) + B * dx * dy
                    if sigma < 0:
                        continue
                    raw = opacity[j] * exp(-sigma)
                    a = raw if raw < alpha_clip else alpha_clip
                    if a < alpha_min:
                        continue
                    pos[cur] = j
                    o_out[cur] = a
                    T_out[cur] = T
                    cur += 1
                    T = T * (1.0 - a)


def backward(cache, double[:, :, ::1] d_color_img, background):
    cdef double[:, ::1] mean2d = cache["mean2d"]
    cdef double[:, ::1] conic = cache["conic"]
    cdef double[:, ::1] color = cache["color"]
    cdef double[::1] opacity = cache["opacity"]
    boxes = cache["boxes"]
    tile_csr = cache["tile_csr"]
    cdef int width = cache["width"]
    cdef int height = cache["height"]
    cdef double alpha_clip = cache["alpha_clip"]
    cdef double alpha_min = cache["alpha_min"]
    cdef double[:, ::1] T_final = cache["T_final"]
    cdef long[:, ::1] last_item = cache["last_item"]

    cdef int tiles_x = tile_csr[2]
    cdef int tiles_y = tile_csr[3]
    cdef long[::1] offsets = tile_csr[0]
    cdef int[::1] items = tile_csr[1]
    cdef int[::1] bx0 = boxes[0]
    cdef int[::1] bx1 = boxes[1]
    cdef int[::1] by0 = boxes[2]
    cdef int[::1] by1 = boxes[3]
    cdef int tile_size = tile_csr[4]

    m = mean2d.shape[0]
    dm_np = np.zeros((m, 2), dtype=np.float64)
    dc_np = np.zeros((m, 3), dtype=np.float64)
    dcol_np = np.zeros((m, 3), dtype=np.float64)
    dop_np = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] d_mean2d = dm_np
    cdef double[:, ::1] d_conic = dc_np
    cdef double[:, ::1] d_col = dcol_np
    cdef double[::1] d_op = dop_np

    cdef double bg0 = background[0]
    cdef double bg1 = background[1]
    cdef double bg2 = background[2]

    cdef int tile, ty, tx, px, py, px0, px1, py0, py1, j
    cdef long it, start
    cdef double T, T_at, Tfin, cx, cy, dx, dy, A, B, C, sigma, raw, a, om
    cdef double S0, S1, S2, g0, g1, g2, d_a, d_sigma, tw, bgdot

    for tile in range(tiles_x * tiles_y):
        start = offsets[tile]
        if start == offsets[tile + 1]:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        px0 = tx * tile_size
        px1 = min(px0 + tile_size, width)
        py0 = ty * tile_size
        py1 = min(py0 + tile_size, height)
        for py in range(py0, py1):
            for px in range(px0, px1):
                it = last_item[py, px]
                if it < 0:
                    continue
                cx = px + 0.5
                cy = py + 0.5
                Tfin = T_final[py, px]
                T = Tfin
                S0 = S1 = S2 = 0.0
                g0 = d_color_img[py, px, 0]
                g1 = d_color_img[py, px, 1]
                g2 = d_color_img[py, px, 2]
                bgdot = g0 * bg0 + g1 * bg1 + g2 * bg2
                while it >= start:
                    j = items[it]
                    it -= 1
                    if px < bx0[j] or px > bx1[j] or py < by0[j] or py > by1[j]:
                        continue
                    dx = cx - mean2d[j, 0]
                    dy = cy - mean2d[j, 1]
                    A = conic[j, 0]
                    B = conic[j, 1]
                    C = conic[j, 2]
                    sigma = 0.5 * (A * dx * dx + C * dy * dy) + B * dx * dy
                    if sigma < 0:
                        continue
                    raw = opacity[j] * exp(-sigma)
                    a = raw if raw < alpha_clip else alpha_clip
                    if a < alpha_min:
                        continue
                    om = 1.0 - a
                    if om < 1e-12:
                        om = 1e-12
                    T_at = T / om
                    tw = a * T_at
                    d_col[j, 0] += g0 * tw
                    d_col[j, 1] += g1 * tw
                    d_col[j, 2] += g2 * tw
                    d_a = (g0 * (color[j, 0] * T_at - S0 / om)
                           + g1 * (color[j, 1] * T_at - S1 / om)
                           + g2 * (color[j, 2] * T_at - S2 / om)
                           - bgdot * Tfin / om)
                    if raw < alpha_clip:
                        d_op[j] += exp(-sigma) * d_a
                        d_sigma = -raw * d_a
                        d_mean2d[j, 0] += d_sigma * (-(A * dx + B * dy))
                        d_mean2d[j, 1] += d_sigma * (-(B * dx + C * dy))
                        d_conic[j, 0] += d_sigma * 0.5 * dx * dx
                        d_conic[j, 1] += d_sigma * dx * dy
                        d_conic[j, 2] += d_sigma * 0.5 * dy * dy
                    S0 += color[j, 0] * tw
                    S1 += color[j, 1] * tw
                    S2 += color[j, 2] * tw
                    T = T_at

    return dm_np, dc_np, dcol_np, dop_np
