"""Per-tile compositing kernels.

``cutoff[g]`` is a log-space bound slightly below ``log(alpha_floor / opacity)``:
pairs under it are certainly below the opacity floor and skip the ``exp``.

Each call handles a contiguous range of tiles and writes only to pixels of
those tiles and to the pair slots of those tiles, so any partition of the
tile range over workers yields bit-identical results.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _gather(s, e, pair_gauss, mean2d, conic, opacity, cutoff):
    n = e - s
    loc = np.empty((n, 7))
    for k in range(n):
        g = pair_gauss[s + k]
        loc[k, 0] = mean2d[g, 0]
        loc[k, 1] = mean2d[g, 1]
        loc[k, 2] = conic[g, 0]
        loc[k, 3] = conic[g, 1]
        loc[k, 4] = conic[g, 2]
        loc[k, 5] = opacity[g]
        loc[k, 6] = cutoff[g]
    return loc


@njit(cache=True, nogil=True)
def forward_tiles(t0, t1, tile_start, tile_end, pair_gauss, mean2d, conic, color, opacity, cutoff,
                  width, height, tile, tiles_x, alpha_cap, alpha_floor, t_min,
                  image, trans, n_used):
    for t in range(t0, t1):
        s, e = tile_start[t], tile_end[t]
        loc = _gather(s, e, pair_gauss, mean2d, conic, opacity, cutoff)
        ty, tx = t // tiles_x, t % tiles_x
        y0, x0 = ty * tile, tx * tile
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                last = 0
                for k in range(e - s):
                    dx = px - loc[k, 0]
                    dy = py - loc[k, 1]
                    power = -0.5 * (loc[k, 2] * dx * dx + loc[k, 4] * dy * dy) - loc[k, 3] * dx * dy
                    if power > 0.0 or power < loc[k, 6]:
                        continue
                    a = loc[k, 5] * math.exp(power)
                    if a > alpha_cap:
                        a = alpha_cap
                    if a < alpha_floor:
                        continue
                    g = pair_gauss[s + k]
                    w = T * a
                    c0 += w * color[g, 0]
                    c1 += w * color[g, 1]
                    c2 += w * color[g, 2]
                    T = T * (1.0 - a)
                    last = k + 1
                    if T < t_min:
                        break
                image[py, px, 0] = c0
                image[py, px, 1] = c1
                image[py, px, 2] = c2
                trans[py, px] = T
                n_used[py, px] = last


@njit(cache=True, nogil=True)
def backward_tiles(t0, t1, tile_start, tile_end, pair_gauss, mean2d, conic, color, opacity, cutoff,
                   width, height, tile, tiles_x, alpha_cap, alpha_floor,
                   trans, n_used, grad_image, grad_alpha, pair_grad):
    """Accumulate per-pair gradients.

    ``pair_grad`` columns: d mean2d (2), d conic a/b/c (3), d color (3), d opacity (1).
    """
    for t in range(t0, t1):
        s, e = tile_start[t], tile_end[t]
        n = e - s
        buf_T = np.empty(n)
        buf_a = np.empty(n)
        buf_G = np.empty(n)
        buf_on = np.zeros(n, dtype=np.bool_)
        buf_cap = np.zeros(n, dtype=np.bool_)
        loc = _gather(s, e, pair_gauss, mean2d, conic, opacity, cutoff)
        ty, tx = t // tiles_x, t % tiles_x
        y0, x0 = ty * tile, tx * tile
        for py in range(y0, min(y0 + tile, height)):
            for px in range(x0, min(x0 + tile, width)):
                last = n_used[py, px]
                if last == 0:
                    continue
                gr = grad_image[py, px, 0]
                gg = grad_image[py, px, 1]
                gb = grad_image[py, px, 2]
                ga_out = grad_alpha[py, px]
                T = 1.0
                for k in range(last):
                    buf_on[k] = False
                    dx = px - loc[k, 0]
                    dy = py - loc[k, 1]
                    power = -0.5 * (loc[k, 2] * dx * dx + loc[k, 4] * dy * dy) - loc[k, 3] * dx * dy
                    if power > 0.0 or power < loc[k, 6]:
                        continue
                    G = math.exp(power)
                    a = loc[k, 5] * G
                    capped = False
                    if a > alpha_cap:
                        a = alpha_cap
                        capped = True
                    if a < alpha_floor:
                        continue
                    buf_on[k] = True
                    buf_cap[k] = capped
                    buf_T[k] = T
                    buf_a[k] = a
                    buf_G[k] = G
                    T = T * (1.0 - a)
                T_final = trans[py, px]
                S0 = 0.0
                S1 = 0.0
                S2 = 0.0
                for k in range(last - 1, -1, -1):
                    if not buf_on[k]:
                        continue
                    g = pair_gauss[s + k]
                    Ti = buf_T[k]
                    a = buf_a[k]
                    w = Ti * a
                    q = s + k
                    pair_grad[q, 5] += w * gr
                    pair_grad[q, 6] += w * gg
                    pair_grad[q, 7] += w * gb
                    inv = 1.0 / (1.0 - a)
                    d_a = (gr * (Ti * color[g, 0] - S0 * inv)
                           + gg * (Ti * color[g, 1] - S1 * inv)
                           + gb * (Ti * color[g, 2] - S2 * inv)
                           + ga_out * T_final * inv)
                    S0 += w * color[g, 0]
                    S1 += w * color[g, 1]
                    S2 += w * color[g, 2]
                    if buf_cap[k]:
                        continue
                    pair_grad[q, 8] += d_a * buf_G[k]
                    d_pow = d_a * a
                    dx = px - loc[k, 0]
                    dy = py - loc[k, 1]
                    pair_grad[q, 0] += d_pow * (loc[k, 2] * dx + loc[k, 3] * dy)
                    pair_grad[q, 1] += d_pow * (loc[k, 3] * dx + loc[k, 4] * dy)
                    pair_grad[q, 2] += d_pow * (-0.5 * dx * dx)
                    pair_grad[q, 3] += d_pow * (-dx * dy)
                    pair_grad[q, 4] += d_pow * (-0.5 * dy * dy)


@njit(cache=True)
def reduce_pairs(pair_gauss, pair_grad, n_gauss):
    out = np.zeros((n_gauss, pair_grad.shape[1]))
    for q in range(len(pair_gauss)):
        g = pair_gauss[q]
        for c in range(pair_grad.shape[1]):
            out[g, c] += pair_grad[q, c]
    return out


@njit(cache=True)
def zbuffer_triangles(pix, depth, faces, attr, width, height, zbuf, out, face_id):
    """Rasterize triangles with a depth test and perspective-correct attributes.

    ``pix`` holds (u, v) pixel coordinates and ``depth`` camera z per vertex;
    ``attr`` is a per-vertex attribute array interpolated into ``out``.
    """
    nattr = attr.shape[1]
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        z0, z1, z2 = depth[i0], depth[i1], depth[i2]
        if z0 <= 1e-3 or z1 <= 1e-3 or z2 <= 1e-3:
            continue
        x0, y0 = pix[i0, 0], pix[i0, 1]
        x1, y1 = pix[i1, 0], pix[i1, 1]
        x2, y2 = pix[i2, 0], pix[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(math.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(math.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(math.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(math.floor(max(y0, y1, y2))), height - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                iz = w0 / z0 + w1 / z1 + w2 / z2
                z = 1.0 / iz
                if z >= zbuf[py, px]:
                    continue
                zbuf[py, px] = z
                face_id[py, px] = f
                for c in range(nattr):
                    out[py, px, c] = z * (w0 * attr[i0, c] / z0 + w1 * attr[i1, c] / z1 + w2 * attr[i2, c] / z2)
