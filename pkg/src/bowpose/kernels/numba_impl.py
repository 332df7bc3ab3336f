"""Numba-compiled hot loops. Same contracts as kernels.numpy_impl."""

import numpy as np
from numba import njit


@njit(cache=True)
def rasterize(verts_cam, tris, colors, fx, fy, cx, cy, width, height):
    rgb = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.zeros((height, width), dtype=np.float64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)

    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        v0 = verts_cam[i0]
        v1 = verts_cam[i1]
        v2 = verts_cam[i2]
        if v0[2] <= 0.0 or v1[2] <= 0.0 or v2[2] <= 0.0:
            continue
        p0x = fx * v0[0] / v0[2] + cx
        p0y = fy * v0[1] / v0[2] + cy
        p1x = fx * v1[0] / v1[2] + cx
        p1y = fy * v1[1] / v1[2] + cy
        p2x = fx * v2[0] / v2[2] + cx
        p2y = fy * v2[1] / v2[2] + cy
        xmin = max(int(np.floor(min(p0x, min(p1x, p2x)))), 0)
        xmax = min(int(np.ceil(max(p0x, max(p1x, p2x)))), width - 1)
        ymin = max(int(np.floor(min(p0y, min(p1y, p2y)))), 0)
        ymax = min(int(np.ceil(max(p0y, max(p1y, p2y)))), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        area = (p1x - p0x) * (p2y - p0y) - (p1y - p0y) * (p2x - p0x)
        if area == 0.0:
            continue

        nx = (v1[1] - v0[1]) * (v2[2] - v0[2]) - (v1[2] - v0[2]) * (v2[1] - v0[1])
        ny = (v1[2] - v0[2]) * (v2[0] - v0[0]) - (v1[0] - v0[0]) * (v2[2] - v0[2])
        nz = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v1[1] - v0[1]) * (v2[0] - v0[0])
        nn = np.sqrt(nx * nx + ny * ny + nz * nz)
        shade = abs(nz) / nn if nn > 0.0 else 0.0

        for yi in range(ymin, ymax + 1):
            py = yi + 0.5
            for xi in range(xmin, xmax + 1):
                px = xi + 0.5
                w0 = ((p1x - px) * (p2y - py) - (p1y - py) * (p2x - px)) / area
                w1 = ((p2x - px) * (p0y - py) - (p2y - py) * (p0x - px)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                inv_z = w0 / v0[2] + w1 / v1[2] + w2 / v2[2]
                if inv_z <= 0.0:
                    continue
                z = 1.0 / inv_z
                if z < zbuf[yi, xi]:
                    zbuf[yi, xi] = z
                    depth[yi, xi] = z
                    for c in range(3):
                        col = (w0 * colors[i0, c] / v0[2]
                               + w1 * colors[i1, c] / v1[2]
                               + w2 * colors[i2, c] / v2[2]) * z * shade
                        rgb[yi, xi, c] = min(max(col, 0.0), 1.0)
    return rgb, depth


@njit(cache=True)
def warp_bilinear(src, h_inv, out_h, out_w):
    H, W, C = src.shape
    out = np.zeros((out_h, out_w, C), dtype=np.float64)
    for yi in range(out_h):
        for xi in range(out_w):
            px = xi + 0.5
            py = yi + 0.5
            qx = h_inv[0, 0] * px + h_inv[0, 1] * py + h_inv[0, 2]
            qy = h_inv[1, 0] * px + h_inv[1, 1] * py + h_inv[1, 2]
            qw = h_inv[2, 0] * px + h_inv[2, 1] * py + h_inv[2, 2]
            sx = qx / qw - 0.5
            sy = qy / qw - 0.5
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            ax = sx - x0
            ay = sy - y0
            for dy in range(2):
                yy = y0 + dy
                if yy < 0 or yy >= H:
                    continue
                wy = ay if dy == 1 else 1.0 - ay
                for dx in range(2):
                    xx = x0 + dx
                    if xx < 0 or xx >= W:
                        continue
                    wx = ax if dx == 1 else 1.0 - ax
                    for c in range(C):
                        out[yi, xi, c] += wy * wx * src[yy, xx, c]
    return out


@njit(cache=True)
def warp_nearest(src, h_inv, out_h, out_w):
    H, W = src.shape
    out = np.zeros((out_h, out_w), dtype=src.dtype)
    for yi in range(out_h):
        for xi in range(out_w):
            px = xi + 0.5
            py = yi + 0.5
            qx = h_inv[0, 0] * px + h_inv[0, 1] * py + h_inv[0, 2]
            qy = h_inv[1, 0] * px + h_inv[1, 1] * py + h_inv[1, 2]
            qw = h_inv[2, 0] * px + h_inv[2, 1] * py + h_inv[2, 2]
            sx = int(np.floor(qx / qw))
            sy = int(np.floor(qy / qw))
            if 0 <= sx < W and 0 <= sy < H:
                out[yi, xi] = src[sy, sx]
    return out


@njit(cache=True)
def gradient_descriptor(patch):
    s = patch.shape[0]
    hist = np.zeros((4, 4, 8), dtype=np.float64)
    cell = s / 4.0
    for y in range(s):
        for x in range(s):
            xr = x + 1 if x + 1 < s else s - 1
            xl = x - 1 if x - 1 >= 0 else 0
            yd = y + 1 if y + 1 < s else s - 1
            yu = y - 1 if y - 1 >= 0 else 0
            gx = 0.5 * (patch[y, xr] - patch[y, xl])
            gy = 0.5 * (patch[yd, x] - patch[yu, x])
            mag = np.sqrt(gx * gx + gy * gy)
            if mag == 0.0:
                continue
            ori = np.arctan2(gy, gx) % (2.0 * np.pi)
            cy = (y + 0.5) / cell - 0.5
            cx = (x + 0.5) / cell - 0.5
            ob = ori / (2.0 * np.pi / 8.0)
            y0 = int(np.floor(cy))
            x0 = int(np.floor(cx))
            o0 = int(np.floor(ob))
            fy = cy - y0
            fx = cx - x0
            fo = ob - o0
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi > 3:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi > 3:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    for do in range(2):
                        oi = (o0 + do) % 8
                        wo = fo if do == 1 else 1.0 - fo
                        hist[yi, xi, oi] += mag * wy * wx * wo
    desc = hist.ravel().copy()
    norm = np.sqrt(np.sum(desc * desc))
    if norm < 1e-12:
        return np.zeros(128, dtype=np.float64)
    for i in range(128):
        v = desc[i] / norm
        desc[i] = v if v < 0.2 else 0.2
    norm = np.sqrt(np.sum(desc * desc))
    if norm < 1e-12:
        return np.zeros(128, dtype=np.float64)
    return desc / norm


@njit(cache=True)
def gradient_grid(gray, patch_size):
    # one descriptor per non-overlapping patch, computed over a 2s x 2s
    # window centered on the patch (replicate padding at borders)
    s = patch_size
    H = gray.shape[0]
    W = gray.shape[1]
    gh = H // s
    gw = W // s
    h = s // 2
    padded = np.empty((H + 2 * h, W + 2 * h), dtype=np.float64)
    for y in range(H + 2 * h):
        sy = min(max(y - h, 0), H - 1)
        for x in range(W + 2 * h):
            sx = min(max(x - h, 0), W - 1)
            padded[y, x] = gray[sy, sx]
    out = np.zeros((gh, gw, 128), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            out[i, j] = gradient_descriptor(
                padded[i * s:i * s + 2 * s, j * s:j * s + 2 * s])
    return out


@njit(cache=True)
def nn_match(query, ref):
    M = query.shape[0]
    N = ref.shape[0]
    d = query.shape[1]
    idx = np.zeros(M, dtype=np.int64)
    dist = np.zeros(M, dtype=np.float64)
    for i in range(M):
        best = np.inf
        besti = 0
        for j in range(N):
            acc = 0.0
            for c in range(d):
                diff = query[i, c] - ref[j, c]
                acc += diff * diff
            if acc < best:
                best = acc
                besti = j
        idx[i] = besti
        dist[i] = np.sqrt(best)
    return idx, dist


@njit(cache=True)
def assign_topk(descs, centroids, topk):
    M = descs.shape[0]
    K = centroids.shape[0]
    d = descs.shape[1]
    idx = np.zeros((M, topk), dtype=np.int64)
    dist = np.zeros((M, topk), dtype=np.float64)
    for i in range(M):
        bd = np.full(topk, np.inf, dtype=np.float64)
        bi = np.zeros(topk, dtype=np.int64)
        for j in range(K):
            acc = 0.0
            for c in range(d):
                diff = descs[i, c] - centroids[j, c]
                acc += diff * diff
            # insertion into the sorted top list; strict < keeps lower index on ties
            if acc < bd[topk - 1]:
                pos = topk - 1
                while pos > 0 and acc < bd[pos - 1]:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bd[pos] = acc
                bi[pos] = j
        idx[i] = bi
        for q in range(topk):
            dist[i, q] = np.sqrt(bd[q])
    return idx, dist
