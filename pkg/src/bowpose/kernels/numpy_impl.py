"""Vectorized numpy implementations of the hot kernels.

Fallback path used when numba is unavailable or disabled via
BOWPOSE_NO_NUMBA=1. Semantics match kernels.numba_impl; small float
differences (summation order) are possible and covered by tolerance in the
equivalence tests.
"""

import numpy as np


def rasterize(verts_cam, tris, colors, fx, fy, cx, cy, width, height):
    """Z-buffered perspective rasterization with Lambertian headlight shading.

    verts_cam: (V,3) camera-space vertices (mm), tris: (T,3) int indices,
    colors: (V,3) per-vertex RGB in [0,1]. Returns (rgb (H,W,3), depth (H,W))
    with depth in mm and 0 for background.
    """
    rgb = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.zeros((height, width), dtype=np.float64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)

    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        v0, v1, v2 = verts_cam[i0], verts_cam[i1], verts_cam[i2]
        if v0[2] <= 0.0 or v1[2] <= 0.0 or v2[2] <= 0.0:
            continue
        # screen-space vertices
        p0 = np.array([fx * v0[0] / v0[2] + cx, fy * v0[1] / v0[2] + cy])
        p1 = np.array([fx * v1[0] / v1[2] + cx, fy * v1[1] / v1[2] + cy])
        p2 = np.array([fx * v2[0] / v2[2] + cx, fy * v2[1] / v2[2] + cy])
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]))), width - 1)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]))), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if area == 0.0:
            continue

        xs = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        ys = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        px, py = np.meshgrid(xs, ys)
        w0 = ((p1[0] - px) * (p2[1] - py) - (p1[1] - py) * (p2[0] - px)) / area
        w1 = ((p2[0] - px) * (p0[1] - py) - (p2[1] - py) * (p0[0] - px)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue

        # perspective-correct interpolation: blend 1/z and attr/z
        inv_z = w0 / v0[2] + w1 / v1[2] + w2 / v2[2]
        z = np.where(inv_z > 0.0, 1.0 / np.maximum(inv_z, 1e-300), np.inf)

        # Lambertian headlight: light along camera +z
        n = np.cross(v1 - v0, v2 - v0)
        nn = np.linalg.norm(n)
        shade = abs(n[2]) / nn if nn > 0.0 else 0.0

        col = (
            w0[..., None] * (colors[i0] / v0[2])
            + w1[..., None] * (colors[i1] / v1[2])
            + w2[..., None] * (colors[i2] / v2[2])
        ) * z[..., None] * shade

        sub_z = zbuf[ymin:ymax + 1, xmin:xmax + 1]
        upd = inside & (z < sub_z)
        sub_z[upd] = z[upd]
        depth[ymin:ymax + 1, xmin:xmax + 1][upd] = z[upd]
        rgb[ymin:ymax + 1, xmin:xmax + 1][upd] = np.clip(col[upd], 0.0, 1.0)
    return rgb, depth


def warp_bilinear(src, h_inv, out_h, out_w):
    """Warp src (H,W,C) into an (out_h,out_w,C) raster.

    h_inv maps output pixel coords (x, y, 1) to source coords. Out-of-source
    samples are black.
    """
    H, W = src.shape[:2]
    xs = np.arange(out_w, dtype=np.float64) + 0.5
    ys = np.arange(out_h, dtype=np.float64) + 0.5
    px, py = np.meshgrid(xs, ys)
    ones = np.ones_like(px)
    q = h_inv @ np.stack([px.ravel(), py.ravel(), ones.ravel()])
    sx = q[0] / q[2] - 0.5
    sy = q[1] / q[2] - 0.5
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    ax = sx - x0
    ay = sy - y0

    out = np.zeros((out_h * out_w, src.shape[2]), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (ax if dx else 1.0 - ax) * (ay if dy else 1.0 - ay)
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            idx = np.where(ok)[0]
            out[idx] += wgt[idx, None] * src[yi[idx], xi[idx]]
    return out.reshape(out_h, out_w, src.shape[2])


def warp_nearest(src, h_inv, out_h, out_w):
    """Nearest-neighbor warp of a single-channel raster; outside = 0."""
    H, W = src.shape
    xs = np.arange(out_w, dtype=np.float64) + 0.5
    ys = np.arange(out_h, dtype=np.float64) + 0.5
    px, py = np.meshgrid(xs, ys)
    ones = np.ones_like(px)
    q = h_inv @ np.stack([px.ravel(), py.ravel(), ones.ravel()])
    sx = np.floor(q[0] / q[2]).astype(np.int64)
    sy = np.floor(q[1] / q[2]).astype(np.int64)
    ok = (sx >= 0) & (sx < W) & (sy >= 0) & (sy < H)
    out = np.zeros(out_h * out_w, dtype=src.dtype)
    idx = np.where(ok)[0]
    out[idx] = src[sy[idx], sx[idx]]
    return out.reshape(out_h, out_w)


def _patch_gradients(patch):
    """Central differences with replicate padding at the patch border."""
    pad = np.pad(patch, 1, mode="edge")
    gx = 0.5 * (pad[1:-1, 2:] - pad[1:-1, :-2])
    gy = 0.5 * (pad[2:, 1:-1] - pad[:-2, 1:-1])
    return gx, gy


def gradient_descriptor(patch):
    """128-dim 4x4x8 gradient histogram of one grayscale patch.

    Trilinear binning, L2 normalization, 0.2 clipping, renormalization.
    Zero-gradient patches give the zero vector.
    """
    s = patch.shape[0]
    gx, gy = _patch_gradients(patch)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)

    cell = s / 4.0
    yy, xx = np.meshgrid(np.arange(s, dtype=np.float64),
                         np.arange(s, dtype=np.float64), indexing="ij")
    cy = (yy + 0.5) / cell - 0.5
    cx = (xx + 0.5) / cell - 0.5
    ob = ori / (2.0 * np.pi / 8.0)

    hist = np.zeros((4, 4, 8), dtype=np.float64)
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    o0 = np.floor(ob).astype(np.int64)
    fy = cy - y0
    fx = cx - x0
    fo = ob - o0
    for dy in (0, 1):
        wy = np.where(dy == 1, fy, 1.0 - fy)
        yi = y0 + dy
        oky = (yi >= 0) & (yi <= 3)
        for dx in (0, 1):
            wx = np.where(dx == 1, fx, 1.0 - fx)
            xi = x0 + dx
            ok = oky & (xi >= 0) & (xi <= 3)
            for do in (0, 1):
                wo = np.where(do == 1, fo, 1.0 - fo)
                oi = (o0 + do) % 8
                w = mag * wy * wx * wo
                np.add.at(hist, (yi[ok], xi[ok], oi[ok]), w[ok])
    desc = hist.ravel()
    norm = np.linalg.norm(desc)
    if norm < 1e-12:
        return np.zeros(128, dtype=np.float64)
    desc = np.minimum(desc / norm, 0.2)
    norm = np.linalg.norm(desc)
    if norm < 1e-12:
        return np.zeros(128, dtype=np.float64)
    return desc / norm


def gradient_grid(gray, patch_size):
    """Per-patch gradient descriptors over non-overlapping patches.

    Each descriptor is computed over a 2s x 2s window centered on its patch
    (replicate padding at image borders): the grid stays one descriptor per
    non-overlapping patch, but the wider support keeps descriptors stable
    under shifts of a few pixels.
    """
    s = patch_size
    gh = gray.shape[0] // s
    gw = gray.shape[1] // s
    h = s // 2
    padded = np.pad(gray, h, mode="edge")
    out = np.zeros((gh, gw, 128), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            window = padded[i * s:i * s + 2 * s, j * s:j * s + 2 * s]
            out[i, j] = gradient_descriptor(window)
    return out


def nn_match(query, ref):
    """Index and distance of nearest ref row per query row; ties -> lower index."""
    q2 = np.sum(query * query, axis=1)[:, None]
    r2 = np.sum(ref * ref, axis=1)[None, :]
    d2 = q2 + r2 - 2.0 * (query @ ref.T)
    np.maximum(d2, 0.0, out=d2)
    idx = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(query.shape[0]), idx])
    return idx.astype(np.int64), dist


def assign_topk(descs, centroids, topk):
    """Per-descriptor indices and distances of the topk nearest centroids.

    Results sorted by increasing distance, ties broken by lower index.
    """
    q2 = np.sum(descs * descs, axis=1)[:, None]
    c2 = np.sum(centroids * centroids, axis=1)[None, :]
    d2 = q2 + c2 - 2.0 * (descs @ centroids.T)
    np.maximum(d2, 0.0, out=d2)
    # stable argsort gives the lower-index tie break
    order = np.argsort(d2, axis=1, kind="stable")[:, :topk]
    rows = np.arange(descs.shape[0])[:, None]
    return order.astype(np.int64), np.sqrt(d2[rows, order])
