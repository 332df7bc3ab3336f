"""Synthetic meshes for tests, demos, and the desk-scale acceptance suite."""

import numpy as np

from .rendering import Mesh


def cube_mesh(half_side: float = 50.0, colors=None) -> Mesh:
    """Axis-aligned cube centered at the origin, 12 triangles."""
    h = half_side
    verts = np.array([
        [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
        [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
    ], dtype=np.float64)
    tris = np.array([
        [0, 2, 1], [0, 3, 2],   # z = -h
        [4, 5, 6], [4, 6, 7],   # z = +h
        [0, 1, 5], [0, 5, 4],   # y = -h
        [3, 6, 2], [3, 7, 6],   # y = +h
        [0, 4, 7], [0, 7, 3],   # x = -h
        [1, 2, 6], [1, 6, 5],   # x = +h
    ], dtype=np.int64)
    return Mesh(vertices=verts, triangles=tris, colors=colors)


def blob_mesh(n_theta: int = 24, n_phi: int = 48, radius: float = 60.0,
              seed: int = 7) -> Mesh:
    """Asymmetric bumpy sphere with high-contrast random vertex colors.

    The radial bumps break all symmetries and the colors give the gradient
    descriptor plenty of texture, which makes this the standard subject of the
    end-to-end synthetic tests.
    """
    rng = np.random.default_rng(seed)
    thetas = np.linspace(0.0, np.pi, n_theta)
    phis = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    verts = []
    for th in thetas:
        for ph in phis:
            # low-order harmonics: smooth but clearly asymmetric
            r = radius * (1.0
                          + 0.25 * np.sin(2 * th) * np.cos(ph)
                          + 0.15 * np.cos(3 * ph) * np.sin(th)
                          + 0.10 * np.cos(th))
            verts.append([r * np.sin(th) * np.cos(ph),
                          r * np.sin(th) * np.sin(ph),
                          r * np.cos(th)])
    verts = np.array(verts)
    verts -= verts.mean(axis=0)

    tris = []
    for i in range(n_theta - 1):
        for j in range(n_phi):
            a = i * n_phi + j
            b = i * n_phi + (j + 1) % n_phi
            c = (i + 1) * n_phi + j
            d = (i + 1) * n_phi + (j + 1) % n_phi
            tris.append([a, b, d])
            tris.append([a, d, c])
    # smooth positional color fields: high contrast at a spatial scale of a
    # few patches, so gradient descriptors stay stable under small shifts
    colors = np.empty((len(verts), 3))
    for ch in range(3):
        freq = rng.uniform(-1.0, 1.0, size=3)
        freq *= (2.0 * np.pi / 25.0) / np.linalg.norm(freq)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        colors[:, ch] = 0.5 + 0.45 * np.sin(verts @ freq + phase)
    return Mesh(vertices=verts, triangles=np.array(tris, dtype=np.int64),
                colors=colors)
