"""Mesh loading, uniform viewpoint sampling, and RGB-D template rasterization.

The rasterizer is a CPU scanline renderer with a z-buffer and perspective
correct interpolation, shaded with a single headlight. Templates are rendered
on a black background with the object translated along the optical axis so
that the longer side of its projected bounding box is delta*S pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import BadMesh, EmptyRender, PointBehindCamera, ZeroDepth
from .geometry import CameraIntrinsics, Pose

# Irrational constants of the spiral sampler (Alexa's super-Fibonacci scheme)
_SF_PHI = np.sqrt(2.0)
_SF_PSI = 1.533751168755204288118041


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh in model space (mm), with optional per-vertex colors."""

    vertices: np.ndarray          # (V, 3) float64
    triangles: np.ndarray         # (T, 3) int64
    colors: np.ndarray = None     # (V, 3) float64 in [0, 1]
    diameter: float = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise BadMesh("vertices must be (V,3) and triangles (T,3)")
        if not np.isfinite(v).all():
            raise BadMesh("mesh contains NaN/Inf coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise BadMesh("triangle index out of range")
        c = self.colors
        if c is None:
            c = np.full((len(v), 3), 0.5)
        c = np.ascontiguousarray(np.asarray(c, dtype=np.float64))
        if c.shape != v.shape:
            raise BadMesh("colors must match vertices")
        d = self.diameter
        if d is None:
            d = _mesh_diameter(v)
        if not d > 0:
            raise BadMesh("mesh diameter must be positive")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "diameter", float(d))


def _mesh_diameter(v: np.ndarray) -> float:
    """Largest inter-vertex distance, chunked to bound memory."""
    best = 0.0
    step = 1024
    for i in range(0, len(v), step):
        d2 = np.sum((v[i:i + step, None, :] - v[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass(frozen=True)
class TemplateImage:
    """One rendered RGB-D template with its render pose and intrinsics."""

    rgb: np.ndarray        # (S, S, 3) in [0, 1]
    depth: np.ndarray      # (S, S) mm, 0 = background
    mask: np.ndarray       # (S, S) uint8
    pose: Pose
    intrinsics: CameraIntrinsics
    template_id: int


def sample_rotations(n: int, seed: int) -> np.ndarray:
    """n rotations spread approximately uniformly over SO(3), shape (n, 3, 3).

    Uses a low-discrepancy double spiral over unit quaternions; the seed
    applies a global random rotation offset so different seeds give different
    (equally uniform) sets.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=np.float64)
    s = i + 0.5
    t = s / n
    r = np.sqrt(t)
    rr = np.sqrt(1.0 - t)
    alpha = 2.0 * np.pi * s / _SF_PHI
    beta = 2.0 * np.pi * s / _SF_PSI
    q = np.stack([r * np.sin(alpha), r * np.cos(alpha),
                  rr * np.sin(beta), rr * np.cos(beta)], axis=1)

    rng = np.random.default_rng(seed)
    q0 = rng.normal(size=4)
    q0 /= np.linalg.norm(q0)
    q = _quat_multiply(q0, q)
    return quat_to_matrix(q)


def _quat_multiply(a, b):
    """Hamilton product a*b; a is (4,) and b is (N,4) in (x, y, z, w) order."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ], axis=1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(N,4) unit quaternions in (x, y, z, w) order to (N,3,3) matrices."""
    x, y, z, w = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - z * w)
    R[:, 0, 2] = 2 * (x * z + y * w)
    R[:, 1, 0] = 2 * (x * y + z * w)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - x * w)
    R[:, 2, 0] = 2 * (x * z - y * w)
    R[:, 2, 1] = 2 * (y * z + x * w)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Rotation angle of Ra^T Rb in radians."""
    tr = np.trace(Ra.T @ Rb)
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


def template_intrinsics(S: int) -> CameraIntrinsics:
    """Canonical template camera: square viewport, ~53 degree FOV."""
    return CameraIntrinsics(fx=float(S), fy=float(S), cx=S / 2.0, cy=S / 2.0,
                            width=S, height=S)


def _projected_bbox_side(verts_rot: np.ndarray, tz: float, K: CameraIntrinsics) -> float:
    z = verts_rot[:, 2] + tz
    u = K.fx * verts_rot[:, 0] / z + K.cx
    v = K.fy * verts_rot[:, 1] / z + K.cy
    return float(max(u.max() - u.min(), v.max() - v.min()))


def render_distance(mesh: Mesh, rotation: np.ndarray, S: int, delta: float,
                    K: CameraIntrinsics = None) -> float:
    """Optical-axis distance putting the projected bbox longer side at delta*S."""
    K = K or template_intrinsics(S)
    verts_rot = mesh.vertices @ np.asarray(rotation).T
    target = delta * S
    tz = 2.0 * mesh.diameter * max(K.fx, K.fy) / target
    # bbox size is ~1/tz; a few fixed-point steps land within a fraction of a px
    for _ in range(8):
        side = _projected_bbox_side(verts_rot, tz, K)
        if abs(side - target) <= 0.25:
            break
        tz *= side / target
    return tz


def render_template(mesh: Mesh, rotation: np.ndarray, S: int, delta: float,
                    template_id: int) -> TemplateImage:
    """Rasterize one RGB-D template at the given orientation."""
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    K = template_intrinsics(S)
    R = np.asarray(rotation, dtype=np.float64)
    tz = render_distance(mesh, R, S, delta, K)
    pose = Pose(R, np.array([0.0, 0.0, tz]))

    verts_cam = np.ascontiguousarray(mesh.vertices @ R.T + pose.translation)
    rgb, depth = kernels.rasterize(verts_cam, mesh.triangles, mesh.colors,
                                   K.fx, K.fy, K.cx, K.cy, S, S)
    mask = (depth > 0.0).astype(np.uint8)
    if not mask.any():
        raise EmptyRender(f"template {template_id}: nothing rasterized")
    return TemplateImage(rgb=rgb, depth=depth, mask=mask, pose=pose,
                         intrinsics=K, template_id=template_id)


def render_depth(mesh: Mesh, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Depth map (mm, 0 = background) of the mesh under an arbitrary pose."""
    verts_cam = np.ascontiguousarray(pose.apply(mesh.vertices))
    if np.any(verts_cam[:, 2] <= 0.0):
        raise PointBehindCamera("mesh extends behind the camera")
    _, depth = kernels.rasterize(verts_cam, mesh.triangles, mesh.colors,
                                 K.fx, K.fy, K.cx, K.cy, K.width, K.height)
    return depth


def backproject(u, depth: float, K: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Pixel + depth to a model-space 3D point via the inverse pose."""
    if depth <= 0.0:
        raise ZeroDepth(f"depth {depth} <= 0")
    u = np.asarray(u, dtype=np.float64)
    xc = np.array([(u[0] - K.cx) * depth / K.fx,
                   (u[1] - K.cy) * depth / K.fy,
                   depth])
    return pose.rotation.T @ (xc - pose.translation)


# --- mesh file IO ---

def load_mesh(path) -> Mesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return _load_ply(path)
    if suffix == ".obj":
        return _load_obj(path)
    raise BadMesh(f"unsupported mesh format: {path.name}")


def _load_ply(path: Path) -> Mesh:
    with open(path, "r") as f:
        line = f.readline().strip()
        if line != "ply":
            raise BadMesh("not a PLY file")
        n_verts = n_faces = 0
        vert_props = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise BadMesh("PLY header not terminated")
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise BadMesh("only ASCII PLY is supported")
            elif parts[0] == "element":
                in_vertex = parts[1] == "vertex"
                if parts[1] == "vertex":
                    n_verts = int(parts[2])
                elif parts[1] == "face":
                    n_faces = int(parts[2])
            elif parts[0] == "property" and in_vertex and parts[1] != "list":
                vert_props.append(parts[2])
            elif parts[0] == "end_header":
                break
        verts = np.zeros((n_verts, 3))
        colors = None
        has_color = all(p in vert_props for p in ("red", "green", "blue"))
        if has_color:
            colors = np.zeros((n_verts, 3))
        idx = {p: i for i, p in enumerate(vert_props)}
        for i in range(n_verts):
            vals = f.readline().split()
            verts[i] = [float(vals[idx["x"]]), float(vals[idx["y"]]), float(vals[idx["z"]])]
            if has_color:
                colors[i] = [float(vals[idx["red"]]) / 255.0,
                             float(vals[idx["green"]]) / 255.0,
                             float(vals[idx["blue"]]) / 255.0]
        tris = []
        for _ in range(n_faces):
            vals = [int(v) for v in f.readline().split()]
            cnt, face = vals[0], vals[1:]
            for k in range(1, cnt - 1):  # fan triangulation
                tris.append((face[0], face[k], face[k + 1]))
    return Mesh(vertices=verts, triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
                colors=colors)


def _load_obj(path: Path) -> Mesh:
    verts, colors, tris = [], [], []
    with open(path, "r") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                if len(parts) >= 7:  # nonstandard per-vertex color extension
                    colors.append([float(parts[4]), float(parts[5]), float(parts[6])])
            elif parts[0] == "f":
                face = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(face) - 1):
                    tris.append((face[0], face[k], face[k + 1]))
    verts = np.array(verts)
    return Mesh(vertices=verts,
                triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
                colors=np.array(colors) if len(colors) == len(verts) else None)


def save_ply(mesh: Mesh, path) -> None:
    """Write an ASCII PLY with per-vertex colors."""
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(mesh.vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write(f"element face {len(mesh.triangles)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for v, c in zip(mesh.vertices, mesh.colors):
            r, g, b = (int(round(x * 255)) for x in c)
            f.write(f"{v[0]} {v[1]} {v[2]} {r} {g} {b}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def dump_template(template: TemplateImage, out_dir) -> None:
    """Debug dump: rgb/mask as PNG, depth as 16-bit PNG in 0.1 mm units."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tid = template.template_id
    Image.fromarray((np.clip(template.rgb, 0, 1) * 255).astype(np.uint8)).save(
        out_dir / f"template_{tid}_rgb.png")
    Image.fromarray((template.mask * 255).astype(np.uint8)).save(
        out_dir / f"template_{tid}_mask.png")
    d = np.clip(np.round(template.depth * 10.0), 0, 65535).astype(np.uint16)
    Image.fromarray(d, mode="I;16").save(out_dir / f"template_{tid}_depth.png")
