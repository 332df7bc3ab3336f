"""Featuremetric pose refinement.

Levenberg-Marquardt alignment of a template's 3D-registered patch
descriptors against the query crop's feature map: each template entry is
projected into the crop, the feature map is sampled bilinearly at the
projection, and the descriptor residual is robustified with the Barron
loss. The six pose parameters (axis-angle rotation plus translation,
right-composed onto the current pose) are updated until convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .onboarding import PcaModel, TemplateRecord, pca_project


@dataclass(frozen=True)
class QueryFeatureMap:
    """a x a grid of reduced descriptors covering an S x S crop, a = S / s."""

    grid: np.ndarray      # (a, a, d) float
    patch_size: int

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[0] != g.shape[1]:
            raise ValueError("grid must be a square (a, a, d) array")
        if not np.isfinite(g).all():
            raise ValueError("feature map contains NaN/Inf")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        object.__setattr__(self, "grid", g)

    @property
    def cells(self) -> int:
        return self.grid.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class RefinementConfig:
    max_iters: int = 30
    barron_alpha: float = -5.0
    barron_c: float = 0.5
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    convergence_rel_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.barron_c <= 0.0:
            raise ValueError("barron_c must be > 0")
        if self.initial_damping <= 0.0:
            raise ValueError("initial_damping must be > 0")


def build_query_map(crop_grid, pca: PcaModel) -> QueryFeatureMap:
    """PCA-reduce every cell of a crop feature grid into a QueryFeatureMap."""
    raw = crop_grid.data
    a_h, a_w, r = raw.shape
    reduced = pca_project(pca, raw.reshape(a_h * a_w, r))
    return QueryFeatureMap(grid=reduced.reshape(a_h, a_w, -1),
                           patch_size=crop_grid.patch_size)


def sample_bilinear(fmap: QueryFeatureMap, p: np.ndarray):
    """Bilinear sample at p = (gx, gy) in grid units.

    Coordinates are clamped to [0, a-1]; the returned (2, d) gradient is
    the analytic derivative of the blend, zero along clamped directions.
    """
    a = fmap.cells
    grid = fmap.grid
    px, py = float(p[0]), float(p[1])
    cx = min(max(px, 0.0), a - 1.0)
    cy = min(max(py, 0.0), a - 1.0)
    clamped_x = (cx != px) or a == 1
    clamped_y = (cy != py) or a == 1

    x0 = min(int(np.floor(cx)), max(a - 2, 0))
    y0 = min(int(np.floor(cy)), max(a - 2, 0))
    x1 = min(x0 + 1, a - 1)
    y1 = min(y0 + 1, a - 1)
    fx = cx - x0
    fy = cy - y0

    c00 = grid[y0, x0]
    c01 = grid[y0, x1]
    c10 = grid[y1, x0]
    c11 = grid[y1, x1]
    value = ((1 - fy) * ((1 - fx) * c00 + fx * c01)
             + fy * ((1 - fx) * c10 + fx * c11))

    gradient = np.zeros((2, grid.shape[2]))
    if not clamped_x:
        gradient[0] = (1 - fy) * (c01 - c00) + fy * (c11 - c10)
    if not clamped_y:
        gradient[1] = (1 - fx) * (c10 - c00) + fx * (c11 - c01)
    return value, gradient


def barron_rho(z: float, alpha: float, c: float) -> float:
    """General robust loss rho(z; alpha, c); quadratic (z/c)^2 / 2 at alpha=2."""
    zc2 = (z / c) ** 2
    if alpha == 2.0:
        return 0.5 * zc2
    if alpha == 0.0:
        return float(np.log1p(0.5 * zc2))
    b = abs(alpha - 2.0)
    return (b / alpha) * ((zc2 / b + 1.0) ** (alpha / 2.0) - 1.0)


def barron_drho(z: float, alpha: float, c: float) -> float:
    """Derivative of barron_rho with respect to z."""
    zc2 = (z / c) ** 2
    if alpha == 2.0:
        return z / c ** 2
    if alpha == 0.0:
        return (z / c ** 2) / (0.5 * zc2 + 1.0)
    b = abs(alpha - 2.0)
    return (z / c ** 2) * (zc2 / b + 1.0) ** (alpha / 2.0 - 1.0)


def _saturation(alpha: float, c: float) -> float:
    """Loss value charged to entries that project behind the camera."""
    if alpha < 0.0:
        return abs(alpha - 2.0) / abs(alpha)
    # unbounded shapes have no supremum; charge a far-tail value instead
    return barron_rho(1e6 * c, alpha, c)


def _exp_so3(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = np.array([[0.0, -omega[2], omega[1]],
                  [omega[2], 0.0, -omega[0]],
                  [-omega[1], omega[0], 0.0]])
    if theta < 1e-12:
        return np.eye(3) + K
    return (np.eye(3) + np.sin(theta) / theta * K
            + (1.0 - np.cos(theta)) / theta ** 2 * (K @ K))


def _apply_increment(pose: Pose, delta: np.ndarray) -> Pose:
    """Right-compose a local increment (omega, dt) onto the pose."""
    inc = Pose(_reorthonormalize(_exp_so3(delta[:3])), delta[3:])
    return pose.compose(inc)


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    Rn = u @ vt
    if np.linalg.det(Rn) < 0:
        u[:, -1] *= -1.0
        Rn = u @ vt
    return Rn


def _sample_bilinear_batch(fmap: QueryFeatureMap, px: np.ndarray,
                           py: np.ndarray):
    """Vectorized bilinear sampling: values (n, d) and gradients (n, 2, d)."""
    a = fmap.cells
    grid = fmap.grid
    cx = np.clip(px, 0.0, a - 1.0)
    cy = np.clip(py, 0.0, a - 1.0)
    open_x = (cx == px) & (a > 1)
    open_y = (cy == py) & (a > 1)

    x0 = np.minimum(np.floor(cx).astype(np.int64), max(a - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.int64), max(a - 2, 0))
    x1 = np.minimum(x0 + 1, a - 1)
    y1 = np.minimum(y0 + 1, a - 1)
    fx = (cx - x0)[:, None]
    fy = (cy - y0)[:, None]

    c00 = grid[y0, x0]
    c01 = grid[y0, x1]
    c10 = grid[y1, x0]
    c11 = grid[y1, x1]
    value = ((1 - fy) * ((1 - fx) * c00 + fx * c01)
             + fy * ((1 - fx) * c10 + fx * c11))
    gradient = np.zeros((len(px), 2, grid.shape[2]))
    gradient[:, 0, :] = ((1 - fy) * (c01 - c00) + fy * (c11 - c10)) \
        * open_x[:, None]
    gradient[:, 1, :] = ((1 - fx) * (c10 - c00) + fx * (c11 - c01)) \
        * open_y[:, None]
    return value, gradient


def residuals_and_jacobian(pose: Pose, record: TemplateRecord,
                           fmap: QueryFeatureMap, K: CameraIntrinsics,
                           config: RefinementConfig):
    """Robustified residual vector r (sqrt-rho trick) and its (n, 6) Jacobian.

    The total cost is sum(r**2). Entries behind the camera get the
    saturation value with a zero Jacobian row, so the cost stays finite
    and continuous.
    """
    alpha, c = config.barron_alpha, config.barron_c
    s = float(fmap.patch_size)
    pts = record.points3d
    n = len(pts)
    r = np.zeros(n)
    J = np.zeros((n, 6))
    sat = _saturation(alpha, c)

    X = pose.apply(pts)                   # (n, 3) camera space
    R = pose.rotation
    front = X[:, 2] > 1e-9
    r[~front] = np.sqrt(sat)
    if not front.any():
        return r, J

    Xf = X[front]
    x, y, z = Xf[:, 0], Xf[:, 1], Xf[:, 2]
    gx = (K.fx * x / z + K.cx) / s - 0.5
    gy = (K.fy * y / z + K.cy) / s - 0.5
    feat, grad = _sample_bilinear_batch(fmap, gx, gy)
    e = record.descriptors[front] - feat                      # (m, d)
    znorm = np.linalg.norm(e, axis=1)
    zc2 = (znorm / c) ** 2
    b = abs(alpha - 2.0)
    if alpha == 2.0:
        rho = 0.5 * zc2
        drho = znorm / c ** 2
    elif alpha == 0.0:
        rho = np.log1p(0.5 * zc2)
        drho = (znorm / c ** 2) / (0.5 * zc2 + 1.0)
    else:
        base = zc2 / b + 1.0
        rho = (b / alpha) * (base ** (alpha / 2.0) - 1.0)
        drho = (znorm / c ** 2) * base ** (alpha / 2.0 - 1.0)
    rf = np.sqrt(rho)
    r[front] = rf

    live = (znorm > 1e-12) & (rho > 1e-24)
    # d znorm / d grid coords: e = p - F(g), so dz/dg = -(G e)/|e|
    dz_dg = -np.einsum('nkd,nd->nk', grad, e) / np.maximum(znorm, 1e-300)[:, None]
    zeros = np.zeros_like(z)
    dg_dX = np.stack([
        np.stack([K.fx / z, zeros, -K.fx * x / z ** 2], axis=1),
        np.stack([zeros, K.fy / z, -K.fy * y / z ** 2], axis=1)],
        axis=1) / s                                            # (m, 2, 3)
    # right-composed increment: dX/domega = -R [x]_x, dX/ddt = R
    p3 = pts[front]
    m = len(p3)
    skew = np.zeros((m, 3, 3))
    skew[:, 0, 1] = -p3[:, 2]
    skew[:, 0, 2] = p3[:, 1]
    skew[:, 1, 0] = p3[:, 2]
    skew[:, 1, 2] = -p3[:, 0]
    skew[:, 2, 0] = -p3[:, 1]
    skew[:, 2, 1] = p3[:, 0]
    dX = np.empty((m, 3, 6))
    dX[:, :, :3] = -np.einsum('ab,nbc->nac', R, skew)
    dX[:, :, 3:] = R[None, :, :]
    dz_ddelta = np.einsum('nk,nkc,nch->nh', dz_dg, dg_dX, dX)  # (m, 6)
    dr_dz = np.where(live, drho / np.maximum(2.0 * rf, 1e-300), 0.0)
    Jf = dr_dz[:, None] * dz_ddelta
    Jf[~live] = 0.0
    J[front] = Jf
    return r, J


def featuremetric_cost(pose: Pose, record: TemplateRecord,
                       fmap: QueryFeatureMap, K: CameraIntrinsics,
                       config: RefinementConfig = RefinementConfig()) -> float:
    """Sum of robustified descriptor residuals under the given pose."""
    r, _ = residuals_and_jacobian(pose, record, fmap, K, config)
    return float(r @ r)


def refine(pose_init: Pose, record: TemplateRecord, fmap: QueryFeatureMap,
           K: CameraIntrinsics,
           config: RefinementConfig = RefinementConfig()) -> Pose:
    """Levenberg-Marquardt featuremetric refinement.

    Deterministic, accept-only-on-improvement; the returned pose never has
    a higher cost than pose_init.
    """
    pose = pose_init
    r, J = residuals_and_jacobian(pose, record, fmap, K, config)
    cost = float(r @ r)
    best_pose, best_cost = pose, cost
    lam = config.initial_damping

    for _ in range(config.max_iters):
        JtJ = J.T @ J
        g = J.T @ r
        # Marquardt scaling: damp along diag(JtJ) so rotation (radians) and
        # translation (millimeters) steps stay comparably sized
        D = np.diag(np.maximum(np.diag(JtJ), 1e-12))
        try:
            delta = np.linalg.solve(JtJ + lam * D, -g)
        except np.linalg.LinAlgError:
            lam *= config.damping_up
            continue
        if not np.isfinite(delta).all():
            lam *= config.damping_up
            continue

        candidate = _apply_increment(pose, delta)
        r_new, J_new = residuals_and_jacobian(candidate, record, fmap, K, config)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            improved = (cost - cost_new) / max(cost, 1e-300)
            pose, r, J, cost = candidate, r_new, J_new, cost_new
            if cost < best_cost:
                best_pose, best_cost = pose, cost
            lam /= config.damping_down
            if improved < config.convergence_rel_tol:
                break
        else:
            lam *= config.damping_up
            if lam > 1e12:
                break
    return best_pose
