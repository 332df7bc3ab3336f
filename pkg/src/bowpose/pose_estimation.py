"""Coarse pose estimation: crop-to-template matching and EPnP inside RANSAC.

EPnP expresses the 3D points as barycentric combinations of four control
points (three in the planar case), recovers the control points in the camera
frame from the null space of the projection constraints, and fixes the
remaining scale ambiguities from inter-control-point distances. RANSAC
handles the outliers that plain nearest-neighbor matching leaves in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (DegenerateConfiguration, EmptyInput, EmptyMask,
                     NoModelFound, NoValidPatches)
from .features import FeatureGrid
from .geometry import CameraIntrinsics, Pose
from .onboarding import ObjectRepresentation, TemplateRecord, _valid_patches, \
    pca_project
from .retrieval import query_bow, retrieve


@dataclass(frozen=True)
class CorrespondenceSet:
    """2D crop points paired with 3D model points."""

    points2d: np.ndarray        # (m, 2) crop px
    points3d: np.ndarray        # (m, 3) model mm
    match_distances: np.ndarray  # (m,) descriptor-space distance

    def __len__(self) -> int:
        return len(self.points2d)


@dataclass(frozen=True)
class PoseHypothesis:
    pose: Pose                  # virtual camera frame
    template_id: int
    inlier_count: int
    inlier_indices: np.ndarray
    mean_inlier_reproj_error: float


def match_patches(crop_descriptors: np.ndarray, crop_centers: np.ndarray,
                  record: TemplateRecord) -> CorrespondenceSet:
    """Nearest template entry per crop patch; no ratio test, no mutual check."""
    if len(crop_descriptors) == 0:
        raise EmptyInput("no crop descriptors")
    idx, dist = kernels.nn_match(
        np.ascontiguousarray(crop_descriptors, dtype=np.float64),
        np.ascontiguousarray(record.descriptors, dtype=np.float64))
    return CorrespondenceSet(points2d=np.asarray(crop_centers, dtype=np.float64),
                             points3d=record.points3d[idx],
                             match_distances=dist)


# --- EPnP ---

def _control_points(pts: np.ndarray):
    c0 = pts.mean(axis=0)
    centered = pts - c0
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[0] <= 0.0 or evals[1] / evals[0] < 1e-12:
        raise DegenerateConfiguration("3D points are (near) collinear")
    planar = evals[2] / evals[0] < 1e-10
    axes = [c0 + np.sqrt(evals[i]) * evecs[:, i] for i in range(2 if planar else 3)]
    return np.vstack([c0] + axes), planar


def _barycentric(pts: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    m = len(ctrl)
    A = np.vstack([ctrl.T, np.ones(m)])          # (4, m)
    B = np.vstack([pts.T, np.ones(len(pts))])    # (4, n)
    if m == 4:
        alphas = np.linalg.solve(A, B)
    else:
        alphas, *_ = np.linalg.lstsq(A, B, rcond=None)
    return alphas.T                               # (n, m)


def _build_M(alphas: np.ndarray, uv: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    n, m = alphas.shape
    M = np.zeros((2 * n, 3 * m))
    for j in range(m):
        M[0::2, 3 * j] = alphas[:, j] * K.fx
        M[0::2, 3 * j + 2] = alphas[:, j] * (K.cx - uv[:, 0])
        M[1::2, 3 * j + 1] = alphas[:, j] * K.fy
        M[1::2, 3 * j + 2] = alphas[:, j] * (K.cy - uv[:, 1])
    return M


def _rho_vector(ctrl: np.ndarray):
    pairs = [(a, b) for a in range(len(ctrl)) for b in range(a + 1, len(ctrl))]
    rho = np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in pairs])
    return pairs, rho


def _null_diffs(vs: np.ndarray, pairs) -> np.ndarray:
    """dv[r, k] = vs[k, a] - vs[k, b] for control-point pair r = (a, b)."""
    a_idx = np.array([p[0] for p in pairs])
    b_idx = np.array([p[1] for p in pairs])
    return vs[:, a_idx] - vs[:, b_idx]   # (nv, npairs, 3) -> transpose below


def _L_matrix(dv: np.ndarray, combos) -> np.ndarray:
    # rows: control-point pairs; columns: beta products beta_a*beta_b, a <= b
    gram = np.einsum('arc,brc->rab', dv, dv)   # (npairs, nv, nv)
    cols = [(1.0 if a == b else 2.0) * gram[:, a, b] for a, b in combos]
    return np.stack(cols, axis=1)


def _approx_betas(L: np.ndarray, rho: np.ndarray, combos, case: int,
                  nv: int) -> np.ndarray:
    """Initial betas from a restricted subset of the product unknowns.

    case 1: products involving beta_1 only; case 2: betas 1-2; case 3:
    betas 1-3 without the (3,3) term. The remaining sign/scale slack is left
    to the Gauss-Newton polish and the global z flip.
    """
    if case == 1:
        keep = [(0, b) for b in range(nv)]
    elif case == 2:
        keep = [(0, 0), (0, 1), (1, 1)]
    else:
        keep = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2)]
    keep = [c for c in keep if c in combos]
    cols = [combos.index(c) for c in keep]
    x, *_ = np.linalg.lstsq(L[:, cols], rho, rcond=None)
    prod = dict(zip(keep, x))

    betas = np.zeros(nv)
    b11 = prod.get((0, 0), 0.0)
    betas[0] = np.sqrt(abs(b11))
    if betas[0] > 0.0:
        for b in range(1, nv):
            if (0, b) in prod:
                betas[b] = prod[(0, b)] / betas[0]
    if case >= 2 and (1, 1) in prod and betas[0] == 0.0:
        betas[1] = np.sqrt(abs(prod[(1, 1)]))
    return betas


def _gauss_newton_betas(dv: np.ndarray, betas: np.ndarray, rho,
                        iters: int = 10) -> np.ndarray:
    for _ in range(iters):
        diff = np.tensordot(betas, dv, axes=1)     # (npairs, 3)
        res = np.einsum('rc,rc->r', diff, diff) - rho
        J = 2.0 * np.einsum('rc,krc->rk', diff, dv)
        try:
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if np.abs(step).max() < 1e-12:
            break
    return betas


def _procrustes(model: np.ndarray, cam: np.ndarray) -> Pose:
    mc = model.mean(axis=0)
    cc = cam.mean(axis=0)
    H = (model - mc).T @ (cam - cc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return Pose(R, cc - R @ mc)


def _reproj_errors(pose: Pose, pts3d: np.ndarray, uv: np.ndarray,
                   K: CameraIntrinsics) -> np.ndarray:
    xc = pose.apply(pts3d)
    z = xc[:, 2]
    err = np.full(len(pts3d), np.inf)
    front = z > 0.0
    u = K.fx * xc[front, 0] / z[front] + K.cx
    v = K.fy * xc[front, 1] / z[front] + K.cy
    err[front] = np.hypot(u - uv[front, 0], v - uv[front, 1])
    return err


def solve_epnp(points3d: np.ndarray, points2d: np.ndarray,
               K: CameraIntrinsics, polish: bool = True) -> Pose:
    """Closed-form EPnP over >= 4 correspondences, planar case included.

    polish=False skips the final Gauss-Newton reprojection polish (used by
    RANSAC for cheap minimal-sample scoring; the refit polishes).
    """
    pts = np.asarray(points3d, dtype=np.float64)
    uv = np.asarray(points2d, dtype=np.float64)
    if len(pts) < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {len(pts)}")
    ctrl, planar = _control_points(pts)
    m = len(ctrl)
    alphas = _barycentric(pts, ctrl)
    M = _build_M(alphas, uv, K)
    _, evecs = np.linalg.eigh(M.T @ M)
    n_null = 4 if not planar else 3
    vs = evecs[:, :n_null].T.reshape(n_null, m, 3)
    pairs, rho = _rho_vector(ctrl)
    combos = [(a, b) for a in range(n_null) for b in range(a, n_null)]
    dv = _null_diffs(vs, pairs)
    L = _L_matrix(dv, combos)

    best_pose = None
    best_err = np.inf
    for case in (1, 2, 3):
        if case == 3 and n_null < 3:
            continue
        betas = _approx_betas(L, rho, combos, case, n_null)
        betas = _gauss_newton_betas(dv, betas, rho)
        ctrl_cam = np.tensordot(betas, vs, axes=1)
        cam_pts = alphas @ ctrl_cam
        if cam_pts[:, 2].mean() < 0.0:
            cam_pts = -cam_pts
        try:
            pose = _procrustes(pts, cam_pts)
        except np.linalg.LinAlgError:
            continue
        err = _reproj_errors(pose, pts, uv, K)
        mean_err = float(err.mean()) if np.isfinite(err).all() else np.inf
        if mean_err < best_err:
            best_err = mean_err
            best_pose = pose
    if best_pose is None or not np.isfinite(best_err):
        raise DegenerateConfiguration("EPnP produced no finite solution")
    if not polish:
        return best_pose
    return _polish_pose(best_pose, pts, uv, K)


def _polish_pose(pose: Pose, pts: np.ndarray, uv: np.ndarray,
                 K: CameraIntrinsics, iters: int = 5) -> Pose:
    """Gauss-Newton reprojection refinement of the closed-form estimate."""
    from .geometry import _rodrigues, _skew

    R, t = pose.rotation, pose.translation
    for _ in range(iters):
        xc = pts @ R.T + t
        z = xc[:, 2]
        if np.any(z <= 0.0):
            break
        u = K.fx * xc[:, 0] / z + K.cx
        v = K.fy * xc[:, 1] / z + K.cy
        res = np.concatenate([u - uv[:, 0], v - uv[:, 1]])
        # d(pi)/dX rows, with left-multiplicative rotation increment
        inv_z = 1.0 / z
        Ju = np.stack([K.fx * inv_z, np.zeros_like(z),
                       -K.fx * xc[:, 0] * inv_z ** 2], axis=1)
        Jv = np.stack([np.zeros_like(z), K.fy * inv_z,
                       -K.fy * xc[:, 1] * inv_z ** 2], axis=1)
        Xr = pts @ R.T
        dX_dw = -np.stack([_skew(x) for x in Xr])      # (n, 3, 3)
        J = np.zeros((2 * len(pts), 6))
        J[:len(pts), :3] = np.einsum('nc,nck->nk', Ju, dX_dw)
        J[len(pts):, :3] = np.einsum('nc,nck->nk', Jv, dX_dw)
        J[:len(pts), 3:] = Ju
        J[len(pts):, 3:] = Jv
        try:
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
        except np.linalg.LinAlgError:
            break
        R = _rodrigues(step[:3]) @ R
        t = t + step[3:]
        if np.abs(step).max() < 1e-12:
            break
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        return pose
    return Pose(R, t)


# --- RANSAC ---

def _sample_is_degenerate(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    evals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    return evals[0] <= 0.0 or evals[1] / evals[0] < 1e-6


def ransac_pnp(corrs: CorrespondenceSet, K: CameraIntrinsics,
               max_iters: int = 400, inlier_threshold_px: float = 10.0,
               seed: int = 0, template_id: int = -1,
               confidence: float = 0.99) -> PoseHypothesis:
    """RANSAC over minimal 4-point EPnP fits, refit on the best inlier set."""
    n = len(corrs)
    if n < 4:
        raise NoModelFound(f"{n} correspondences < 4")
    rng = np.random.default_rng(seed)
    pts3d, pts2d = corrs.points3d, corrs.points2d

    best_inliers = None
    best_pose = None
    best_count = 0
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        if _sample_is_degenerate(pts3d[sample]):
            continue
        try:
            pose = solve_epnp(pts3d[sample], pts2d[sample], K, polish=False)
        except DegenerateConfiguration:
            continue
        err = _reproj_errors(pose, pts3d, pts2d, K)
        inliers = err < inlier_threshold_px
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            best_pose = pose
            w = count / n
            if w >= 1.0:
                break
            denom = np.log(max(1.0 - w ** 4, 1e-15))
            needed = int(np.ceil(np.log(1.0 - confidence) / denom))

    if best_inliers is None or best_count < 4:
        raise NoModelFound("no RANSAC hypothesis with >= 4 inliers")

    idx = np.nonzero(best_inliers)[0]
    pose = best_pose
    try:
        refit = solve_epnp(pts3d[idx], pts2d[idx], K)
        err = _reproj_errors(refit, pts3d, pts2d, K)
        refit_in = err < inlier_threshold_px
        if int(refit_in.sum()) >= 4:
            pose = refit
            best_inliers = refit_in
            best_count = int(refit_in.sum())
    except DegenerateConfiguration:
        # keep the minimal-sample pose, but give it the polish the refit
        # would have applied
        pose = _polish_pose(pose, pts3d[idx], pts2d[idx], K)
        err = _reproj_errors(pose, pts3d, pts2d, K)
        polished_in = err < inlier_threshold_px
        if int(polished_in.sum()) >= 4:
            best_inliers = polished_in
            best_count = int(polished_in.sum())

    idx = np.nonzero(best_inliers)[0]
    err = _reproj_errors(pose, pts3d, pts2d, K)
    mean_err = float(err[idx].mean())
    return PoseHypothesis(pose=pose, template_id=template_id,
                          inlier_count=best_count, inlier_indices=idx,
                          mean_inlier_reproj_error=mean_err)


def reduce_crop_patches(crop_grid: FeatureGrid, crop_mask: np.ndarray,
                        rep: ObjectRepresentation):
    """PCA-reduced descriptors and pixel centers of the masked crop patches."""
    valid = _valid_patches((crop_grid.grid_h, crop_grid.grid_w),
                           crop_grid.patch_size, crop_mask)
    if not valid:
        raise NoValidPatches("no patch center inside the crop mask")
    s = crop_grid.patch_size
    raw = np.array([crop_grid.data[i, j] for i, j in valid])
    centers = np.array([[(j + 0.5) * s, (i + 0.5) * s] for i, j in valid])
    return pca_project(rep.pca, raw), centers


def estimate_coarse(crop_grid: FeatureGrid, crop_mask: np.ndarray,
                    rep: ObjectRepresentation, h: int, K_virtual: CameraIntrinsics,
                    seed: int = 0, max_iters: int = 400,
                    inlier_threshold_px: float = 10.0) -> PoseHypothesis:
    """Best hypothesis over the h retrieved templates.

    Quality is the inlier count; ties break by lower mean inlier reprojection
    error, then lower template id. Each template's RANSAC uses its own random
    stream so parallel and serial execution agree.
    """
    hyps = estimate_hypotheses(crop_grid, crop_mask, rep, h, K_virtual,
                               seed=seed, max_iters=max_iters,
                               inlier_threshold_px=inlier_threshold_px)
    return hyps[0]


def estimate_hypotheses(crop_grid: FeatureGrid, crop_mask: np.ndarray,
                        rep: ObjectRepresentation, h: int,
                        K_virtual: CameraIntrinsics, seed: int = 0,
                        max_iters: int = 400,
                        inlier_threshold_px: float = 10.0) -> list:
    """One hypothesis per retrieved template, best first."""
    bow = query_bow(crop_grid, crop_mask, rep)
    result = retrieve(bow, rep, h)
    descs, centers = reduce_crop_patches(crop_grid, crop_mask, rep)
    by_id = {t.template_id: t for t in rep.templates}

    hyps = []
    for template_id, _sim in result.ranked:
        record = by_id[template_id]
        corrs = match_patches(descs, centers, record)
        try:
            hyp = ransac_pnp(corrs, K_virtual, max_iters=max_iters,
                             inlier_threshold_px=inlier_threshold_px,
                             seed=_stream_seed(seed, template_id),
                             template_id=template_id)
        except NoModelFound:
            continue
        hyps.append(hyp)
    if not hyps:
        raise NoModelFound("all retrieved templates failed RANSAC")
    return sorted(hyps, key=_hypothesis_key)


def _stream_seed(seed: int, template_id: int) -> int:
    # independent deterministic stream per template
    return int(np.random.SeedSequence([seed, template_id]).generate_state(1)[0])


def _hypothesis_key(h: PoseHypothesis):
    return (-h.inlier_count, h.mean_inlier_reproj_error, h.template_id)


# --- bounding-circle baseline ---

def _bounding_circle(points: np.ndarray):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = (lo + hi) / 2.0
    radius = float(np.max(np.linalg.norm(points - center, axis=1)))
    return center, radius


def pose_from_top_template(record: TemplateRecord, crop_mask: np.ndarray,
                           K_virtual: CameraIntrinsics,
                           patch_size: int) -> Pose:
    """Baseline: template pose rescaled/shifted to the mask bounding circle.

    Both circles are computed over patch centers (the template's stored ones
    and the centers of mask-covered crop patches) so that identical masks give
    back the template pose exactly.
    """
    if not np.any(crop_mask):
        raise EmptyMask("empty crop mask")
    gh = crop_mask.shape[0] // patch_size
    gw = crop_mask.shape[1] // patch_size
    valid = _valid_patches((gh, gw), patch_size, crop_mask)
    if not valid:
        raise EmptyMask("mask covers no patch center")
    s = patch_size
    mask_pts = np.array([[(j + 0.5) * s, (i + 0.5) * s] for i, j in valid])

    ct, rt = _bounding_circle(record.patch_centers)
    cm, rm = _bounding_circle(mask_pts)
    if rm <= 0.0:
        rm = s / 2.0
    scale = rt / rm if rm > 0.0 else 1.0

    t = record.pose.translation
    tz = scale * t[2]
    tx = scale * t[0] + tz * (cm[0] - ct[0]) / K_virtual.fx
    ty = scale * t[1] + tz * (cm[1] - ct[1]) / K_virtual.fy
    return Pose(record.pose.rotation, np.array([tx, ty, tz]))
