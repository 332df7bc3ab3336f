"""Pose-error functions (VSD, MSSD, MSPD) and Average Recall reporting.

Error definitions and threshold grids follow the BOP challenge protocol:
symmetry-aware maximum surface distance in 3D (MSSD) and in the image
(MSPD), and visible surface discrepancy (VSD) over rendered depth maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput
from .geometry import CameraIntrinsics, Pose, project
from .rendering import Mesh, render_depth

# BOP 2019-2023 threshold grids
VSD_TAUS = [0.05 * i for i in range(1, 11)]        # fractions of diameter
VSD_THETAS = [0.05 * i for i in range(1, 11)]      # error-fraction thresholds
MSSD_THETAS = [0.05 * i for i in range(1, 11)]     # fractions of diameter
MSPD_THETAS = [5.0 * i for i in range(1, 11)]      # pixels, times width/640


@dataclass(frozen=True)
class SymmetrySet:
    """Rigid model-space transforms under which the object looks identical.

    Always contains the identity; continuous axes are discretized before
    construction.
    """

    transforms: list = field(default_factory=lambda: [Pose.identity()])

    def __post_init__(self):
        if not any(np.allclose(s.rotation, np.eye(3)) and
                   np.allclose(s.translation, 0.0) for s in self.transforms):
            raise ValueError("symmetry set must contain the identity")
        for s in self.transforms:
            if not s.is_valid(1e-6):
                raise ValueError("symmetry transforms must be rigid")


@dataclass(frozen=True)
class GroundTruthAnnotation:
    image_id: int
    object_id: str
    pose_gt: Pose
    K: CameraIntrinsics
    visibility: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")


@dataclass(frozen=True)
class ARReport:
    recall_vsd: list      # 10x10 grid, [tau_index][theta_index]
    recall_mssd: list     # 10 values
    recall_mspd: list     # 10 values
    ar_vsd: float
    ar_mssd: float
    ar_mspd: float
    ar: float


def _subsample(mesh: Mesh, max_vertices, seed: int) -> np.ndarray:
    v = mesh.vertices
    if max_vertices is None or len(v) <= max_vertices:
        return v
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(v), size=max_vertices, replace=False)
    return v[np.sort(idx)]


def mssd(pose_est: Pose, pose_gt: Pose, mesh: Mesh,
         sym: SymmetrySet = SymmetrySet(),
         max_vertices=None, seed: int = 0) -> float:
    """Maximum symmetry-aware surface distance, millimeters."""
    verts = _subsample(mesh, max_vertices, seed)
    est = pose_est.apply(verts)
    best = np.inf
    for s in sym.transforms:
        gt = pose_gt.apply(s.apply(verts))
        best = min(best, float(np.linalg.norm(est - gt, axis=1).max()))
    return best


def mspd(pose_est: Pose, pose_gt: Pose, mesh: Mesh,
         sym: SymmetrySet, K: CameraIntrinsics,
         max_vertices=None, seed: int = 0) -> float:
    """Maximum symmetry-aware projection distance, pixels."""
    verts = _subsample(mesh, max_vertices, seed)
    est = project(verts, pose_est, K)
    best = np.inf
    for s in sym.transforms:
        gt = project(s.apply(verts), pose_gt, K)
        best = min(best, float(np.linalg.norm(est - gt, axis=1).max()))
    return best


def vsd(pose_est: Pose, pose_gt: Pose, mesh: Mesh, K: CameraIntrinsics,
        tau: float, scene_depth: np.ndarray = None) -> float:
    """Visible surface discrepancy in [0, 1]; tau is the depth tolerance (mm).

    Without a scene depth raster, visibility masks are the full rendered
    silhouettes (a stated approximation of occlusion-aware visibility).
    """
    d_est = render_depth(mesh, pose_est, K)
    d_gt = render_depth(mesh, pose_gt, K)
    m_est = d_est > 0.0
    m_gt = d_gt > 0.0
    if scene_depth is not None:
        scene = np.asarray(scene_depth, dtype=np.float64)
        vis = scene > 0.0
        m_est &= (d_est <= scene + tau) | ~vis
        m_gt &= (d_gt <= scene + tau) | ~vis
    union = m_est | m_gt
    n_union = int(union.sum())
    if n_union == 0:
        return 0.0
    both = m_est & m_gt
    mismatch = union & ~both
    far = both & (np.abs(d_est - d_gt) > tau)
    return float((mismatch.sum() + far.sum()) / n_union)


def instance_errors(pose_est: Pose, gt: GroundTruthAnnotation, mesh: Mesh,
                    sym: SymmetrySet = SymmetrySet(),
                    scene_depth: np.ndarray = None,
                    max_vertices=None, seed: int = 0) -> dict:
    """All three error values for one instance, VSD over the full tau grid."""
    return {
        "object_id": gt.object_id,
        "image_id": gt.image_id,
        "vsd": [vsd(pose_est, gt.pose_gt, mesh, gt.K, tau=f * mesh.diameter,
                    scene_depth=scene_depth) for f in VSD_TAUS],
        "mssd": mssd(pose_est, gt.pose_gt, mesh, sym, max_vertices, seed),
        "mspd": mspd(pose_est, gt.pose_gt, mesh, sym, gt.K,
                     max_vertices, seed),
    }


def average_recall(errors: list, diameters: dict, image_width: int) -> ARReport:
    """BOP-style Average Recall from per-instance error records.

    errors: dicts with keys object_id, vsd (list over VSD_TAUS), mssd, mspd.
    diameters: object_id -> mesh diameter in mm.
    """
    if not errors:
        raise EmptyInput("no error records")
    n = len(errors)
    diam = np.array([diameters[e["object_id"]] for e in errors])

    vsd_grid = []
    for ti in range(len(VSD_TAUS)):
        errs = np.array([e["vsd"][ti] for e in errors])
        vsd_grid.append([float((errs < th).sum() / n) for th in VSD_THETAS])

    mssd_errs = np.array([e["mssd"] for e in errors])
    mssd_rec = [float((mssd_errs < f * diam).sum() / n) for f in MSSD_THETAS]

    r = image_width / 640.0
    mspd_errs = np.array([e["mspd"] for e in errors])
    mspd_rec = [float((mspd_errs < th * r).sum() / n) for th in MSPD_THETAS]

    ar_vsd = float(np.mean(vsd_grid))
    ar_mssd = float(np.mean(mssd_rec))
    ar_mspd = float(np.mean(mspd_rec))
    return ARReport(recall_vsd=vsd_grid, recall_mssd=mssd_rec,
                    recall_mspd=mspd_rec, ar_vsd=ar_vsd, ar_mssd=ar_mssd,
                    ar_mspd=ar_mspd,
                    ar=(ar_vsd + ar_mssd + ar_mspd) / 3.0)


# --- file formats ---

def load_ground_truth(path) -> list:
    """JSON list of {image_id, object_id, R, t, K, visibility}."""
    with open(path) as f:
        raw = json.load(f)
    out = []
    for rec in raw:
        R = np.array(rec["R"], dtype=np.float64).reshape(3, 3)
        t = np.array(rec["t"], dtype=np.float64)
        out.append(GroundTruthAnnotation(
            image_id=int(rec["image_id"]), object_id=str(rec["object_id"]),
            pose_gt=Pose(R, t), K=CameraIntrinsics.from_json(rec["K"]),
            visibility=float(rec.get("visibility", 1.0))))
    return out


def save_ground_truth(gts: list, path) -> None:
    raw = [{"image_id": g.image_id, "object_id": g.object_id,
            "R": [float(v) for v in g.pose_gt.rotation.ravel()],
            "t": [float(v) for v in g.pose_gt.translation],
            "K": g.K.to_json(), "visibility": g.visibility} for g in gts]
    with open(path, "w") as f:
        json.dump(raw, f, indent=1)


def load_symmetries(path, continuous_steps: int = 36) -> SymmetrySet:
    """JSON {discrete: [4x4 row-major lists], continuous: [{axis, offset}]}.

    Continuous axes are discretized to continuous_steps rotations each
    (10 degree steps by default). The identity is always included.
    """
    with open(path) as f:
        raw = json.load(f)
    transforms = [Pose.identity()]
    for m in raw.get("discrete", []):
        M = np.array(m, dtype=np.float64).reshape(4, 4)
        pose = Pose(M[:3, :3], M[:3, 3])
        if not _in_set(pose, transforms):
            transforms.append(pose)
    for rec in raw.get("continuous", []):
        axis = np.array(rec["axis"], dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        offset = np.array(rec.get("offset", [0.0, 0.0, 0.0]), dtype=np.float64)
        for k in range(1, continuous_steps):
            ang = 2.0 * np.pi * k / continuous_steps
            R = _axis_angle(axis, ang)
            pose = Pose(R, offset - R @ offset)
            if not _in_set(pose, transforms):
                transforms.append(pose)
    return SymmetrySet(transforms=transforms)


def _in_set(pose: Pose, transforms: list) -> bool:
    return any(np.allclose(pose.rotation, s.rotation, atol=1e-9) and
               np.allclose(pose.translation, s.translation, atol=1e-9)
               for s in transforms)


def _axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def save_report(report: ARReport, path) -> None:
    with open(path, "w") as f:
        json.dump({"recall_vsd": report.recall_vsd,
                   "recall_mssd": report.recall_mssd,
                   "recall_mspd": report.recall_mspd,
                   "ar_vsd": report.ar_vsd, "ar_mssd": report.ar_mssd,
                   "ar_mspd": report.ar_mspd, "ar": report.ar}, f, indent=1)


def load_report(path) -> ARReport:
    with open(path) as f:
        raw = json.load(f)
    return ARReport(recall_vsd=raw["recall_vsd"],
                    recall_mssd=raw["recall_mssd"],
                    recall_mspd=raw["recall_mspd"], ar_vsd=raw["ar_vsd"],
                    ar_mssd=raw["ar_mssd"], ar_mspd=raw["ar_mspd"],
                    ar=raw["ar"])
