"""Camera models, rigid transforms, projection, and the virtual pinhole crop.

The virtual crop warps the query image to a synthetic camera whose optical
axis passes through the center of the detection bounding box, which removes
most perspective distortion before feature extraction. All poses map model
space to camera space; translations are in millimeters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBox, PointBehindCamera

_ROT_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_cam = rotation @ x_model + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform model-space point(s) to camera space. x: (3,) or (N,3)."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply other first, then self."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def is_valid(self, tol: float = _ROT_TOL) -> bool:
        R = self.rotation
        return (np.abs(R @ R.T - np.eye(3)).max() <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; fx, fy, cx, cy in pixels, viewport width x height."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("viewport must be at least 1x1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_json(self) -> str:
        return json.dumps({"fx": self.fx, "fy": self.fy, "cx": self.cx,
                           "cy": self.cy, "width": self.width, "height": self.height})

    @staticmethod
    def from_json(text: str) -> "CameraIntrinsics":
        d = json.loads(text)
        return CameraIntrinsics(fx=float(d["fx"]), fy=float(d["fy"]),
                                cx=float(d["cx"]), cy=float(d["cy"]),
                                width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class VirtualCrop:
    """Virtual pinhole camera looking at the detection, plus the pixel warp.

    homography maps original image pixels to crop pixels and satisfies
    H = K_virtual @ rotation_to_virtual @ K_original^-1 up to scale.
    """

    virtual_intrinsics: CameraIntrinsics
    rotation_to_virtual: np.ndarray
    homography: np.ndarray


def project(x, pose: Pose, K: CameraIntrinsics):
    """Project model-space point(s) to pixels. Raises PointBehindCamera on Z<=0."""
    x = np.asarray(x, dtype=np.float64)
    xc = pose.apply(x)
    z = xc[..., 2]
    if np.any(z <= 0.0):
        raise PointBehindCamera(f"camera-space depth {np.min(z):.3f} <= 0")
    u = K.fx * xc[..., 0] / z + K.cx
    v = K.fy * xc[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def rotation_from_z_to(ray: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the +z axis onto the (normalized) ray."""
    ray = ray / np.linalg.norm(ray)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, ray)
    s = np.linalg.norm(axis)
    c = float(z @ ray)
    if s < 1e-15:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: rotate pi about x (not reachable for rays inside the image)
        return np.diag([1.0, -1.0, -1.0])
    axis = axis / s
    angle = np.arctan2(s, c)
    return _rodrigues(axis * angle)


def _rodrigues(rvec: np.ndarray) -> np.ndarray:
    """Rotation matrix from an axis-angle vector."""
    theta = np.linalg.norm(rvec)
    if theta < 1e-12:
        K = _skew(rvec)
        return np.eye(3) + K + 0.5 * (K @ K)
    k = rvec / theta
    K = _skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def build_virtual_crop(K: CameraIntrinsics, mask_bbox, S: int, delta: float) -> VirtualCrop:
    """Construct the virtual camera for a detection bounding box.

    mask_bbox = (x0, y0, x1, y1) in pixels, x1 > x0 and y1 > y0. The virtual
    optical axis passes through the bbox center and the focal length is chosen
    so the warped bbox's longer side is delta*S pixels.
    """
    x0, y0, x1, y1 = (float(v) for v in mask_bbox)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateBox(f"bbox {mask_bbox} has zero area")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")

    K_inv = np.linalg.inv(K.matrix)
    center_ray = K_inv @ np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, 1.0])
    R_to_virtual = rotation_from_z_to(center_ray).T

    # corners in the unit-focal virtual image plane
    corners = np.array([[x0, y0, 1.0], [x1, y0, 1.0], [x1, y1, 1.0], [x0, y1, 1.0]])
    pv = corners @ (R_to_virtual @ K_inv).T
    xs = pv[:, 0] / pv[:, 2]
    ys = pv[:, 1] / pv[:, 2]
    extent = max(xs.max() - xs.min(), ys.max() - ys.min())
    f = delta * S / extent

    Kv = CameraIntrinsics(fx=f, fy=f, cx=S / 2.0, cy=S / 2.0, width=S, height=S)
    H = Kv.matrix @ R_to_virtual @ K_inv
    return VirtualCrop(virtual_intrinsics=Kv, rotation_to_virtual=R_to_virtual,
                       homography=H)


def warp_image(image: np.ndarray, crop: VirtualCrop) -> np.ndarray:
    """Warp an RGB image into the SxS crop with bilinear sampling.

    Output pixels that fall outside the source are black.
    """
    S = crop.virtual_intrinsics.width
    h_inv = np.linalg.inv(crop.homography)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return kernels.warp_bilinear(np.ascontiguousarray(img), h_inv, S, S)


def warp_mask(mask: np.ndarray, crop: VirtualCrop) -> np.ndarray:
    """Warp a binary mask into the SxS crop with nearest-neighbor sampling."""
    S = crop.virtual_intrinsics.width
    h_inv = np.linalg.inv(crop.homography)
    m = np.ascontiguousarray(mask.astype(np.uint8))
    return kernels.warp_nearest(m, h_inv, S, S)


def pose_to_virtual(pose: Pose, crop: VirtualCrop) -> Pose:
    """Express an original-camera pose in the virtual camera frame."""
    R = crop.rotation_to_virtual
    return Pose(R @ pose.rotation, R @ pose.translation)


def pose_to_original(pose_virtual: Pose, crop: VirtualCrop) -> Pose:
    """Map a pose estimated in the virtual camera back to the original camera."""
    R = crop.rotation_to_virtual
    return Pose(R.T @ pose_virtual.rotation, R.T @ pose_virtual.translation)


def mask_bbox(mask: np.ndarray):
    """Axis-aligned bounding box (x0, y0, x1, y1) of the nonzero mask pixels.

    Edges are in continuous pixel coordinates (x1/y1 exclusive). Raises
    DegenerateBox on an empty mask.
    """
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise DegenerateBox("empty mask")
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
