"""Building the minimal object representation.

The representation stores, per object: a PCA projection for descriptor
reduction, a visual-word codebook with idf statistics, and one record per
template holding reduced descriptors registered to 3D model points plus a
tf-idf bag-of-words vector. No template rasters are persisted.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (DimMismatch, EmptyDescriptorSet, NoValidPatches,
                     RankDeficient, TooFewSamples, TruncatedFile,
                     UnsupportedVersion)
from .features import FeatureGrid, GradientBackend, extract_grid, read_feature_file, \
    write_feature_file
from .geometry import CameraIntrinsics, Pose
from .rendering import Mesh, TemplateImage, backproject, render_template, \
    sample_rotations

ARCHIVE_VERSION = 1
_PCA_SUBSAMPLE = 200_000


@dataclass(frozen=True)
class PcaModel:
    """Projection from raw descriptors (dim r) to reduced ones (dim d)."""

    mean: np.ndarray    # (r,)
    basis: np.ndarray   # (d, r), rows orthonormal

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class Codebook:
    """Visual words: k-means centroids in reduced descriptor space."""

    centroids: np.ndarray   # (k, d)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class IdfStats:
    """Per-word template presence counts over the N onboarding templates."""

    word_doc_counts: np.ndarray   # (k,) int
    template_count: int


@dataclass(frozen=True)
class TemplateRecord:
    """One template: reduced descriptors registered in 3D plus its BoW vector."""

    template_id: int
    pose: Pose
    intrinsics: CameraIntrinsics
    descriptors: np.ndarray     # (m, d)
    points3d: np.ndarray        # (m, 3) model-space mm
    patch_centers: np.ndarray   # (m, 2) crop px
    bow: np.ndarray             # (k,)
    global_desc: np.ndarray = None


@dataclass(frozen=True)
class ObjectRepresentation:
    """Everything needed at inference for one object; immutable."""

    object_id: str
    config: dict
    pca: PcaModel
    codebook: Codebook
    idf: IdfStats
    templates: list
    diameter: float


@dataclass(frozen=True)
class OnboardConfig:
    """Onboarding parameters (defaults follow the pipeline's standard setup)."""

    object_id: str = "object"
    n_templates: int = 800
    crop_size: int = 420
    delta: float = 0.6
    patch_size: int = 14
    pca_dim: int = 256
    codebook_size: int = 2048
    soft_assign_k: int = 3
    soft_assign_sigma: float = 10.0
    seed: int = 0


# --- PCA ---

def fit_pca(descriptors: np.ndarray, d: int, seed: int = 0) -> PcaModel:
    """Principal directions of the sample covariance, ordered by variance.

    Subsamples to at most 200k rows (seeded) to bound memory. Sign convention:
    the largest-magnitude coefficient of each basis row is positive.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("descriptors must be 2D")
    if X.shape[0] > _PCA_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], _PCA_SUBSAMPLE, replace=False)]
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / max(len(X) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if d > X.shape[1] or evals[d - 1] <= max(evals[0], 1.0) * 1e-12:
        raise RankDeficient(f"requested {d} components, data supports fewer")
    basis = evecs[:, :d].T.copy()
    for i in range(d):
        j = np.argmax(np.abs(basis[i]))
        if basis[i, j] < 0:
            basis[i] = -basis[i]
    return PcaModel(mean=mean, basis=basis)


def pca_project(model: PcaModel, raw: np.ndarray) -> np.ndarray:
    """basis @ (raw - mean); raw may be a single vector or (N, r)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != model.input_dim:
        raise DimMismatch(f"raw dim {raw.shape[-1]} != {model.input_dim}")
    return (raw - model.mean) @ model.basis.T


def pca_explained_variances(descriptors: np.ndarray, d: int) -> np.ndarray:
    """Top-d eigenvalues of the sample covariance (diagnostic helper)."""
    X = np.asarray(descriptors, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / max(len(X) - 1, 1)
    evals = np.linalg.eigh(cov)[0]
    return np.sort(evals)[::-1][:d]


# --- codebook ---

def fit_codebook(descriptors: np.ndarray, k: int, seed: int = 0,
                 max_iters: int = 100, tol: float = 1e-6) -> Codebook:
    """Lloyd k-means with k-means++ seeding; deterministic given the seed.

    Empty clusters are re-seeded to the point currently farthest from its
    assigned centroid.
    """
    X = np.ascontiguousarray(descriptors, dtype=np.float64)
    if X.shape[0] < k:
        raise TooFewSamples(f"{X.shape[0]} samples < k={k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)
    for _ in range(max_iters):
        assign, dist = kernels.nn_match(X, centroids)
        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        np.add.at(new_centroids, assign, X)
        nonempty = counts > 0
        new_centroids[nonempty] /= counts[nonempty, None]
        for ci in np.nonzero(~nonempty)[0]:
            far = int(np.argmax(dist))
            new_centroids[ci] = X[far]
            dist = dist.copy()
            dist[far] = 0.0
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if shift < tol:
            break
    return Codebook(centroids=centroids)


def _kmeans_pp_init(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[i:] = X[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centroids[i] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((X - centroids[i]) ** 2, axis=1))
    return centroids


# --- bag of words ---

def soft_assign(descriptor: np.ndarray, codebook: Codebook, soft_k: int,
                sigma: float):
    """soft_k nearest words with Gaussian distance weights exp(-d^2/2s^2)."""
    idx, dist = kernels.assign_topk(
        np.ascontiguousarray(descriptor, dtype=np.float64).reshape(1, -1),
        codebook.centroids, soft_k)
    weights = np.exp(-dist[0] ** 2 / (2.0 * sigma ** 2))
    return list(zip(idx[0].tolist(), weights.tolist()))


def _soft_assign_batch(descriptors, codebook, soft_k, sigma):
    idx, dist = kernels.assign_topk(
        np.ascontiguousarray(descriptors, dtype=np.float64),
        codebook.centroids, soft_k)
    return idx, np.exp(-dist ** 2 / (2.0 * sigma ** 2))


def compute_bow(descriptors: np.ndarray, codebook: Codebook, idf: IdfStats,
                soft_k: int, sigma: float) -> np.ndarray:
    """tf-idf word-frequency vector over soft word assignments, L2-normalized.

    b_i = (n_it / n_t) * ln(N / n_i), with b_i = 0 for words never seen during
    onboarding (n_i = 0).
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[0] == 0:
        raise EmptyDescriptorSet("no descriptors to encode")
    k = codebook.k
    idx, w = _soft_assign_batch(descriptors, codebook, soft_k, sigma)
    tf = np.zeros(k)
    np.add.at(tf, idx.ravel(), w.ravel())
    total = tf.sum()
    if total <= 0.0:
        return np.zeros(k)
    counts = idf.word_doc_counts
    log_idf = np.zeros(k)
    seen = counts > 0
    log_idf[seen] = np.log(idf.template_count / counts[seen])
    bow = (tf / total) * log_idf
    norm = np.linalg.norm(bow)
    return bow / norm if norm > 0.0 else bow


# --- per-template records ---

def _valid_patches(grid_shape, patch_size, mask, depth=None):
    """Row-major (row, col) indices of patches whose center pixel is inside the
    mask (and, when depth is given, has foreground depth)."""
    gh, gw = grid_shape
    s = patch_size
    out = []
    for i in range(gh):
        for j in range(gw):
            cy = i * s + s // 2
            cx = j * s + s // 2
            if mask[cy, cx] == 0:
                continue
            if depth is not None and depth[cy, cx] <= 0.0:
                continue
            out.append((i, j))
    return out


def build_template_record(template: TemplateImage, raw_grid: FeatureGrid,
                          pca: PcaModel, codebook: Codebook, idf: IdfStats,
                          soft_k: int, sigma: float) -> TemplateRecord:
    """Reduce valid patches, register them in 3D, and compute the BoW vector."""
    valid = _valid_patches((raw_grid.grid_h, raw_grid.grid_w),
                           raw_grid.patch_size, template.mask, template.depth)
    if not valid:
        raise NoValidPatches(f"template {template.template_id}: object too small")
    s = raw_grid.patch_size
    raw = np.array([raw_grid.data[i, j] for i, j in valid])
    centers = np.array([[(j + 0.5) * s, (i + 0.5) * s] for i, j in valid])
    points = np.array([
        backproject(c, template.depth[int(c[1]), int(c[0])],
                    template.intrinsics, template.pose)
        for c in centers
    ])
    reduced = pca_project(pca, raw)
    bow = compute_bow(reduced, codebook, idf, soft_k, sigma)
    return TemplateRecord(template_id=template.template_id, pose=template.pose,
                          intrinsics=template.intrinsics, descriptors=reduced,
                          points3d=points, patch_centers=centers, bow=bow,
                          global_desc=raw_grid.global_desc)


# --- orchestration ---

def onboard_object(mesh: Mesh, config: OnboardConfig, backend=None,
                   features_dir=None, template_sink=None) -> ObjectRepresentation:
    """Render templates, fit PCA + codebook + idf, and build all records.

    Feature grids come from `backend` (default: the built-in gradient backend)
    or, when `features_dir` is given, from files named template_<id>.fpft in
    that directory. `template_sink(template)` is called per rendered template
    (used by the CLI to dump debug renders).
    """
    cfg = config
    if backend is None:
        backend = GradientBackend(cfg.patch_size)
    rotations = sample_rotations(cfg.n_templates, cfg.seed)

    templates = []
    raw_grids = []
    for tid in range(cfg.n_templates):
        tpl = render_template(mesh, rotations[tid], cfg.crop_size, cfg.delta, tid)
        if template_sink is not None:
            template_sink(tpl)
        if features_dir is not None:
            grid = read_feature_file(Path(features_dir) / f"template_{tid}.fpft")
            expected = cfg.crop_size // grid.patch_size
            if grid.grid_h != expected or grid.grid_w != expected:
                raise DimMismatch(
                    f"template_{tid}.fpft grid {grid.grid_h}x{grid.grid_w}, "
                    f"expected {expected}x{expected}")
        else:
            grid = extract_grid(backend, tpl.rgb)
        templates.append(tpl)
        raw_grids.append(grid)

    patch_size = raw_grids[0].patch_size
    valid_lists = [
        _valid_patches((g.grid_h, g.grid_w), g.patch_size, t.mask, t.depth)
        for g, t in zip(raw_grids, templates)
    ]
    all_raw = np.concatenate([
        np.array([g.data[i, j] for i, j in valid]) if valid else
        np.empty((0, g.dim))
        for g, valid in zip(raw_grids, valid_lists)
    ])
    if all_raw.shape[0] == 0:
        raise NoValidPatches("no valid patches in any template")

    d = cfg.pca_dim
    pca = fit_pca(all_raw, d, seed=cfg.seed)
    all_reduced = pca_project(pca, all_raw)
    codebook = fit_codebook(all_reduced, cfg.codebook_size, seed=cfg.seed)

    # idf: a template contains word i if any of its descriptors has word i
    # among its soft_k nearest
    counts = np.zeros(cfg.codebook_size, dtype=np.int64)
    per_template_reduced = []
    offset = 0
    for valid in valid_lists:
        m = len(valid)
        per_template_reduced.append(all_reduced[offset:offset + m])
        offset += m
    for reduced in per_template_reduced:
        if len(reduced) == 0:
            continue
        idx, _ = kernels.assign_topk(np.ascontiguousarray(reduced),
                                     codebook.centroids, cfg.soft_assign_k)
        counts[np.unique(idx)] += 1
    idf = IdfStats(word_doc_counts=counts, template_count=cfg.n_templates)

    records = []
    for tpl, grid in zip(templates, raw_grids):
        records.append(build_template_record(tpl, grid, pca, codebook, idf,
                                             cfg.soft_assign_k,
                                             cfg.soft_assign_sigma))

    config_snapshot = {
        "object_id": cfg.object_id,
        "n_templates": cfg.n_templates,
        "crop_size": cfg.crop_size,
        "delta": cfg.delta,
        "pca_dim": d,
        "codebook_size": cfg.codebook_size,
        "soft_assign_k": cfg.soft_assign_k,
        "soft_assign_sigma": cfg.soft_assign_sigma,
        "seed": cfg.seed,
        "backend_name": "fpft_files" if features_dir is not None else backend.name,
        "backend_dim": raw_grids[0].dim,
        "backend_patch_size": patch_size,
    }
    return ObjectRepresentation(object_id=cfg.object_id, config=config_snapshot,
                                pca=pca, codebook=codebook, idf=idf,
                                templates=records, diameter=mesh.diameter)


# --- serialization ---

def save_representation(rep: ObjectRepresentation, path) -> None:
    """Write the representation archive (manifest.json, pca.fpft,
    codebook.fpft, idf.json, templates.bin)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    manifest = dict(rep.config)
    manifest["format_version"] = ARCHIVE_VERSION
    manifest["diameter"] = rep.diameter
    (path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1))

    pca_rows = np.vstack([rep.pca.mean[None, :], rep.pca.basis])
    write_feature_file(FeatureGrid(data=pca_rows[:, None, :], patch_size=1),
                       path / "pca.fpft")
    write_feature_file(
        FeatureGrid(data=rep.codebook.centroids[:, None, :], patch_size=1),
        path / "codebook.fpft")
    (path / "idf.json").write_text(json.dumps({
        "word_doc_counts": rep.idf.word_doc_counts.tolist(),
        "template_count": rep.idf.template_count,
    }, sort_keys=True))

    with open(path / "templates.bin", "wb") as f:
        for rec in rep.templates:
            f.write(struct.pack("<I", rec.template_id))
            pose_vals = np.concatenate([rec.pose.rotation.ravel(),
                                        rec.pose.translation])
            f.write(pose_vals.astype("<f4").tobytes())
            K = rec.intrinsics
            f.write(np.array([K.fx, K.fy, K.cx, K.cy], dtype="<f4").tobytes())
            m = len(rec.descriptors)
            f.write(struct.pack("<I", m))
            block = np.hstack([rec.descriptors, rec.points3d, rec.patch_centers])
            f.write(block.astype("<f4").tobytes())
            f.write(rec.bow.astype("<f4").tobytes())

    globals_present = [r.global_desc for r in rep.templates
                       if r.global_desc is not None]
    if len(globals_present) == len(rep.templates) and globals_present:
        with open(path / "globals.bin", "wb") as f:
            for rec in rep.templates:
                g = np.asarray(rec.global_desc, dtype="<f4")
                f.write(struct.pack("<I", g.size))
                f.write(g.tobytes())


def load_representation(path) -> ObjectRepresentation:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != ARCHIVE_VERSION:
        raise UnsupportedVersion(
            f"archive version {manifest.get('format_version')}")

    pca_rows = read_feature_file(path / "pca.fpft").data[:, 0, :]
    pca = PcaModel(mean=pca_rows[0], basis=pca_rows[1:])
    codebook = Codebook(
        centroids=read_feature_file(path / "codebook.fpft").data[:, 0, :])
    idf_raw = json.loads((path / "idf.json").read_text())
    idf = IdfStats(word_doc_counts=np.array(idf_raw["word_doc_counts"],
                                            dtype=np.int64),
                   template_count=int(idf_raw["template_count"]))

    n = manifest["n_templates"]
    d = manifest["pca_dim"]
    k = manifest["codebook_size"]
    S = manifest["crop_size"]
    raw = (path / "templates.bin").read_bytes()
    globals_path = path / "globals.bin"
    graw = globals_path.read_bytes() if globals_path.exists() else None
    goff = 0

    records = []
    off = 0
    for _ in range(n):
        try:
            (tid,) = struct.unpack_from("<I", raw, off)
            off += 4
            pose_vals = np.frombuffer(raw, dtype="<f4", count=12, offset=off)
            off += 48
            R = _orthonormalize(pose_vals[:9].reshape(3, 3).astype(np.float64))
            pose = Pose(R, pose_vals[9:].astype(np.float64))
            kvals = np.frombuffer(raw, dtype="<f4", count=4, offset=off)
            off += 16
            K = CameraIntrinsics(fx=float(kvals[0]), fy=float(kvals[1]),
                                 cx=float(kvals[2]), cy=float(kvals[3]),
                                 width=S, height=S)
            (m,) = struct.unpack_from("<I", raw, off)
            off += 4
            block = np.frombuffer(raw, dtype="<f4", count=m * (d + 5),
                                  offset=off).reshape(m, d + 5).astype(np.float64)
            off += m * (d + 5) * 4
            bow = np.frombuffer(raw, dtype="<f4", count=k,
                                offset=off).astype(np.float64)
            off += k * 4
        except (struct.error, ValueError) as exc:
            raise TruncatedFile(f"templates.bin: {exc}") from None
        global_desc = None
        if graw is not None:
            (gdim,) = struct.unpack_from("<I", graw, goff)
            goff += 4
            global_desc = np.frombuffer(graw, dtype="<f4", count=gdim,
                                        offset=goff).astype(np.float64)
            goff += gdim * 4
        records.append(TemplateRecord(
            template_id=tid, pose=pose, intrinsics=K,
            descriptors=block[:, :d], points3d=block[:, d:d + 3],
            patch_centers=block[:, d + 3:], bow=bow, global_desc=global_desc))
    if off != len(raw):
        raise TruncatedFile(
            f"templates.bin: {len(raw)} bytes, parsed {off}")

    config = {key: manifest[key] for key in manifest
              if key not in ("format_version", "diameter")}
    return ObjectRepresentation(object_id=manifest["object_id"], config=config,
                                pca=pca, codebook=codebook, idf=idf,
                                templates=records, diameter=manifest["diameter"])


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (poses survive the f32 round trip)."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out


def representation_digest(path) -> str:
    """SHA-256 over all archive files (determinism checks)."""
    h = hashlib.sha256()
    for f in sorted(Path(path).iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()
