"""Ranking templates for a query crop by bag-of-words cosine similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GlobalDescriptorsAbsent, NoValidPatches
from .features import FeatureGrid
from .onboarding import ObjectRepresentation, _valid_patches, compute_bow, \
    pca_project


@dataclass(frozen=True)
class RetrievalResult:
    """Templates ranked by similarity, best first."""

    ranked: list   # [(template_id, similarity)]
    h: int


def query_bow(crop_grid: FeatureGrid, crop_mask: np.ndarray,
              rep: ObjectRepresentation) -> np.ndarray:
    """BoW vector of a query crop from its masked patches.

    Patches whose center falls outside the mask are excluded, mirroring
    template validity during onboarding.
    """
    valid = _valid_patches((crop_grid.grid_h, crop_grid.grid_w),
                           crop_grid.patch_size, crop_mask)
    if not valid:
        raise NoValidPatches("no patch center inside the query mask")
    raw = np.array([crop_grid.data[i, j] for i, j in valid])
    reduced = pca_project(rep.pca, raw)
    return compute_bow(reduced, rep.codebook, rep.idf,
                       rep.config["soft_assign_k"],
                       rep.config["soft_assign_sigma"])


def _cosine_rank(query: np.ndarray, vectors: np.ndarray, ids, h: int):
    qn = np.linalg.norm(query)
    vn = np.linalg.norm(vectors, axis=1)
    sims = np.zeros(len(vectors))
    ok = (vn > 0.0)
    if qn > 0.0:
        sims[ok] = (vectors[ok] @ query) / (vn[ok] * qn)
    # sort by similarity desc, ties by lower template_id
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    top = order[:min(h, len(ids))]
    return [(int(ids[i]), float(sims[i])) for i in top]


def retrieve(query: np.ndarray, rep: ObjectRepresentation, h: int) -> RetrievalResult:
    """Top-h templates by cosine similarity of BoW vectors."""
    if h < 1:
        raise ValueError("h must be >= 1")
    vectors = np.array([t.bow for t in rep.templates])
    ids = [t.template_id for t in rep.templates]
    return RetrievalResult(ranked=_cosine_rank(np.asarray(query), vectors, ids, h),
                           h=h)


def retrieve_by_global(query_global: np.ndarray, rep: ObjectRepresentation,
                       h: int) -> RetrievalResult:
    """Cosine ranking over whole-image descriptors (ablation path)."""
    if h < 1:
        raise ValueError("h must be >= 1")
    if any(t.global_desc is None for t in rep.templates):
        raise GlobalDescriptorsAbsent(
            "representation was onboarded without global descriptors")
    vectors = np.array([t.global_desc for t in rep.templates])
    ids = [t.template_id for t in rep.templates]
    return RetrievalResult(
        ranked=_cosine_rank(np.asarray(query_global), vectors, ids, h), h=h)
