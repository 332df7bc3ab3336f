"""End-to-end inference: mask to object pose in the original camera frame.

Stages: virtual pinhole crop, feature extraction, template retrieval,
coarse PnP-RANSAC pose, featuremetric refinement, back-transform. Every
stage failure is wrapped with its stage name so batch callers can report
where an input died.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BowposeError, PipelineStageError
from .features import extract_grid, read_feature_file
from .geometry import (CameraIntrinsics, Pose, build_virtual_crop, mask_bbox,
                       pose_to_original, warp_image, warp_mask)
from .onboarding import ObjectRepresentation
from .pose_estimation import estimate_hypotheses
from .refinement import (RefinementConfig, build_query_map,
                         featuremetric_cost, refine)


@dataclass(frozen=True)
class DetectionInput:
    """One detected instance: image, intrinsics, identity, binary mask."""

    image: np.ndarray
    K: CameraIntrinsics
    object_id: str
    mask: np.ndarray
    instance_count: int = 1

    def __post_init__(self):
        if self.mask.shape[:2] != self.image.shape[:2]:
            raise ValueError("mask size differs from image size")


@dataclass(frozen=True)
class EstimateOptions:
    h: int = 5
    ransac_iters: int = 400
    inlier_threshold_px: float = 10.0
    refine: bool = True
    refine_config: RefinementConfig = field(default_factory=RefinementConfig)
    top_hypotheses: int = 1
    seed: int = 0


@dataclass(frozen=True)
class PoseEstimate:
    object_id: str
    pose: Pose                   # original camera frame
    coarse_pose: Pose            # original camera frame, before refinement
    inlier_count: int
    template_id: int
    refinement_cost_initial: float = None
    refinement_cost_final: float = None
    timings_ms: dict = field(default_factory=dict)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except BowposeError as exc:
        raise PipelineStageError(name, exc) from exc


def estimate_pose(inp: DetectionInput, rep: ObjectRepresentation,
                  feature_source, options: EstimateOptions = EstimateOptions()
                  ) -> PoseEstimate:
    """Full pipeline for one detection.

    feature_source is either a descriptor backend (extract method) or a
    path to a precomputed FPFT file for the crop.
    """
    if rep.object_id != inp.object_id:
        raise ValueError(
            f"representation is for {rep.object_id!r}, input {inp.object_id!r}")
    timings = {}
    t_total = time.perf_counter()

    t0 = time.perf_counter()
    S = int(rep.config["crop_size"])
    delta = float(rep.config["delta"])
    bbox = _stage("crop", mask_bbox, inp.mask)
    crop = _stage("crop", build_virtual_crop, inp.K, bbox, S, delta)
    crop_image = _stage("crop", warp_image, inp.image, crop)
    crop_mask = _stage("crop", warp_mask, inp.mask, crop)
    timings["crop"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    if isinstance(feature_source, (str, Path)):
        crop_grid = _stage("features", read_feature_file, feature_source)
        if crop_grid.data.shape[:2] != (S // crop_grid.patch_size,) * 2:
            raise PipelineStageError("features", ValueError(
                f"feature file grid {crop_grid.data.shape[:2]} does not "
                f"cover a {S}x{S} crop"))
    else:
        crop_grid = _stage("features", extract_grid, feature_source, crop_image)
    timings["features"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    hyps = _stage("coarse", estimate_hypotheses, crop_grid, crop_mask, rep,
                  options.h, crop.virtual_intrinsics, seed=options.seed,
                  max_iters=options.ransac_iters,
                  inlier_threshold_px=options.inlier_threshold_px)
    timings["coarse"] = (time.perf_counter() - t0) * 1e3

    best = hyps[0]
    pose_virtual = best.pose
    cost_initial = cost_final = None
    if options.refine:
        t0 = time.perf_counter()
        fmap = _stage("refinement", build_query_map, crop_grid, rep.pca)
        by_id = {t.template_id: t for t in rep.templates}
        chosen = None
        for hyp in hyps[:max(1, options.top_hypotheses)]:
            record = by_id[hyp.template_id]
            ci = featuremetric_cost(hyp.pose, record, fmap,
                                    crop.virtual_intrinsics,
                                    options.refine_config)
            refined = _stage("refinement", refine, hyp.pose, record, fmap,
                             crop.virtual_intrinsics, options.refine_config)
            cf = featuremetric_cost(refined, record, fmap,
                                    crop.virtual_intrinsics,
                                    options.refine_config)
            if chosen is None or cf < chosen[2]:
                chosen = (hyp, refined, cf, ci)
        best, pose_virtual, cost_final, cost_initial = chosen
        timings["refinement"] = (time.perf_counter() - t0) * 1e3

    pose = _stage("output", pose_to_original, pose_virtual, crop)
    coarse = _stage("output", pose_to_original, best.pose, crop)
    timings["total"] = (time.perf_counter() - t_total) * 1e3
    return PoseEstimate(object_id=inp.object_id, pose=pose, coarse_pose=coarse,
                        inlier_count=best.inlier_count,
                        template_id=best.template_id,
                        refinement_cost_initial=cost_initial,
                        refinement_cost_final=cost_final, timings_ms=timings)


@dataclass(frozen=True)
class BatchItem:
    """Outcome of one batch element: an estimate or a stage-labeled error."""

    index: int
    estimate: PoseEstimate = None
    error: Exception = None

    @property
    def ok(self) -> bool:
        return self.estimate is not None


def estimate_batch(inputs: list, reps: dict, feature_sources,
                   options: EstimateOptions = EstimateOptions(),
                   threads: int = 1) -> list:
    """Independent estimation per input; results in input order.

    reps maps object_id to its ObjectRepresentation. feature_sources is a
    single backend shared by all inputs or a list parallel to inputs.
    Parallel execution changes no output (all per-item work is pure).
    """
    if isinstance(feature_sources, (list, tuple)):
        sources = list(feature_sources)
        if len(sources) != len(inputs):
            raise ValueError("feature_sources list must match inputs")
    else:
        sources = [feature_sources] * len(inputs)

    def run(i):
        inp = inputs[i]
        try:
            rep = reps[inp.object_id]
            return BatchItem(index=i, estimate=estimate_pose(
                inp, rep, sources[i], options))
        except Exception as exc:
            return BatchItem(index=i, error=exc)

    if threads <= 1:
        return [run(i) for i in range(len(inputs))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(inputs))))
