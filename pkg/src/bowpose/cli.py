"""Command-line interface: onboard, estimate, evaluate, visualize.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 pipeline
error. Flags override values from --config files; the defaults encode the
standard full-scale parameters.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import BowposeError, ConfigError, DimMismatch, PipelineStageError
from .evaluation import (ARReport, average_recall, instance_errors,
                         load_ground_truth, load_symmetries, save_report,
                         SymmetrySet)
from .features import GradientBackend
from .geometry import CameraIntrinsics, Pose
from .onboarding import OnboardConfig, load_representation, onboard_object, \
    save_representation
from .pipeline import DetectionInput, EstimateOptions, estimate_pose
from .refinement import RefinementConfig
from .rendering import load_mesh, render_depth


@dataclass(frozen=True)
class RunConfig:
    """All pipeline parameters; defaults are the full-scale standard setup."""

    n_templates: int = 800
    crop_size: int = 420
    delta: float = 0.6
    patch_size: int = 14
    pca_dim: int = 256
    codebook_size: int = 2048
    soft_assign_k: int = 3
    soft_assign_sigma: float = 10.0
    h: int = 5
    ransac_iters: int = 400
    inlier_threshold_px: float = 10.0
    refine_iters: int = 30
    barron_alpha: float = -5.0
    barron_c: float = 0.5
    seed: int = 0
    threads: int = 1


def parse_config_file(path) -> dict:
    """Minimal TOML-style key = value parser (ints, floats, bools, strings)."""
    values = {}
    known = {f.name: f.type for f in fields(RunConfig)}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(val, f"{path}:{lineno}")
    return values


def _parse_value(val: str, where: str):
    if len(val) >= 2 and val[0] == val[-1] and val[0] in "'\"":
        return val[1:-1]
    if val in ("true", "false"):
        return val == "true"
    try:
        return int(val)
    except ValueError:
        pass
    try:
        return float(val)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {val!r}")


def load_run_config(config_path, overrides: dict) -> RunConfig:
    values = {}
    if config_path:
        values.update(parse_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg.n_templates >= 1, "n_templates must be >= 1"),
        (cfg.crop_size >= cfg.patch_size, "crop_size must be >= patch_size"),
        (cfg.crop_size % cfg.patch_size == 0,
         "crop_size must be divisible by patch_size"),
        (0.0 < cfg.delta < 1.0, "delta must be in (0, 1)"),
        (cfg.pca_dim >= 1, "pca_dim must be >= 1"),
        (cfg.codebook_size >= 1, "codebook_size must be >= 1"),
        (cfg.soft_assign_k >= 1, "soft_assign_k must be >= 1"),
        (cfg.soft_assign_sigma > 0.0, "soft_assign_sigma must be > 0"),
        (cfg.h >= 1, "h must be >= 1"),
        (cfg.ransac_iters >= 1, "ransac_iters must be >= 1"),
        (cfg.inlier_threshold_px > 0.0, "inlier_threshold_px must be > 0"),
        (cfg.refine_iters >= 1, "refine_iters must be >= 1"),
        (cfg.barron_c > 0.0, "barron_c must be > 0"),
        (cfg.threads >= 1, "threads must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def _load_image(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _load_mask(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("L")) > 127


def _load_intrinsics(path) -> CameraIntrinsics:
    with open(path) as f:
        return CameraIntrinsics.from_json(f.read())


# --- commands ---

def cmd_onboard(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    mesh = load_mesh(args.mesh)
    backend = None
    pca_dim = cfg.pca_dim
    if args.features_dir is None:
        backend = GradientBackend(cfg.patch_size)
        if pca_dim > backend.dim:
            print(f"warning: pca_dim {pca_dim} clamped to backend "
                  f"dimension {backend.dim}", file=sys.stderr)
            pca_dim = backend.dim
    ocfg = OnboardConfig(
        object_id=Path(args.mesh).stem, n_templates=cfg.n_templates,
        crop_size=cfg.crop_size, delta=cfg.delta, patch_size=cfg.patch_size,
        pca_dim=pca_dim, codebook_size=cfg.codebook_size,
        soft_assign_k=cfg.soft_assign_k,
        soft_assign_sigma=cfg.soft_assign_sigma, seed=cfg.seed)
    t0 = time.perf_counter()
    rep = onboard_object(mesh, ocfg, backend=backend,
                         features_dir=args.features_dir)
    save_representation(rep, args.out)
    print(f"onboarded {rep.object_id}: {len(rep.templates)} templates "
          f"in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_estimate(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    rep = load_representation(args.rep)
    image = _load_image(args.image)
    mask = _load_mask(args.mask)
    K = _load_intrinsics(args.intrinsics)
    if args.feature_file:
        source = args.feature_file
    else:
        source = GradientBackend(int(rep.config["backend_patch_size"]))
    options = EstimateOptions(
        h=cfg.h, ransac_iters=cfg.ransac_iters,
        inlier_threshold_px=cfg.inlier_threshold_px,
        refine=not args.no_refine,
        refine_config=RefinementConfig(max_iters=cfg.refine_iters,
                                       barron_alpha=cfg.barron_alpha,
                                       barron_c=cfg.barron_c),
        top_hypotheses=args.hypotheses, seed=cfg.seed)
    inp = DetectionInput(image=image, K=K, object_id=rep.object_id, mask=mask)
    est = estimate_pose(inp, rep, source, options)
    record = {
        "image_id": args.image_id,
        "object_id": est.object_id,
        "R": [float(v) for v in est.pose.rotation.ravel()],
        "t": [float(v) for v in est.pose.translation],
        "score": est.inlier_count,
    }
    if args.timings:
        record["timings_ms"] = {k: round(v, 3)
                                for k, v in est.timings_ms.items()}
    with open(args.out, "w") as f:
        json.dump(record, f, indent=1)
    print(f"pose written to {args.out} "
          f"(inliers {est.inlier_count}, {est.timings_ms['total']:.0f} ms)")
    return 0


def cmd_evaluate(args) -> int:
    with open(args.results) as f:
        raw = json.load(f)
    results = raw if isinstance(raw, list) else [raw]
    gts = load_ground_truth(args.gt)
    mesh = load_mesh(args.mesh)
    sym = load_symmetries(args.symmetries) if args.symmetries else SymmetrySet()

    by_key = {}
    for rec in results:
        pose = Pose(np.array(rec["R"], dtype=np.float64).reshape(3, 3),
                    np.array(rec["t"], dtype=np.float64))
        by_key[(int(rec.get("image_id", 0)), str(rec["object_id"]))] = pose

    if not gts:
        print("warning: empty ground truth, AR = 0.0", file=sys.stderr)
        _write_zero_report(args.out)
        return 0

    errors = []
    width = gts[0].K.width
    for gt in gts:
        pose = by_key.get((gt.image_id, gt.object_id))
        if pose is None:
            errors.append({"object_id": gt.object_id, "image_id": gt.image_id,
                           "vsd": [np.inf] * 10, "mssd": np.inf,
                           "mspd": np.inf})
        else:
            errors.append(instance_errors(pose, gt, mesh, sym))
    report = average_recall(errors, {gt.object_id: mesh.diameter for gt in gts},
                            width)
    save_report(report, args.out)
    print(f"AR {report.ar:.4f} (VSD {report.ar_vsd:.4f}, "
          f"MSSD {report.ar_mssd:.4f}, MSPD {report.ar_mspd:.4f})")
    return 0


def _write_zero_report(path) -> None:
    zero10 = [0.0] * 10
    save_report(ARReport(recall_vsd=[list(zero10) for _ in range(10)],
                         recall_mssd=list(zero10), recall_mspd=list(zero10),
                         ar_vsd=0.0, ar_mssd=0.0, ar_mspd=0.0, ar=0.0), path)


def cmd_visualize(args) -> int:
    from PIL import Image

    rep = load_representation(args.rep)  # validates the archive
    image = _load_image(args.image)
    mesh = load_mesh(args.mesh)
    K = _load_intrinsics(args.intrinsics)
    with open(args.result) as f:
        rec = json.load(f)
    pose = Pose(np.array(rec["R"], dtype=np.float64).reshape(3, 3),
                np.array(rec["t"], dtype=np.float64))
    depth = render_depth(mesh, pose, K)
    mask = depth > 0.0
    interior = np.zeros_like(mask)
    interior[1:-1, 1:-1] = (mask[1:-1, 1:-1] & mask[:-2, 1:-1]
                            & mask[2:, 1:-1] & mask[1:-1, :-2]
                            & mask[1:-1, 2:])
    contour = mask & ~interior
    overlay = image.copy()
    overlay[contour] = [1.0, 0.0, 0.0]
    Image.fromarray((np.clip(overlay, 0.0, 1.0) * 255).astype(np.uint8)).save(
        args.out)
    print(f"overlay written to {args.out} "
          f"({int(contour.sum())} contour pixels, object {rep.object_id})")
    return 0


def _overrides(args) -> dict:
    names = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bowpose",
                                description="template-based 6D object pose "
                                            "estimation from RGB")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp, keys):
        sp.add_argument("--config", help="key = value config file")
        for key in keys:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            type=_flag_type(key), default=None)

    sp = sub.add_parser("onboard", help="build an object representation")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--features-dir",
                    help="read template_<id>.fpft files instead of the "
                         "built-in backend")
    add_config_flags(sp, ["n_templates", "crop_size", "delta", "patch_size",
                          "pca_dim", "codebook_size", "soft_assign_k",
                          "soft_assign_sigma", "seed"])
    sp.set_defaults(func=cmd_onboard)

    sp = sub.add_parser("estimate", help="estimate a pose for one detection")
    sp.add_argument("--rep", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--intrinsics", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--feature-file")
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--hypotheses", type=int, default=1)
    sp.add_argument("--image-id", type=int, default=0)
    sp.add_argument("--timings", action="store_true",
                    help="include wall-times in the result file (breaks "
                         "byte-for-byte reproducibility)")
    add_config_flags(sp, ["h", "ransac_iters", "inlier_threshold_px",
                          "refine_iters", "barron_alpha", "barron_c", "seed",
                          "threads"])
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("evaluate", help="score results against ground truth")
    sp.add_argument("--results", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--symmetries")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate, config=None)

    sp = sub.add_parser("visualize", help="draw the estimated silhouette "
                                          "contour over the image")
    sp.add_argument("--rep", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--result", required=True)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--intrinsics", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_visualize, config=None)
    return p


def _flag_type(key: str):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        return lambda s: s == "true"
    return type(default)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DimMismatch as exc:
        # inconsistent feature dimensions are a setup problem, not a
        # pipeline failure
        print(f"config error (features): {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except PipelineStageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4
    except BowposeError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
