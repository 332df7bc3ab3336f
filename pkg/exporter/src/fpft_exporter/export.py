"""Batch export of transformer patch tokens to FPFT files."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .fpft import write_fpft
from .model import IMAGENET_MEAN, IMAGENET_STD, build_model


@dataclass(frozen=True)
class ExportJob:
    image_paths: list
    out_dir: str
    model_name: str = "vit-l14-reg"
    layer: int = 18
    patch_size: int = 14
    device: str = "cpu"
    weights_path: str = None
    seed: int = 0
    global_token: bool = False


@dataclass
class ExportReport:
    written: list = field(default_factory=list)
    failed: list = field(default_factory=list)   # (path, reason) pairs

    @property
    def ok(self) -> bool:
        return not self.failed


class FeatureExporter:
    """Loads the backbone once and exports images one at a time."""

    def __init__(self, model_name: str = "vit-l14-reg", layer: int = 18,
                 weights_path=None, seed: int = 0, device: str = "cpu"):
        self.model, self.weights_source = build_model(
            model_name, weights_path=weights_path, seed=seed, device=device)
        self.model_name = model_name
        self.layer = layer
        self.patch_size = self.model.spec.patch_size
        self.device = device

    def _validate(self, image: np.ndarray) -> None:
        h, w = image.shape[:2]
        if h != w:
            raise ValueError(f"image must be square, got {w}x{h}")
        if h % self.patch_size != 0:
            raise ValueError(f"side {h} not divisible by patch size "
                             f"{self.patch_size}")

    def export(self, image: np.ndarray):
        """RGB image (H, W, 3), uint8 or float in [0, 1] -> patch-token grid
        (side/patch, side/patch, dim) float32 plus the class token."""
        self._validate(image)
        image = np.asarray(image, dtype=np.float64)
        if image.max() > 1.0:
            image = image / 255.0
        image = (image - np.array(IMAGENET_MEAN)) / np.array(IMAGENET_STD)
        x = torch.from_numpy(image.transpose(2, 0, 1)[None]).float()
        with torch.no_grad():
            patches, cls = self.model.tokens_at_layer(x.to(self.device),
                                                      self.layer)
        return patches.cpu().numpy(), cls.cpu().numpy()

    def export_to_file(self, image: np.ndarray, path,
                       global_token: bool = False) -> None:
        patches, cls = self.export(image)
        write_fpft(patches, self.patch_size, path,
                   global_desc=cls if global_token else None)


def _load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def export_features(job: ExportJob) -> ExportReport:
    """Export every image of the job; failures are reported, not fatal."""
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exporter = FeatureExporter(job.model_name, job.layer,
                               weights_path=job.weights_path, seed=job.seed,
                               device=job.device)
    report = ExportReport()
    for src in job.image_paths:
        src = Path(src)
        dst = out_dir / (src.stem + ".fpft")
        try:
            exporter.export_to_file(_load_image(src), dst,
                                    global_token=job.global_token)
            report.written.append(str(dst))
        except (OSError, ValueError) as exc:
            report.failed.append((str(src), str(exc)))
    _write_manifest(job, exporter, report, out_dir)
    return report


def export_templates(render_dir, job: ExportJob) -> ExportReport:
    """Export template_<id>.png renders to template_<id>.fpft files.

    Template ids are taken from the file names; gaps in the id sequence are
    reported as failures so onboarding does not silently skip templates.
    """
    render_dir = Path(render_dir)
    paths = sorted(render_dir.glob("template_*.png"),
                   key=lambda p: int(p.stem.split("_")[1]))
    ids = [int(p.stem.split("_")[1]) for p in paths]
    job = ExportJob(image_paths=[str(p) for p in paths], out_dir=job.out_dir,
                    model_name=job.model_name, layer=job.layer,
                    patch_size=job.patch_size, device=job.device,
                    weights_path=job.weights_path, seed=job.seed,
                    global_token=job.global_token)
    report = export_features(job)
    for missing in sorted(set(range(len(ids) and max(ids) + 1)) - set(ids)):
        report.failed.append((str(render_dir / f"template_{missing}.png"),
                              "missing render"))
    return report


def _write_manifest(job: ExportJob, exporter: FeatureExporter,
                    report: ExportReport, out_dir: Path) -> None:
    manifest = {
        "model": job.model_name,
        "layer": job.layer,
        "patch_size": exporter.patch_size,
        "weights": exporter.weights_source,
        "preprocessing": {"mean": list(IMAGENET_MEAN),
                          "std": list(IMAGENET_STD)},
        "token_extraction": "post-block output, before final norm",
        "global_token": job.global_token,
        "written": report.written,
        "failed": report.failed,
    }
    with open(out_dir / "export_manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
