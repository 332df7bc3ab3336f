"""Patch-token feature export for the bowpose FPFT pipeline."""

from .export import (ExportJob, ExportReport, FeatureExporter,
                     export_features, export_templates)
from .fpft import FpftError, read_fpft, write_fpft
from .model import MODEL_SPECS, build_model

__all__ = [
    "ExportJob",
    "ExportReport",
    "FeatureExporter",
    "export_features",
    "export_templates",
    "FpftError",
    "read_fpft",
    "write_fpft",
    "MODEL_SPECS",
    "build_model",
]
