"""Template-based 6D object pose estimation from a single RGB image.

Onboarding renders templates of a mesh, registers patch descriptors in 3D
and compresses them into a bag-of-words representation; inference crops
the detection with a virtual pinhole camera, retrieves similar templates,
fits a coarse pose with EPnP-RANSAC and refines it featuremetrically.
"""

from .errors import BowposeError
from .features import FeatureGrid, GradientBackend, extract_grid, \
    read_feature_file, write_feature_file
from .geometry import CameraIntrinsics, Pose, VirtualCrop, build_virtual_crop
from .onboarding import ObjectRepresentation, OnboardConfig, \
    load_representation, onboard_object, save_representation
from .pipeline import DetectionInput, EstimateOptions, PoseEstimate, \
    estimate_batch, estimate_pose
from .rendering import Mesh, load_mesh, render_template, sample_rotations

__version__ = "0.1.0"

__all__ = [
    "BowposeError", "CameraIntrinsics", "DetectionInput", "EstimateOptions",
    "FeatureGrid", "GradientBackend", "Mesh", "ObjectRepresentation",
    "OnboardConfig", "Pose", "PoseEstimate", "VirtualCrop",
    "build_virtual_crop", "estimate_batch", "estimate_pose", "extract_grid",
    "load_mesh", "load_representation", "onboard_object",
    "read_feature_file", "render_template", "sample_rotations",
    "save_representation", "write_feature_file", "__version__",
]
