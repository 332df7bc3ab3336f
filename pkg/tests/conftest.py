"""Shared fixtures: synthetic meshes and a small onboarded representation."""

import numpy as np
import pytest

from bowpose.onboarding import OnboardConfig, onboard_object
from bowpose.synth import blob_mesh, cube_mesh


@pytest.fixture(scope="session")
def cube():
    return cube_mesh()


@pytest.fixture(scope="session")
def blob():
    return blob_mesh()


# A deliberately small configuration so onboarding stays under a second.
# sigma is matched to the distance scale of the unit-norm gradient
# descriptors (the full-scale default of 10 is tuned for neural features
# whose distances are two orders of magnitude larger).
SMALL_CONFIG = OnboardConfig(
    object_id="blob", n_templates=12, crop_size=140, delta=0.6,
    patch_size=14, pca_dim=32, codebook_size=64, soft_assign_k=3,
    soft_assign_sigma=0.5, seed=0)


@pytest.fixture(scope="session")
def small_rep(blob):
    return onboard_object(blob, SMALL_CONFIG)


# Desk-scale configuration for the end-to-end accuracy checks: full-size
# crops, enough templates for ~40 degree viewpoint spacing.
DESK_CONFIG = OnboardConfig(
    object_id="blob", n_templates=64, crop_size=420, delta=0.6,
    patch_size=14, pca_dim=64, codebook_size=512, soft_assign_k=3,
    soft_assign_sigma=0.5, seed=0)


@pytest.fixture(scope="session")
def desk_rep(blob):
    return onboard_object(blob, DESK_CONFIG)


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation matrix from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
