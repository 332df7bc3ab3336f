"""Exception hierarchy shared across the pipeline."""


class BowposeError(Exception):
    """Base class for all library errors."""


# --- geometry ---

class PointBehindCamera(BowposeError):
    """Projected point has non-positive camera-space depth."""


class DegenerateBox(BowposeError):
    """Bounding box has zero area."""


# --- rendering ---

class EmptyRender(BowposeError):
    """No triangle rasterized inside the viewport."""


class ZeroDepth(BowposeError):
    """Backprojection requested at zero/negative depth."""


class BadMesh(BowposeError):
    """Mesh fails validity checks (bad indices, NaNs, zero diameter)."""


# --- features / file formats ---

class SizeMismatch(BowposeError):
    """Image side not divisible by the backend patch size."""


class BadMagic(BowposeError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(BowposeError):
    """File format version not supported by this reader."""


class TruncatedFile(BowposeError):
    """File ends before the payload declared in its header."""


class DtypeUnsupported(BowposeError):
    """File declares a dtype this reader does not handle."""


# --- onboarding ---

class RankDeficient(BowposeError):
    """Not enough independent directions for the requested PCA dimension."""


class DimMismatch(BowposeError):
    """Vector length does not match the model it is used with."""


class TooFewSamples(BowposeError):
    """Fewer samples than clusters requested."""


class EmptyDescriptorSet(BowposeError):
    """Bag-of-words requested over zero descriptors."""


class NoValidPatches(BowposeError):
    """No patch center falls inside the mask."""


# --- retrieval ---

class GlobalDescriptorsAbsent(BowposeError):
    """Representation was onboarded without global descriptors."""


# --- pose estimation ---

class EmptyInput(BowposeError):
    """Matching requested with no query descriptors."""


class DegenerateConfiguration(BowposeError):
    """PnP input is degenerate (collinear points, rank failure)."""


class NoModelFound(BowposeError):
    """RANSAC found no hypothesis with enough inliers."""


class EmptyMask(BowposeError):
    """Operation requires a nonempty mask."""


# --- pipeline ---

class PipelineStageError(BowposeError):
    """Wraps an upstream error with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(BowposeError):
    """Run configuration violates a module precondition."""
