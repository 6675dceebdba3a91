"""Exception hierarchy for the support-removal planner.

Pipeline verdicts (unreachable supports, failed tool paths) are reported as
data on the plan; the exceptions here signal invalid inputs or conditions a
caller is expected to handle.
"""


class PeelPlanError(Exception):
    """Base class for all planner errors."""


class ConfigError(PeelPlanError):
    """Job configuration is missing, malformed or inconsistent."""


class MeshError(PeelPlanError):
    """Input mesh cannot be used as a solid."""


class NonWatertightError(MeshError):
    """Mesh has boundary edges or open polygon loops."""


class DegenerateMeshError(MeshError):
    """Mesh encloses no volume or has zero-size faces."""


class FrameMismatchError(PeelPlanError):
    """Two voxel grids do not share origin, spacing and dims."""


class BadMethodForDimensionError(PeelPlanError):
    """Rotation sampling method does not apply to the requested dimension."""


class EmptyFiberError(PeelPlanError):
    """An operation that needs fiber members received an empty fiber."""


class GridTooLargeError(PeelPlanError):
    """Padded FFT grid exceeds the configured memory budget."""


class OutOfFieldBoundsError(PeelPlanError):
    """Translation lies outside the overlap field but the tool may touch N."""


class MotionPlanningError(PeelPlanError):
    """Base class for tool path planning failures."""


class PathNotFoundError(MotionPlanningError):
    """Sampling budget exhausted before the two trees connected."""


class StartInCollisionError(MotionPlanningError):
    """Start configuration stays in collision after perturbation retries."""


class GoalInCollisionError(MotionPlanningError):
    """Goal configuration stays in collision after perturbation retries."""
