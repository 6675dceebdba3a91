"""Contact fibers: tool configurations touching a dislocation feature.

A feature is lifted into the configuration space at its representative points;
the fiber keeps every sampled orientation whose tool, with the tip at one of
those points, is in epsilon-contact with N. Fallback boundary points are tried
only when the primary points yield nothing.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import structlog

from peelplan.errors import EmptyFiberError
from peelplan.geometry.se3 import (
    MetricWeights,
    RigidTransform,
    RotationSample,
    closest_pair,
    stack_transforms,
)
from peelplan.geometry.voxel import VoxelGrid, union
from peelplan.services.cspace import ContactSpace, contact_space
from peelplan.services.solids import DislocationFeature, ToolModel, dislocation_features

logger = structlog.get_logger()


@dataclass(frozen=True)
class FiberMember:
    """One contact configuration on a feature."""

    rotation_index: int
    lattice_index: tuple[int, ...]
    transform: RigidTransform
    overlap: float


@dataclass(frozen=True, eq=False)
class Fiber:
    """Sampled contact configurations of one feature in one round."""

    feature_id: int
    members: tuple[FiberMember, ...]

    def __len__(self) -> int:
        return len(self.members)

    @property
    def is_empty(self) -> bool:
        return not self.members

    @property
    def orientations(self) -> tuple[int, ...]:
        """Distinct rotation indices (the projected orientation set)."""
        return tuple(sorted({m.rotation_index for m in self.members}))

    @property
    def transforms(self) -> list[RigidTransform]:
        return [m.transform for m in self.members]

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked rotation parameters and translations of the members."""
        return stack_transforms(self.transforms)


def _point_indices(points: np.ndarray, frame: VoxelGrid) -> list[tuple[int, ...]]:
    return [tuple(int(i) for i in idx) for idx in frame.index_of(points)]


def early_accessibility(feature: DislocationFeature, projected: VoxelGrid) -> bool:
    """True iff some representative point has a sampled contact orientation.

    Primary points are checked first and fallback points only when none of
    them is accessible, mirroring :func:`lift_feature`.
    """
    for points in (feature.query_points, feature.fallback_points):
        if len(points) == 0:
            continue
        indices = projected.index_of(points)
        inside = projected.in_bounds(indices)
        if np.any(projected.values[tuple(indices[inside].T)] > 0):
            return True
    return False


def lift_feature(
    feature: DislocationFeature, contact: ContactSpace, rotations: RotationSample
) -> Fiber:
    """Fiber of one feature: contact configurations at its representative points."""
    cell = contact.frame.cell_volume
    for points in (feature.query_points, feature.fallback_points):
        if len(points) == 0:
            continue
        members = []
        for s in range(len(rotations)):
            for index in _point_indices(points, contact.frame):
                count = contact.count(s, index)
                if count:
                    members.append(
                        FiberMember(
                            rotation_index=s,
                            lattice_index=index,
                            transform=RigidTransform.create(
                                rotations[s], contact.translation(index)
                            ),
                            overlap=count * cell,
                        )
                    )
        if members:
            return Fiber(feature.id, tuple(members))
    return Fiber(feature.id, ())


def lift_features(
    features: Sequence[DislocationFeature],
    contact: ContactSpace,
    rotations: RotationSample,
) -> list[Fiber]:
    """Fibers of several features against one contact space."""
    return [lift_feature(f, contact, rotations) for f in features]


def fibration(
    part: VoxelGrid,
    support: VoxelGrid,
    tool: ToolModel,
    rotations: RotationSample,
    epsilon: float,
    query_points: int = 1,
    ring_points: int = 4,
) -> list[Fiber]:
    """Fibers of every dislocation feature of ``support`` against N = P ∪ S.

    Args:
        part: Part grid.
        support: Current support grid on the same frame.
        tool: Tool model.
        rotations: Orientation sample.
        epsilon: Tolerable overlap volume.
        query_points: Representative points per feature.
        ring_points: Fallback boundary points per feature.

    Returns:
        One fiber per feature, in feature order.
    """
    features = dislocation_features(part, support, query_points, ring_points)
    contact = contact_space(union(part, support), tool, rotations, epsilon)
    return lift_features(features, contact, rotations)


def fiber_distance(
    f1: Fiber, f2: Fiber, weights: MetricWeights
) -> tuple[float, RigidTransform, RigidTransform]:
    """Closest pair of configurations between two fibers.

    Ties go to the lexicographically smallest ``(member of f1, member of f2)``.

    Raises:
        EmptyFiberError: Either fiber has no members.
    """
    if f1.is_empty or f2.is_empty:
        raise EmptyFiberError(
            f"Fiber distance needs members (features {f1.feature_id}, {f2.feature_id})"
        )
    distance, i, j = closest_pair(f1.arrays, f2.arrays, weights)
    return distance, f1.members[i].transform, f2.members[j].transform
