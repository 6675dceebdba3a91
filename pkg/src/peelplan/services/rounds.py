"""Peeling rounds: the maximal removable support set per round.

A component is removable in a round when every one of its features has a
nonempty fiber against that round's near-net shape. Removable components are
subtracted and the contact space is rebuilt from scratch for the next round.
"""

import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import structlog

from peelplan.config.settings import ContactSettings, GridSettings
from peelplan.geometry.se3 import RotationSample
from peelplan.geometry.voxel import VoxelGrid
from peelplan.services.cspace import (
    ContactSpace,
    FieldStack,
    compute_fields,
    dump_fields,
    projected_contact_field,
)
from peelplan.services.fibration import Fiber, early_accessibility, lift_feature
from peelplan.services.solids import Scene

logger = structlog.get_logger()


class OutcomeStatus(str, Enum):
    """Termination of the peeling loop."""

    ALL_REMOVED = "all_removed"
    UNREACHABLE = "unreachable"


@dataclass(eq=False)
class RoundResult:
    """One round of the peeling loop.

    ``fibers`` covers every feature of the components present at the start of
    the round, so maximality can be checked from the record alone.
    """

    index: int
    remaining: tuple[int, ...]
    removable: tuple[int, ...]
    fibers: dict[int, Fiber]
    blocking: dict[int, tuple[int, ...]]
    no_contact: tuple[int, ...]
    near_net: VoxelGrid
    support: VoxelGrid
    timings: dict[str, float] = field(default_factory=dict)
    owners: dict[int, int] = field(default_factory=dict)
    contact: ContactSpace | None = None
    fields: FieldStack | None = None

    @property
    def fiber_sizes(self) -> dict[int, int]:
        return {j: len(f) for j, f in self.fibers.items()}

    @property
    def removed_features(self) -> list[int]:
        return sorted(j for j, f in self.fibers.items() if self.owners.get(j) in self.removable)

    @property
    def survivors(self) -> tuple[int, ...]:
        removed = set(self.removable)
        return tuple(i for i in self.remaining if i not in removed)

    def release(self) -> None:
        """Drop the per-orientation fields once the round is planned."""
        self.fields = None


@dataclass(frozen=True, eq=False)
class PlanOutcome:
    """Ordered rounds plus the termination status."""

    rounds: tuple[RoundResult, ...]
    status: OutcomeStatus
    remaining: tuple[int, ...] = ()
    blocking_features: tuple[int, ...] = ()


def compute_round(
    scene: Scene,
    remaining: Sequence[int],
    round_index: int,
    rotations: RotationSample,
    epsilon: float,
    contact: ContactSettings | None = None,
    grid: GridSettings | None = None,
    debug_dir: Path | None = None,
) -> RoundResult:
    """Contact space, fibers and removable set for one near-net shape.

    Args:
        scene: Scene with the original feature decomposition.
        remaining: Component ids still present.
        round_index: Round counter, for logs and dumps.
        rotations: Orientation sample.
        epsilon: Tolerable overlap volume.
        contact: Contact settings (workers, debug dumps).
        grid: Grid settings (FFT budget).
        debug_dir: Directory for VTK dumps when debug fields are enabled.

    Returns:
        Round result; its ``fields`` stay attached until :meth:`RoundResult.release`.
    """
    contact = contact or ContactSettings()
    grid = grid or GridSettings()
    remaining = tuple(sorted(remaining))
    started = time.perf_counter()

    near_net = scene.near_net(remaining)
    support = scene.support_of(remaining)
    stack = compute_fields(
        near_net,
        scene.tool,
        rotations,
        epsilon,
        workers=contact.workers,
        max_fft_cells=grid.max_fft_cells,
    )
    space = ContactSpace.from_fields(stack)
    projected = projected_contact_field(space)
    fields_done = time.perf_counter()

    if contact.debug_fields and debug_dir is not None:
        dump_fields(stack, projected, debug_dir, round_index)

    fibers: dict[int, Fiber] = {}
    owner: dict[int, int] = {}
    removable = []
    blocking: dict[int, tuple[int, ...]] = {}
    no_contact = []

    for i in remaining:
        component = scene.component(i)
        if not component.feature_ids:
            no_contact.append(i)
            removable.append(i)
            logger.warning("Support component has no part contact", component=i)
            continue

        blocked = []
        for j in component.feature_ids:
            feature = scene.feature(j)
            owner[j] = i
            if early_accessibility(feature, projected):
                fibers[j] = lift_feature(feature, space, rotations)
            else:
                fibers[j] = Fiber(j, ())
            if fibers[j].is_empty:
                blocked.append(j)

        if blocked:
            blocking[i] = tuple(blocked)
        else:
            removable.append(i)

    finished = time.perf_counter()
    result = RoundResult(
        index=round_index,
        remaining=remaining,
        removable=tuple(sorted(removable)),
        fibers=fibers,
        blocking=blocking,
        no_contact=tuple(no_contact),
        near_net=near_net,
        support=support,
        timings={
            "fields_s": fields_done - started,
            "fibration_s": finished - fields_done,
        },
        contact=space,
        fields=stack,
        owners=owner,
    )

    logger.info(
        "Computed round",
        round_index=round_index,
        remaining=len(remaining),
        removable=list(result.removable),
        contact_configurations=len(space),
        blocked_components=sorted(blocking),
    )
    return result


def removable_rounds(
    scene: Scene,
    rotations: RotationSample,
    epsilon: float,
    contact: ContactSettings | None = None,
    grid: GridSettings | None = None,
) -> PlanOutcome:
    """Peel removable supports round by round until none remain or none can go.

    Returns:
        ``ALL_REMOVED`` when the support is exhausted, otherwise ``UNREACHABLE``
        with the remaining components and the features blocking them.
    """
    remaining = list(scene.component_ids)
    rounds: list[RoundResult] = []

    while remaining:
        result = compute_round(
            scene, remaining, len(rounds), rotations, epsilon, contact, grid
        )
        result.release()
        rounds.append(result)

        if not result.removable:
            blocking = tuple(sorted(j for js in result.blocking.values() for j in js))
            logger.warning(
                "Supports unreachable",
                round_index=result.index,
                remaining=remaining,
                blocking_features=list(blocking),
            )
            return PlanOutcome(
                tuple(rounds), OutcomeStatus.UNREACHABLE, tuple(remaining), blocking
            )

        remaining = list(result.survivors)

    return PlanOutcome(tuple(rounds), OutcomeStatus.ALL_REMOVED)
