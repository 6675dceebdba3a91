"""Translational C-space obstacles by FFT cross-correlation.

For one tool orientation ``r`` the overlap measure of the near-net shape ``N``
and the tool placed at every lattice translation is the cross-correlation of
their indicator grids. Values are snapped to integer voxel counts, then split
into free (0), contact (below epsilon) and colliding.
"""

from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import structlog
from scipy import fft

from peelplan.errors import GridTooLargeError, OutOfFieldBoundsError
from peelplan.geometry.export import write_vtk
from peelplan.geometry.se3 import RigidTransform, Rotation, RotationSample
from peelplan.geometry.voxel import VoxelGrid
from peelplan.services.solids import ToolModel

logger = structlog.get_logger()


class ContactState(str, Enum):
    """Classification of a tool configuration against N."""

    FREE = "free"
    CONTACT = "contact"
    COLLIDE = "collide"


def count_limit(epsilon: float, cell_volume: float) -> float:
    """Epsilon expressed in voxel counts, snapped when within rounding of an integer."""
    limit = epsilon / cell_volume
    nearest = round(limit)
    return float(nearest) if abs(limit - nearest) < 1e-9 else limit


def state_of(count: int, limit: float) -> ContactState:
    if count <= 0:
        return ContactState.FREE
    if count < limit:
        return ContactState.CONTACT
    return ContactState.COLLIDE


@dataclass(frozen=True, eq=False)
class OverlapField:
    """Overlap counts of one orientation at every tool translation.

    ``counts`` cell ``m`` holds the number of voxels shared by N and the tool
    with its tip at the center of N-cell ``m + offset``.
    """

    rotation_index: int
    rotation: Rotation
    counts: VoxelGrid
    offset: np.ndarray

    @property
    def measure(self) -> VoxelGrid:
        """Overlap volumes (mm^d)."""
        return self.counts.with_values(self.counts.values * self.counts.cell_volume)

    def count_at(self, lattice_index: Sequence[int]) -> int | None:
        """Count with the tip at N-cell ``lattice_index``; None outside the field."""
        m = np.asarray(lattice_index) - self.offset
        if np.any(m < 0) or np.any(m >= np.asarray(self.counts.dims)):
            return None
        return int(self.counts.values[tuple(m)])


class _Correlator:
    """Cross-correlates one N grid with tool lattices, reusing N's spectrum."""

    def __init__(self, near_net: VoxelGrid, tool: ToolModel, max_cells: int):
        self.tool_shape = np.asarray(tool.shape)
        self.full_shape = tuple(
            int(n) for n in np.asarray(near_net.dims) + self.tool_shape - 1
        )
        self.fft_shape = tuple(fft.next_fast_len(n, real=True) for n in self.full_shape)
        cells = int(np.prod(self.fft_shape))
        if cells > max_cells:
            raise GridTooLargeError(
                f"Padded FFT grid {self.fft_shape} has {cells} cells, "
                f"budget is {max_cells}"
            )
        self.axes = tuple(range(near_net.dimension))
        self.spectrum = fft.rfftn(
            near_net.values.astype(np.float64), s=self.fft_shape, axes=self.axes
        )

    def counts(self, lattice: np.ndarray) -> np.ndarray:
        flipped = np.flip(lattice.astype(np.float64))
        product = self.spectrum * fft.rfftn(flipped, s=self.fft_shape, axes=self.axes)
        full = fft.irfftn(product, s=self.fft_shape, axes=self.axes)
        crop = tuple(slice(0, n) for n in self.full_shape)
        # Floating-point convolution noise must not create phantom contacts
        return np.clip(np.rint(full[crop]), 0, None).astype(np.int64)


def field_offset(near_net: VoxelGrid, tool: ToolModel) -> np.ndarray:
    """N-cell index of overlap-field cell 0."""
    return np.full(near_net.dimension, tool.center - (tool.shape[0] - 1), dtype=np.int64)


def _field_grid(near_net: VoxelGrid, tool: ToolModel, values: np.ndarray) -> VoxelGrid:
    origin = near_net.origin + field_offset(near_net, tool) * near_net.spacing
    return VoxelGrid(origin=origin, spacing=near_net.spacing, values=values)


def overlap_field(
    near_net: VoxelGrid,
    tool: ToolModel,
    rotation: Rotation,
    rotation_index: int = 0,
    max_fft_cells: int = 2**24,
    correlator: _Correlator | None = None,
) -> OverlapField:
    """Overlap counts of N and the rotated tool at every lattice translation.

    Args:
        near_net: Binary N grid.
        tool: Tool model; its rotated lattice is correlated with N.
        rotation: Tool orientation.
        rotation_index: Index of ``rotation`` in its sample.
        max_fft_cells: Budget for the zero-padded FFT grid.
        correlator: Cached N spectrum shared across orientations.

    Returns:
        Field over every translation at which the tool can meet N.

    Raises:
        GridTooLargeError: Padded FFT size exceeds the budget.
    """
    correlator = correlator or _Correlator(near_net, tool, max_fft_cells)
    counts = correlator.counts(tool.lattice(rotation))
    return OverlapField(
        rotation_index=rotation_index,
        rotation=rotation,
        counts=_field_grid(near_net, tool, counts),
        offset=field_offset(near_net, tool),
    )


@dataclass(frozen=True, eq=False)
class FieldLookup:
    """Result of classifying one configuration against a field stack."""

    state: ContactState
    count: int
    rotation_index: int
    lattice_index: tuple[int, ...]
    approximate: bool


@dataclass(eq=False)
class FieldStack:
    """Overlap fields of every sampled orientation for one N."""

    near_net: VoxelGrid
    tool: ToolModel
    rotations: RotationSample
    fields: list[OverlapField]
    epsilon: float

    @property
    def limit(self) -> float:
        return count_limit(self.epsilon, self.near_net.cell_volume)

    def lattice_index(self, translation: np.ndarray) -> tuple[int, ...]:
        """N-cell whose center is nearest to ``translation``."""
        index = np.rint((np.asarray(translation) - self.near_net.origin) / self.near_net.spacing - 0.5)
        return tuple(int(i) for i in index)

    def lookup(self, transform: RigidTransform) -> FieldLookup:
        """Classify a configuration, snapping ``t`` to the lattice.

        Rotations outside the sample use the nearest sampled rotation and are
        flagged approximate.

        Raises:
            OutOfFieldBoundsError: Translation is outside the field yet the tool
                box overlaps N's box.
        """
        index, exact = self.rotations.locate(transform.rotation)
        lattice_index = self.lattice_index(transform.t)
        count = self.fields[index].count_at(lattice_index)

        if count is None:
            center = self.near_net.centers_of(np.asarray([lattice_index]))[0]
            if _boxes_disjoint(self.tool.bounds_at(center), self.near_net.occupied_bounds()):
                count = 0
            else:
                raise OutOfFieldBoundsError(
                    f"Translation {transform.translation} is outside the overlap field"
                )

        if not exact:
            logger.debug("Approximate rotation lookup", rotation_index=index)

        return FieldLookup(
            state=state_of(count, self.limit),
            count=count,
            rotation_index=index,
            lattice_index=lattice_index,
            approximate=not exact,
        )


def _boxes_disjoint(
    a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray] | None
) -> bool:
    if b is None:
        return True
    return bool(np.any(a[1] <= b[0]) or np.any(b[1] <= a[0]))


def classify(stack: FieldStack, transform: RigidTransform, epsilon: float | None = None) -> ContactState:
    """Free iff overlap is 0, Contact iff below epsilon, Collide otherwise."""
    if epsilon is not None and epsilon != stack.epsilon:
        stack = FieldStack(stack.near_net, stack.tool, stack.rotations, stack.fields, epsilon)
    return stack.lookup(transform).state


def compute_fields(
    near_net: VoxelGrid,
    tool: ToolModel,
    rotations: RotationSample,
    epsilon: float,
    workers: int = 1,
    max_fft_cells: int = 2**24,
) -> FieldStack:
    """Overlap fields for every sampled orientation.

    Slices are independent; with ``workers > 1`` they run on a thread pool and
    are merged in rotation order.
    """
    correlator = _Correlator(near_net, tool, max_fft_cells)

    def slice_for(index: int) -> OverlapField:
        return overlap_field(
            near_net, tool, rotations[index], index, correlator=correlator
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(pool.map(slice_for, range(len(rotations))))
    else:
        fields = [slice_for(i) for i in range(len(rotations))]

    logger.debug(
        "Computed overlap fields",
        orientations=len(fields),
        fft_shape=list(correlator.fft_shape),
    )
    return FieldStack(near_net, tool, rotations, fields, epsilon)


@dataclass(frozen=True, eq=False)
class ContactSlice:
    """Contact translations of one orientation."""

    rotation_index: int
    indices: np.ndarray
    counts: np.ndarray
    lookup: dict[tuple[int, ...], int] = field(repr=False)


@dataclass(frozen=True, eq=False)
class ContactSpace:
    """Sparse epsilon-contact configurations ``(s, t, overlap)`` with 0 < overlap < epsilon."""

    slices: tuple[ContactSlice, ...]
    frame: VoxelGrid
    field_frame: VoxelGrid
    epsilon: float

    def __len__(self) -> int:
        return sum(len(s.counts) for s in self.slices)

    def count(self, rotation_index: int, lattice_index: Sequence[int]) -> int:
        """Overlap count of a contact configuration, 0 if not in contact."""
        return self.slices[rotation_index].lookup.get(tuple(int(i) for i in lattice_index), 0)

    def translation(self, lattice_index: Sequence[int]) -> np.ndarray:
        return self.frame.centers_of(np.asarray([lattice_index]))[0]

    def entries(self) -> Iterator[tuple[int, np.ndarray, float]]:
        """``(rotation index, translation, overlap volume)`` triples."""
        cell = self.frame.cell_volume
        for s in self.slices:
            centers = self.frame.centers_of(s.indices)
            for t, c in zip(centers, s.counts, strict=True):
                yield s.rotation_index, t, float(c) * cell

    def members(self) -> set[tuple[int, tuple[int, ...]]]:
        """All ``(rotation index, lattice index)`` pairs."""
        return {(s.rotation_index, key) for s in self.slices for key in s.lookup}

    @classmethod
    def from_fields(cls, stack: FieldStack, epsilon: float | None = None) -> "ContactSpace":
        epsilon = stack.epsilon if epsilon is None else epsilon
        limit = count_limit(epsilon, stack.near_net.cell_volume)
        slices = []
        for f in stack.fields:
            values = f.counts.values
            m = np.argwhere((values > 0) & (values < limit))
            counts = values[tuple(m.T)] if len(m) else np.zeros(0, dtype=np.int64)
            indices = m + f.offset
            lookup = {
                tuple(int(i) for i in idx): int(c)
                for idx, c in zip(indices, counts, strict=True)
            }
            slices.append(ContactSlice(f.rotation_index, indices, counts, lookup))

        field_frame = stack.fields[0].counts.with_values(
            np.zeros(stack.fields[0].counts.dims, dtype=np.int64)
        )
        return cls(tuple(slices), stack.near_net, field_frame, epsilon)


def contact_space(
    near_net: VoxelGrid,
    tool: ToolModel,
    rotations: RotationSample,
    epsilon: float,
    workers: int = 1,
    max_fft_cells: int = 2**24,
) -> ContactSpace:
    """All sampled ``(s, t)`` with overlap strictly between 0 and epsilon."""
    stack = compute_fields(near_net, tool, rotations, epsilon, workers, max_fft_cells)
    return ContactSpace.from_fields(stack)


def projected_contact_field(contact: ContactSpace) -> VoxelGrid:
    """Per translation, the number of sampled orientations in contact there."""
    values = np.zeros(contact.field_frame.dims, dtype=np.int64)
    offset = np.rint(
        (contact.field_frame.origin - contact.frame.origin) / contact.frame.spacing
    ).astype(np.int64)
    for s in contact.slices:
        if len(s.indices):
            np.add.at(values, tuple((s.indices - offset).T), 1)
    return contact.field_frame.with_values(values)


def dump_fields(
    stack: FieldStack, projected: VoxelGrid, directory: Path, round_index: int
) -> None:
    """Write overlap slices and the projected contact field as VTK files."""
    for f in stack.fields:
        write_vtk(
            f.measure,
            directory / f"round{round_index}_overlap_r{f.rotation_index}.vtk",
            name="overlap",
        )
    write_vtk(projected, directory / f"round{round_index}_projected.vtk", name="orientations")
