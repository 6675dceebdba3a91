"""Scene assembly: voxelized part, supports, fixture and tool.

Supports split into connected components; each component touches the part in
one or more dislocation features, computed on the support side as the support
voxels face-adjacent to part voxels.
"""

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
import structlog
from scipy import ndimage

from peelplan.config.settings import ContactSettings, GridSettings, VoxelPolicy
from peelplan.errors import ConfigError, FrameMismatchError
from peelplan.geometry.mesh import TriMesh
from peelplan.geometry.se3 import RigidTransform, Rotation
from peelplan.geometry.voxel import (
    BOX_TOLERANCE,
    VoxelGrid,
    grid_frame,
    label_components,
    surface_cells,
    union,
    voxelize,
)

logger = structlog.get_logger()

# Decimal places kept when rotating tool vertices
_VERTEX_DECIMALS = 9


@dataclass(frozen=True, eq=False)
class SupportComponent:
    """One connected support piece."""

    id: int
    voxels: VoxelGrid
    feature_ids: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.voxels.count


@dataclass(frozen=True, eq=False)
class DislocationFeature:
    """Connected patch of support voxels touching the part."""

    id: int
    component: int
    voxels: VoxelGrid
    query_points: np.ndarray
    fallback_points: np.ndarray

    @property
    def size(self) -> int:
        return self.voxels.count


class ToolModel:
    """Cutting tool in its own frame, with the tip at the origin.

    Rotated copies are rasterized on a tip-centered lattice (cell centers at
    ``k * spacing``) of fixed half-width, so every orientation shares one grid
    shape and the tip cell is always the center cell.
    """

    def __init__(
        self,
        mesh: TriMesh,
        spacing: float,
        policy: VoxelPolicy = VoxelPolicy.CENTROID,
    ):
        mesh.validate()
        self.mesh = mesh
        self.spacing = float(spacing)
        self.policy = policy
        self.radius = mesh.radius
        self.half_width = int(math.ceil(self.radius / self.spacing)) + 1
        self._lattices: dict[tuple[float, ...], np.ndarray] = {}

        inside = self.lattice(Rotation.identity(self.dimension))
        if not inside.any():
            raise ConfigError("Tool is thinner than one voxel at this spacing")

    @classmethod
    def from_mesh(
        cls,
        mesh: TriMesh,
        tip: Iterable[float],
        spacing: float,
        policy: VoxelPolicy = VoxelPolicy.CENTROID,
    ) -> "ToolModel":
        """Move the tool so that its tip reference point is the origin."""
        return cls(mesh.translated(-np.asarray(list(tip), dtype=float)), spacing, policy)

    @property
    def dimension(self) -> int:
        return self.mesh.dimension

    @property
    def center(self) -> int:
        """Index of the tip cell along every axis."""
        return self.half_width

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.half_width + 1,) * self.dimension

    def frame(self) -> VoxelGrid:
        """Empty tip-centered grid."""
        origin = np.full(self.dimension, -(self.half_width + 0.5) * self.spacing)
        return VoxelGrid(
            origin=origin, spacing=self.spacing, values=np.zeros(self.shape, bool)
        )

    def rotated_mesh(self, rotation: Rotation) -> TriMesh:
        vertices = np.round(
            self.mesh.vertices @ rotation.matrix.T, decimals=_VERTEX_DECIMALS
        )
        return TriMesh(vertices=vertices + 0.0, faces=self.mesh.faces)

    def posed_mesh(self, transform: RigidTransform) -> TriMesh:
        return self.rotated_mesh(transform.rotation).translated(transform.t)

    def lattice(self, rotation: Rotation) -> np.ndarray:
        """Occupancy of the rotated tool on the tip-centered lattice (cached)."""
        key = tuple(np.round(rotation.as_array, 12))
        cached = self._lattices.get(key)
        if cached is None:
            grid = voxelize(
                self.rotated_mesh(rotation),
                self.spacing,
                self.policy,
                frame=self.frame(),
            )
            cached = grid.values
            self._lattices[key] = cached
        return cached

    def grid(self, rotation: Rotation) -> VoxelGrid:
        return self.frame().with_values(self.lattice(rotation))

    def axis(self, rotation: Rotation) -> np.ndarray:
        """Unit direction from the tip toward the tool body, after rotation."""
        if self.dimension == 2:
            centroid = np.asarray(self.mesh.polygon.centroid.coords[0])
        else:
            centroid = np.asarray(self.mesh.solid.center_mass)
        direction = rotation.matrix @ centroid
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            return np.zeros(self.dimension)
        return direction / norm

    def footprint(self, transform: RigidTransform, frame: VoxelGrid) -> np.ndarray:
        """Frame cells whose interior the posed tool overlaps, as a boolean mask."""
        return surface_cells(
            self.posed_mesh(transform), frame, pad=-BOX_TOLERANCE * frame.spacing
        )

    def bounds_at(self, translation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Box containing the tool lattice when the tip sits at ``translation``."""
        reach = (self.half_width + 0.5) * self.spacing
        return translation - reach, translation + reach


@dataclass(frozen=True, eq=False)
class Scene:
    """Voxelized job inputs on one shared frame."""

    part: VoxelGrid
    support: VoxelGrid
    tool: ToolModel
    components: tuple[SupportComponent, ...]
    features: tuple[DislocationFeature, ...]
    fixture: VoxelGrid | None = None
    part_mesh: TriMesh | None = None
    support_mesh: TriMesh | None = None
    fixture_mesh: TriMesh | None = None
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    @property
    def dimension(self) -> int:
        return self.part.dimension

    @property
    def spacing(self) -> float:
        return self.part.spacing

    @property
    def diagonal(self) -> float:
        lower, upper = self.part.bounds
        return float(np.linalg.norm(upper - lower))

    @property
    def component_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.components)

    def component(self, component_id: int) -> SupportComponent:
        return self.components[component_id]

    def feature(self, feature_id: int) -> DislocationFeature:
        return self.features[feature_id]

    def support_of(self, remaining: Iterable[int]) -> VoxelGrid:
        """Support voxels of the listed components."""
        keep = np.isin(self.labels, [i + 1 for i in remaining])
        return self.support.with_values(keep)

    def near_net(self, remaining: Iterable[int]) -> VoxelGrid:
        """Part, fixture and the listed support components."""
        grids = [self.part, self.support_of(remaining)]
        if self.fixture is not None:
            grids.append(self.fixture)
        return union(*grids)


def _representatives(
    feature: np.ndarray, frame: VoxelGrid, query_points: int, ring_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """Centroid-snapped query points plus fallback points on the feature boundary."""
    indices = np.argwhere(feature)
    centers = frame.centers_of(indices)
    centroid = centers.mean(axis=0)
    distance = np.linalg.norm(centers - centroid, axis=1)
    order = np.argsort(distance, kind="stable")
    primary = order[:query_points]

    structure = ndimage.generate_binary_structure(feature.ndim, 1)
    interior = ndimage.binary_erosion(feature, structure=structure, border_value=0)
    boundary = feature & ~interior
    taken = set(primary.tolist())
    ring = [
        i
        for i, index in enumerate(indices)
        if boundary[tuple(index)] and i not in taken
    ]
    if ring and ring_points > 0:
        picks = np.unique(np.linspace(0, len(ring) - 1, ring_points).round().astype(int))
        fallback = centers[[ring[p] for p in picks]]
    else:
        fallback = np.zeros((0, frame.dimension))
    return centers[primary], fallback


def dislocation_features(
    part: VoxelGrid,
    support: VoxelGrid,
    query_points: int = 1,
    ring_points: int = 4,
    labels: np.ndarray | None = None,
) -> list[DislocationFeature]:
    """Connected interface patches between part and support.

    Args:
        part: Part grid.
        support: Support grid on the same frame, disjoint from the part.
        query_points: Representative points per feature (nearest to centroid first).
        ring_points: Boundary points tried when the primary points are inaccessible.
        labels: Support component labels (1-based); computed when omitted.

    Returns:
        Features ordered by their smallest voxel index; ``component`` is the
        0-based owning component id.

    Raises:
        FrameMismatchError: Grids are on different frames.
    """
    part.require_frame(support)
    if labels is None:
        labels, _ = label_components(support, "full")

    solid = part.values.astype(bool)
    structure = ndimage.generate_binary_structure(part.dimension, 1)
    interface = support.values.astype(bool) & ndimage.binary_dilation(
        solid, structure=structure
    )
    patches, count = label_components(support.with_values(interface), "face")

    features = []
    for k in range(1, count + 1):
        mask = patches == k
        owners = np.unique(labels[mask])
        if len(owners) != 1 or owners[0] == 0:
            raise FrameMismatchError("Interface patch is not inside one support component")
        primary, fallback = _representatives(mask, part, query_points, ring_points)
        features.append(
            DislocationFeature(
                id=k - 1,
                component=int(owners[0]) - 1,
                voxels=part.with_values(mask),
                query_points=primary,
                fallback_points=fallback,
            )
        )
    return features


def build_scene(
    part_mesh: TriMesh,
    tool_mesh: TriMesh,
    tool_tip: Iterable[float],
    grid: GridSettings,
    contact: ContactSettings | None = None,
    support_mesh: TriMesh | None = None,
    fixture_mesh: TriMesh | None = None,
) -> Scene:
    """Voxelize all inputs on one frame and decompose the supports.

    Support voxels that fall inside the part are dropped so the two solids have
    disjoint interiors; fixture voxels are obstacles only.
    """
    contact = contact or ContactSettings()
    meshes = [m for m in (part_mesh, support_mesh, fixture_mesh) if m is not None]
    meshes = [m for m in meshes if not m.is_empty]
    dimensions = {m.dimension for m in meshes} | {tool_mesh.dimension}
    if len(dimensions) != 1:
        raise ConfigError(f"Meshes mix dimensions {sorted(dimensions)}")

    for mesh in meshes:
        mesh.validate()
    lower = np.min([m.bounds[0] for m in meshes], axis=0)
    upper = np.max([m.bounds[1] for m in meshes], axis=0)
    frame = grid_frame(lower, upper, grid.spacing, grid.padding_cells)

    part = voxelize(part_mesh, grid.spacing, grid.policy, frame=frame)
    solid = part.values

    if support_mesh is not None and not support_mesh.is_empty:
        raw = voxelize(support_mesh, grid.spacing, grid.policy, frame=frame)
        support = raw.with_values(raw.values & ~solid)
    else:
        support = frame

    fixture = None
    if fixture_mesh is not None and not fixture_mesh.is_empty:
        raw = voxelize(fixture_mesh, grid.spacing, grid.policy, frame=frame)
        fixture = raw.with_values(raw.values & ~solid & ~support.values)

    labels, count = label_components(support, "full")
    features = dislocation_features(
        part, support, contact.query_points, contact.ring_points, labels=labels
    )
    components = tuple(
        SupportComponent(
            id=i,
            voxels=support.with_values(labels == i + 1),
            feature_ids=tuple(f.id for f in features if f.component == i),
        )
        for i in range(count)
    )

    tool = ToolModel.from_mesh(tool_mesh, tool_tip, grid.spacing, grid.tool_policy)

    logger.info(
        "Built scene",
        dimension=part.dimension,
        spacing=grid.spacing,
        dims=list(frame.dims),
        part_voxels=part.count,
        support_voxels=support.count,
        components=len(components),
        features=len(features),
        tool_half_width=tool.half_width,
    )

    return Scene(
        part=part,
        support=support,
        tool=tool,
        components=components,
        features=tuple(features),
        fixture=fixture,
        part_mesh=part_mesh,
        support_mesh=support_mesh,
        fixture_mesh=fixture_mesh,
        labels=labels,
    )
