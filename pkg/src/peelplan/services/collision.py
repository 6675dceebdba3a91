"""Collision checking of tool configurations against one near-net shape.

Voxel mode answers from the round's overlap fields when the configuration sits
on a sampled orientation and a lattice translation, and otherwise counts the
near-net voxels under the posed tool's cell footprint. Mesh mode intersects
the posed tool mesh with the source meshes of N.
"""

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import shapely
import structlog
import trimesh
from scipy import ndimage
from shapely.geometry.base import BaseGeometry
from trimesh.collision import CollisionManager

from peelplan.config.settings import CheckerMode, PlannerSettings
from peelplan.errors import OutOfFieldBoundsError
from peelplan.geometry.mesh import TriMesh
from peelplan.geometry.se3 import RigidTransform
from peelplan.geometry.voxel import VoxelGrid
from peelplan.services.cspace import ContactState, FieldStack, count_limit, state_of
from peelplan.services.solids import Scene, ToolModel

logger = structlog.get_logger()

# Translation offset (in cells) below which a configuration is on the lattice
_LATTICE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class SupportBody:
    """One connected piece of the support mesh and the component it became."""

    component: int | None
    geometry: BaseGeometry | trimesh.Trimesh


@dataclass(frozen=True, eq=False)
class NearNetMeshes:
    """Source meshes of the scene, with support bodies mapped to components."""

    dimension: int
    part: TriMesh
    fixture: TriMesh | None = None
    bodies: tuple[SupportBody, ...] = ()

    def obstacles(self, remaining: Iterable[int]) -> list[BaseGeometry | trimesh.Trimesh]:
        """Part, fixture and the support bodies of the listed components.

        Bodies that no voxel component claimed are always kept.
        """
        keep = set(remaining)
        solids: list[BaseGeometry | trimesh.Trimesh] = []
        for mesh in (self.part, self.fixture):
            if mesh is None or mesh.is_empty:
                continue
            solids.append(mesh.polygon if self.dimension == 2 else mesh.solid)
        solids.extend(
            b.geometry for b in self.bodies if b.component is None or b.component in keep
        )
        return solids


def near_net_meshes(scene: Scene) -> NearNetMeshes:
    """Split the support mesh into bodies and assign each to a voxel component.

    A body belongs to the component owning most of the support cells whose
    centers it contains.
    """
    if scene.part_mesh is None:
        raise ValueError("Scene was built without source meshes")

    bodies: list[SupportBody] = []
    support_mesh = scene.support_mesh
    if support_mesh is not None and not support_mesh.is_empty:
        indices = scene.support.occupied_indices()
        centers = scene.support.centers_of(indices)
        labels = scene.labels[tuple(indices.T)] if len(indices) else np.zeros(0, int)

        for body in support_mesh.bodies():
            if scene.dimension == 2:
                shapely.prepare(body)
                inside = shapely.contains_xy(body, centers[:, 0], centers[:, 1])
            else:
                inside = np.asarray(body.contains(centers), dtype=bool)
            votes = Counter(int(label) for label in labels[inside])
            if not votes:
                logger.warning("Support body has no voxels; kept as obstacle")
                bodies.append(SupportBody(None, body))
                continue
            if len(votes) > 1:
                logger.warning("Support body spans components", components=sorted(votes))
            label, _ = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))
            bodies.append(SupportBody(label - 1, body))

    return NearNetMeshes(
        dimension=scene.dimension,
        part=scene.part_mesh,
        fixture=scene.fixture_mesh,
        bodies=tuple(bodies),
    )


def _boxes_overlap(
    a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray] | None
) -> bool:
    if b is None:
        return False
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


@dataclass(eq=False)
class CollisionChecker:
    """Read-only collision queries against one round's near-net shape.

    Attributes:
        near_net: Binary N grid of the round.
        tool: Tool model.
        epsilon: Tolerable overlap volume.
        mode: ``voxel`` or ``mesh``.
        fields: Overlap fields of the round, used for on-lattice lookups.
        meshes: Source meshes, required in mesh mode.
        remaining: Support components present in N.
        part: Part grid, used to estimate surface normals.
        dilation_voxels: Cells by which N is grown for conservative checks.
        free_tolerance: Mesh overlap, in voxel volumes, still counted as Free.
    """

    near_net: VoxelGrid
    tool: ToolModel
    epsilon: float
    mode: CheckerMode = CheckerMode.VOXEL
    fields: FieldStack | None = None
    meshes: NearNetMeshes | None = None
    remaining: tuple[int, ...] = ()
    part: VoxelGrid | None = None
    dilation_voxels: int = 0
    free_tolerance: float = 1e-6
    _manager: CollisionManager | None = field(
        default=None, init=False, repr=False
    )

    def __post_init__(self) -> None:
        if self.mode == CheckerMode.MESH and self.meshes is None:
            raise ValueError("Mesh mode needs the scene's source meshes")

    @property
    def dimension(self) -> int:
        return self.near_net.dimension

    @property
    def limit(self) -> float:
        return count_limit(self.epsilon, self.near_net.cell_volume)

    @cached_property
    def obstacle(self) -> VoxelGrid:
        """N, grown by the configured dilation."""
        values = self.near_net.values.astype(bool)
        if self.dilation_voxels > 0:
            structure = ndimage.generate_binary_structure(self.dimension, self.dimension)
            values = ndimage.binary_dilation(
                values, structure=structure, iterations=self.dilation_voxels
            )
        return self.near_net.with_values(values)

    @cached_property
    def obstacle_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        return self.obstacle.occupied_bounds()

    @cached_property
    def _solids(self) -> list[BaseGeometry | trimesh.Trimesh]:
        assert self.meshes is not None
        return self.meshes.obstacles(self.remaining)

    @cached_property
    def _region(self) -> BaseGeometry:
        region = shapely.union_all(self._solids)
        shapely.prepare(region)
        return region

    @cached_property
    def _surface_gradient(self) -> list[np.ndarray]:
        solid = self.part if self.part is not None else self.near_net
        smoothed = ndimage.gaussian_filter(solid.values.astype(float), sigma=1.0)
        return list(np.gradient(smoothed))

    def outward_normal(self, point: np.ndarray) -> np.ndarray:
        """Unit direction away from the part surface at ``point``, zero if flat."""
        grid = self.part if self.part is not None else self.near_net
        index = grid.index_of(np.asarray(point)[None, :])
        if not grid.in_bounds(index)[0]:
            return np.zeros(self.dimension)
        gradient = np.array([axis[tuple(index[0])] for axis in self._surface_gradient])
        norm = np.linalg.norm(gradient)
        if norm < 1e-12:
            return np.zeros(self.dimension)
        return -gradient / norm

    def undilated(self) -> "CollisionChecker":
        """The same checker without dilation, for approach segments."""
        if self.dilation_voxels == 0:
            return self
        return replace(self, dilation_voxels=0)

    def with_mode(
        self, mode: CheckerMode, meshes: NearNetMeshes | None = None
    ) -> "CollisionChecker":
        return replace(self, mode=mode, meshes=meshes or self.meshes)

    def check(self, transform: RigidTransform, conservative: bool = False) -> ContactState:
        """Classify one configuration as Free, Contact or Collide.

        Args:
            transform: Tool configuration.
            conservative: In voxel mode, always count the posed tool footprint
                instead of the sampled field.
        """
        if self.mode == CheckerMode.MESH:
            return self._check_mesh(transform)
        if not conservative and self.dilation_voxels == 0 and self.fields is not None:
            state = self._check_field(transform)
            if state is not None:
                return state
        return self._check_footprint(transform)

    def _check_field(self, transform: RigidTransform) -> ContactState | None:
        assert self.fields is not None
        index, exact = self.fields.rotations.locate(transform.rotation)
        if not exact:
            return None
        lattice_index = self.fields.lattice_index(transform.t)
        center = self.near_net.centers_of(np.asarray([lattice_index]))[0]
        if np.max(np.abs(center - transform.t)) > _LATTICE_TOLERANCE * self.near_net.spacing:
            return None
        try:
            return self.fields.lookup(transform).state
        except OutOfFieldBoundsError:
            return None

    def _check_footprint(self, transform: RigidTransform) -> ContactState:
        if not _boxes_overlap(self.tool.bounds_at(transform.t), self.obstacle_bounds):
            return ContactState.FREE
        footprint = self.tool.footprint(transform, self.obstacle)
        count = int(np.count_nonzero(self.obstacle.values & footprint))
        return state_of(count, self.limit)

    def _check_mesh(self, transform: RigidTransform) -> ContactState:
        posed = self.tool.posed_mesh(transform)
        cell = self.near_net.cell_volume
        if self.dimension == 2:
            tool_polygon = posed.polygon
            if not self._region.intersects(tool_polygon):
                return ContactState.FREE
            overlap = float(shapely.intersection(self._region, tool_polygon).area)
        else:
            overlap = self._overlap_volume(posed.solid)

        if overlap <= self.free_tolerance * cell:
            return ContactState.FREE
        return ContactState.CONTACT if overlap / cell < self.limit else ContactState.COLLIDE

    def _overlap_volume(self, tool_solid: trimesh.Trimesh) -> float:
        if self._manager is None:
            self._manager = CollisionManager()
            for k, solid in enumerate(self._solids):
                self._manager.add_object(f"obstacle{k}", solid)

        tool_bounds = (tool_solid.bounds[0], tool_solid.bounds[1])
        candidates = [
            s for s in self._solids if _boxes_overlap(tool_bounds, (s.bounds[0], s.bounds[1]))
        ]
        if not candidates:
            return 0.0

        touching = self._manager.in_collision_single(tool_solid)
        if not touching:
            # No surface crossing: overlap only if one solid swallows the other
            nested = any(
                bool(s.contains(tool_solid.vertices[:1])[0])
                or bool(tool_solid.contains(s.vertices[:1])[0])
                for s in candidates
            )
            if not nested:
                return 0.0

        return float(
            sum(
                tool_solid.intersection(s, engine="manifold").volume for s in candidates
            )
        )


def check(transform: RigidTransform, checker: CollisionChecker) -> ContactState:
    """Free iff the tool clears N, Contact iff overlap is below epsilon."""
    return checker.check(transform)


def round_checker(
    scene: Scene,
    near_net: VoxelGrid,
    remaining: Sequence[int],
    epsilon: float,
    planner: PlannerSettings,
    fields: FieldStack | None = None,
    meshes: NearNetMeshes | None = None,
    mode: CheckerMode | None = None,
) -> CollisionChecker:
    """Checker for one round, building source meshes lazily for mesh mode."""
    mode = mode or planner.mode
    if mode == CheckerMode.MESH and meshes is None:
        meshes = near_net_meshes(scene)
    return CollisionChecker(
        near_net=near_net,
        tool=scene.tool,
        epsilon=epsilon,
        mode=mode,
        fields=fields,
        meshes=meshes,
        remaining=tuple(sorted(remaining)),
        part=scene.part,
        dilation_voxels=planner.dilation_voxels,
        free_tolerance=planner.mesh_free_tolerance,
    )
