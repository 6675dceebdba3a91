"""Boundary meshes for parts, supports and tools.

3D solids are triangle meshes read through trimesh (STL, OBJ). 2D solids are
closed polygon loops stored as edge lists; several loops combine with the
even-odd rule, so a loop nested inside another is a hole.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
import shapely
import structlog
import trimesh
from shapely.geometry.base import BaseGeometry

from peelplan.config.settings import POLYGON_SUFFIXES
from peelplan.errors import DegenerateMeshError, MeshError, NonWatertightError

logger = structlog.get_logger()

# Relative volume below which a solid is treated as empty
_MIN_RELATIVE_VOLUME = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices (mm) plus index triples (3D) or index pairs (2D)."""

    vertices: np.ndarray
    faces: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.vertices.shape[1]) if self.vertices.ndim == 2 else 0

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as (lower, upper) corners."""
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def radius(self) -> float:
        """Largest vertex distance from the origin."""
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @cached_property
    def loops(self) -> list[np.ndarray]:
        """Vertex index cycles of a 2D mesh, in edge-walk order.

        Raises:
            NonWatertightError: Some vertex does not have exactly two edges.
        """
        if self.dimension != 2:
            raise MeshError("Polygon loops are only defined for 2D meshes")

        n = len(self.vertices)
        degree = np.bincount(self.faces.ravel(), minlength=n)
        if np.any(degree != 2):
            open_vertices = np.flatnonzero(degree != 2)
            raise NonWatertightError(
                f"Polygon has {len(open_vertices)} vertices without exactly two edges"
            )

        neighbours: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.faces:
            neighbours[a].append(int(b))
            neighbours[b].append(int(a))

        visited = np.zeros(n, dtype=bool)
        loops = []
        for start in range(n):
            if visited[start]:
                continue
            loop = [start]
            visited[start] = True
            previous, current = start, neighbours[start][0]
            while current != start:
                loop.append(current)
                visited[current] = True
                a, b = neighbours[current]
                previous, current = current, (b if a == previous else a)
            loops.append(np.asarray(loop))
        return loops

    @cached_property
    def polygon(self) -> BaseGeometry:
        """Even-odd combination of all loops as a shapely geometry."""
        pieces = []
        for loop in self.loops:
            if len(loop) < 3:
                raise DegenerateMeshError("Polygon loop has fewer than three vertices")
            ring = shapely.Polygon(self.vertices[loop])
            if not ring.is_valid:
                raise DegenerateMeshError("Polygon loop intersects itself")
            pieces.append(ring)
        if not pieces:
            return shapely.Polygon()
        return reduce(shapely.symmetric_difference, pieces)

    @cached_property
    def solid(self) -> trimesh.Trimesh:
        """trimesh view of a 3D mesh with outward-facing normals."""
        if self.dimension != 3:
            raise MeshError("Triangle solids are only defined for 3D meshes")
        mesh = trimesh.Trimesh(vertices=self.vertices, faces=self.faces, process=True)
        if mesh.is_watertight and mesh.volume < 0:
            mesh.invert()
        return mesh

    @property
    def is_watertight(self) -> bool:
        if self.dimension == 2:
            degree = np.bincount(self.faces.ravel(), minlength=len(self.vertices))
            return bool(np.all(degree == 2))
        return bool(self.solid.is_watertight)

    @property
    def volume(self) -> float:
        """Enclosed volume (3D) or area (2D)."""
        if self.dimension == 2:
            return float(self.polygon.area)
        return float(abs(self.solid.volume))

    def validate(self) -> None:
        """Check that the mesh bounds a solid.

        Raises:
            NonWatertightError: Boundary edges or open loops.
            DegenerateMeshError: Zero enclosed volume or zero-length edges.
        """
        if self.is_empty:
            raise DegenerateMeshError("Mesh has no faces")
        if not self.is_watertight:
            raise NonWatertightError("Mesh has boundary edges")

        if self.dimension == 2:
            edges = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
            if np.any(np.linalg.norm(edges, axis=1) == 0):
                raise DegenerateMeshError("Polygon has zero-length edges")

        lower, upper = self.bounds
        scale = float(np.prod(np.maximum(upper - lower, 1e-300)))
        if self.volume <= _MIN_RELATIVE_VOLUME * scale:
            raise DegenerateMeshError("Mesh encloses zero volume")

    def transformed(self, matrix: np.ndarray) -> "TriMesh":
        """Apply a homogeneous (d+1)x(d+1) rigid transform to the vertices."""
        d = self.dimension
        vertices = self.vertices @ matrix[:d, :d].T + matrix[:d, d]
        return TriMesh(vertices=vertices, faces=self.faces)

    def translated(self, offset: Sequence[float]) -> "TriMesh":
        return TriMesh(vertices=self.vertices + np.asarray(offset), faces=self.faces)

    def bodies(self) -> list[BaseGeometry] | list[trimesh.Trimesh]:
        """Disconnected solid pieces, as shapely polygons or trimesh meshes."""
        if self.is_empty:
            return []
        if self.dimension == 2:
            geometry = self.polygon
            return list(getattr(geometry, "geoms", [geometry]))
        return list(self.solid.split(only_watertight=False))


def polygon_mesh(loops: Sequence[Sequence[Sequence[float]]]) -> TriMesh:
    """Build a 2D mesh from closed vertex loops (closing vertex optional)."""
    vertices: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    offset = 0
    for loop in loops:
        points = np.asarray(loop, dtype=float)
        if len(points) > 1 and np.allclose(points[0], points[-1]):
            points = points[:-1]
        n = len(points)
        index = np.arange(n) + offset
        vertices.append(points)
        faces.append(np.column_stack([index, np.roll(index, -1)]))
        offset += n

    if not vertices:
        return TriMesh(vertices=np.zeros((0, 2)), faces=np.zeros((0, 2), dtype=int))
    return TriMesh(vertices=np.vstack(vertices), faces=np.vstack(faces))


def rectangle(x0: float, y0: float, x1: float, y1: float) -> list[list[float]]:
    """Counter-clockwise loop of an axis-aligned rectangle."""
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def read_polygon(path: Path) -> TriMesh:
    """Parse the polygon text format.

    One ``x y`` vertex per line; blank lines separate loops and ``#`` starts a
    comment. Each loop is closed implicitly.
    """
    loops: list[list[list[float]]] = []
    current: list[list[float]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            if current:
                loops.append(current)
                current = []
            continue
        fields = line.replace(",", " ").split()
        if len(fields) != 2:
            raise MeshError(f"Expected two coordinates per line in {path}: {raw!r}")
        current.append([float(fields[0]), float(fields[1])])
    if current:
        loops.append(current)
    return polygon_mesh(loops)


def write_polygon(path: Path, loops: Sequence[Sequence[Sequence[float]]]) -> None:
    """Write loops in the polygon text format."""
    blocks = ["\n".join(f"{x:.9g} {y:.9g}" for x, y in loop) for loop in loops]
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def from_trimesh(mesh: trimesh.Trimesh) -> TriMesh:
    return TriMesh(
        vertices=np.asarray(mesh.vertices, dtype=float),
        faces=np.asarray(mesh.faces, dtype=int),
    )


def load_mesh(path: Path) -> TriMesh:
    """Load a solid from STL/OBJ (3D) or polygon text (2D).

    Args:
        path: Mesh file.

    Returns:
        Mesh in file units (millimeters).
    """
    path = Path(path)
    if path.suffix.lower() in POLYGON_SUFFIXES:
        mesh = read_polygon(path)
    else:
        loaded = trimesh.load(path, force="mesh")
        mesh = from_trimesh(loaded)

    logger.debug(
        "Loaded mesh",
        path=str(path),
        dimension=mesh.dimension,
        vertices=len(mesh.vertices),
        faces=len(mesh.faces),
    )
    return mesh
