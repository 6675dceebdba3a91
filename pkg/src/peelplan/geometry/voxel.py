"""Regular voxel grids: the shared substrate for solids and fields.

All grids of one job live on a single global lattice: origins are integer
multiples of the spacing and cell ``k`` is centered at ``origin + (k + 0.5) h``.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np
import shapely
import structlog
from scipy import ndimage

from peelplan.config.settings import VoxelPolicy
from peelplan.errors import FrameMismatchError
from peelplan.geometry.mesh import TriMesh

logger = structlog.get_logger()

Connectivity = Literal["face", "full"]

# Fraction of a cell used to widen or shrink cell boxes in surface tests
BOX_TOLERANCE = 1e-7


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense scalar samples over an axis-aligned box of cells."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.values.ndim != len(self.origin):
            raise ValueError("origin and values disagree on dimension")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return float(self.spacing**self.dimension)

    @property
    def count(self) -> int:
        """Number of nonzero cells."""
        return int(np.count_nonzero(self.values))

    @property
    def volume(self) -> float:
        """Occupied volume of a binary grid."""
        return self.count * self.cell_volume

    @property
    def lattice_origin(self) -> np.ndarray:
        """Integer lattice coordinate of cell 0."""
        return np.rint(self.origin / self.spacing).astype(np.int64)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box covered by the grid."""
        return self.origin, self.origin + np.asarray(self.dims) * self.spacing

    def same_frame(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and np.isclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
            and np.array_equal(self.lattice_origin, other.lattice_origin)
        )

    def require_frame(self, other: "VoxelGrid") -> None:
        if not self.same_frame(other):
            raise FrameMismatchError(
                f"Grid frames differ: {self.dims}@{self.origin.tolist()} vs "
                f"{other.dims}@{other.origin.tolist()}"
            )

    def with_values(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(origin=self.origin, spacing=self.spacing, values=values)

    def empty_like(self, dtype: type = bool) -> "VoxelGrid":
        return self.with_values(np.zeros(self.dims, dtype=dtype))

    def centers_of(self, indices: np.ndarray) -> np.ndarray:
        """Cell centers (mm) of an (n, d) index array."""
        return self.origin + (np.asarray(indices) + 0.5) * self.spacing

    def centers(self) -> np.ndarray:
        """All cell centers in C order, shape (prod(dims), d)."""
        axes = [
            self.origin[i] + (np.arange(n) + 0.5) * self.spacing
            for i, n in enumerate(self.dims)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_of(self, points: np.ndarray) -> np.ndarray:
        """Index of the cell containing each point (may lie outside the grid)."""
        return np.floor((np.asarray(points) - self.origin) / self.spacing).astype(
            np.int64
        )

    def in_bounds(self, indices: np.ndarray) -> np.ndarray:
        indices = np.atleast_2d(indices)
        return np.all((indices >= 0) & (indices < np.asarray(self.dims)), axis=1)

    def occupied_indices(self) -> np.ndarray:
        """(n, d) indices of nonzero cells in C order."""
        return np.argwhere(self.values)

    def occupied_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Box spanned by the occupied cells, or None if the grid is empty."""
        occupied = self.occupied_indices()
        if len(occupied) == 0:
            return None
        lower = self.origin + occupied.min(axis=0) * self.spacing
        upper = self.origin + (occupied.max(axis=0) + 1) * self.spacing
        return lower, upper


def grid_frame(
    lower: np.ndarray, upper: np.ndarray, spacing: float, padding: int = 1
) -> VoxelGrid:
    """Empty binary grid on the global lattice covering [lower, upper] plus padding."""
    first = np.floor(np.asarray(lower) / spacing).astype(np.int64) - padding
    last = np.ceil(np.asarray(upper) / spacing).astype(np.int64) + padding
    dims = tuple(int(n) for n in np.maximum(last - first, 1))
    return VoxelGrid(
        origin=first * float(spacing),
        spacing=float(spacing),
        values=np.zeros(dims, dtype=bool),
    )


def _window_box(
    frame: VoxelGrid, lower: np.ndarray, upper: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    """Index range \[first, last) of frame cells whose boxes meet \[lower, upper\]."""
    first = np.maximum(frame.index_of(lower) - 1, 0)
    last = np.minimum(frame.index_of(upper) + 2, np.asarray(frame.dims))
    if np.any(last <= first):
        return None
    return first, last


def _window(frame: VoxelGrid, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Indices of frame cells whose boxes meet \[lower, upper\]."""
    box = _window_box(frame, lower, upper)
    if box is None:
        return np.zeros((0, frame.dimension), dtype=np.int64)
    first, last = box
    ranges = [np.arange(a, b) for a, b in zip(first, last, strict=True)]
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def triangle_box_overlap(
    triangle: np.ndarray, centers: np.ndarray, half: float
) -> np.ndarray:
    """Separating-axis test of one triangle against many axis-aligned cubes.

    Args:
        triangle: (3, 3) vertex array.
        centers: (m, 3) cube centers.
        half: Cube half-width.

    Returns:
        Boolean mask of cubes that the triangle meets.
    """
    v = triangle[None, :, :] - centers[:, None, :]
    edges = np.array(
        [triangle[1] - triangle[0], triangle[2] - triangle[1], triangle[0] - triangle[2]]
    )
    hit = np.ones(len(centers), dtype=bool)

    for edge in edges:
        for axis in np.eye(3):
            normal = np.cross(axis, edge)
            if np.allclose(normal, 0.0):
                continue
            projected = v @ normal
            reach = half * np.abs(normal).sum()
            hit &= ~((projected.min(axis=1) > reach) | (projected.max(axis=1) < -reach))

    hit &= np.all(v.min(axis=1) <= half, axis=1) & np.all(v.max(axis=1) >= -half, axis=1)

    normal = np.cross(edges[0], edges[1])
    reach = half * np.abs(normal).sum()
    hit &= np.abs(v[:, 0, :] @ normal) <= reach
    return hit


# Barycentric slack inside which a column ray is treated as grazing a triangle edge
EDGE_TOLERANCE = 1e-9


def interior_cells(mesh: TriMesh, frame: VoxelGrid) -> np.ndarray:
    """Cells of ``frame`` whose center lies inside a closed 3D mesh.

    Every column of cell centers is cast as a ray along +z; a center is inside
    when an odd number of surface crossings lie below it. Columns whose ray
    grazes a triangle edge or vertex fall back to trimesh's containment query.
    """
    mask = np.zeros(frame.dims, dtype=bool)
    box = _window_box(frame, *mesh.bounds)
    if box is None:
        return mask
    first, last = box
    shape = last - first
    h = frame.spacing
    xs = frame.origin[0] + (np.arange(first[0], last[0]) + 0.5) * h
    ys = frame.origin[1] + (np.arange(first[1], last[1]) + 0.5) * h
    z0 = frame.origin[2] + (first[2] + 0.5) * h

    crossings = np.zeros((shape[0], shape[1], shape[2] + 1), dtype=np.int64)
    grazing = np.zeros((shape[0], shape[1]), dtype=bool)

    for a, b, c in mesh.solid.triangles:
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        # parallel to the rays
        if abs(det) <= EDGE_TOLERANCE * np.linalg.norm(b - a) * np.linalg.norm(c - a):
            continue
        x_lo, x_hi = min(a[0], b[0], c[0]), max(a[0], b[0], c[0])
        y_lo, y_hi = min(a[1], b[1], c[1]), max(a[1], b[1], c[1])
        i0, i1 = np.searchsorted(xs, x_lo), np.searchsorted(xs, x_hi, side="right")
        j0, j1 = np.searchsorted(ys, y_lo), np.searchsorted(ys, y_hi, side="right")
        if i1 <= i0 or j1 <= j0:
            continue

        px, py = np.meshgrid(xs[i0:i1] - a[0], ys[j0:j1] - a[1], indexing="ij")
        w1 = (px * (c[1] - a[1]) - (c[0] - a[0]) * py) / det
        w2 = ((b[0] - a[0]) * py - px * (b[1] - a[1])) / det
        w0 = 1.0 - w1 - w2
        low = np.minimum(np.minimum(w0, w1), w2)
        grazing[i0:i1, j0:j1] |= np.abs(low) <= EDGE_TOLERANCE
        strict = low > EDGE_TOLERANCE
        if not strict.any():
            continue

        ii, jj = np.nonzero(strict)
        z = w0[ii, jj] * a[2] + w1[ii, jj] * b[2] + w2[ii, jj] * c[2]
        k = np.clip(np.floor((z - z0) / h).astype(np.int64) + 1, 0, shape[2])
        np.add.at(crossings, (ii + i0, jj + j0, k), 1)

    parity = np.cumsum(crossings, axis=2)[:, :, : shape[2]] % 2 == 1
    window = tuple(slice(int(lo), int(hi)) for lo, hi in zip(first, last, strict=True))
    mask[window] = parity

    if grazing.any():
        ii, jj = np.nonzero(grazing)
        depth = int(shape[2])
        indices = np.stack(
            [
                np.repeat(ii + first[0], depth),
                np.repeat(jj + first[1], depth),
                np.tile(np.arange(depth) + first[2], len(ii)),
            ],
            axis=1,
        )
        inside = np.asarray(mesh.solid.contains(frame.centers_of(indices)), dtype=bool)
        mask[tuple(indices.T)] = inside
        logger.debug("Containment fallback on grazing columns", columns=len(ii))
    return mask


def surface_cells(mesh: TriMesh, frame: VoxelGrid, pad: float) -> np.ndarray:
    """Cells of ``frame`` whose box, grown by ``pad`` (mm), meets the solid.

    A positive pad closes the boxes so touching cells count; a negative pad
    keeps only cells whose interior overlaps the solid.
    """
    lower, upper = mesh.bounds
    candidates = _window(frame, lower, upper)
    mask = np.zeros(frame.dims, dtype=bool)
    if len(candidates) == 0:
        return mask

    h = frame.spacing
    if mesh.dimension == 2:
        lo = frame.origin + candidates * h - pad
        hi = lo + h + 2 * pad
        boxes = shapely.box(lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1])
        geometry = mesh.polygon
        shapely.prepare(geometry)
        hit = shapely.intersects(geometry, boxes)
        if pad < 0:
            hit &= ~shapely.touches(geometry, boxes)
        mask[tuple(candidates[hit].T)] = True
        return mask

    mask |= interior_cells(mesh, frame)

    half = h / 2 + pad
    for triangle in mesh.solid.triangles:
        t_lower, t_upper = triangle.min(axis=0), triangle.max(axis=0)
        local = _window(frame, t_lower, t_upper)
        if len(local) == 0:
            continue
        hit = triangle_box_overlap(triangle, frame.centers_of(local), half)
        mask[tuple(local[hit].T)] = True
    return mask


def voxelize(
    mesh: TriMesh,
    spacing: float,
    policy: VoxelPolicy = VoxelPolicy.CENTROID,
    frame: VoxelGrid | None = None,
    padding: int = 1,
) -> VoxelGrid:
    """Rasterize a watertight mesh.

    Args:
        mesh: Solid to rasterize.
        spacing: Cell size (mm).
        policy: ``centroid`` marks cells whose center is inside the solid;
            ``conservative`` additionally marks every cell meeting the surface.
        frame: Target grid; defaults to the mesh AABB padded by ``padding`` cells.
        padding: Cells of clearance around the AABB when no frame is given.

    Returns:
        Binary grid.

    Raises:
        NonWatertightError: Mesh has boundary edges.
        DegenerateMeshError: Mesh encloses no volume.
    """
    mesh.validate()
    if frame is None:
        frame = grid_frame(*mesh.bounds, spacing=spacing, padding=padding)
    elif not np.isclose(frame.spacing, spacing):
        raise FrameMismatchError("Frame spacing differs from requested spacing")

    if mesh.dimension == 3:
        values = interior_cells(mesh, frame)
    else:
        values = np.zeros(frame.dims, dtype=bool)
        candidates = _window(frame, *mesh.bounds)
        if len(candidates):
            centers = frame.centers_of(candidates)
            geometry = mesh.polygon
            shapely.prepare(geometry)
            inside = shapely.contains_xy(geometry, centers[:, 0], centers[:, 1])
            values[tuple(candidates[inside].T)] = True

    if policy == VoxelPolicy.CONSERVATIVE:
        values |= surface_cells(mesh, frame, pad=BOX_TOLERANCE * spacing)

    return frame.with_values(values)


def label_components(
    grid: VoxelGrid, connectivity: Connectivity = "full"
) -> tuple[np.ndarray, int]:
    """Label connected occupied cells, numbering labels by their minimum C-order index.

    Returns:
        Label array (0 = empty) and the number of components.
    """
    rank = 1 if connectivity == "face" else grid.dimension
    structure = ndimage.generate_binary_structure(grid.dimension, rank)
    labels, count = ndimage.label(grid.values.astype(bool), structure=structure)
    if count == 0:
        return labels, 0

    flat = np.arange(labels.size).reshape(labels.shape)
    first = ndimage.minimum(flat, labels=labels, index=np.arange(1, count + 1))
    order = np.argsort(np.asarray(first), kind="stable")
    relabel = np.zeros(count + 1, dtype=labels.dtype)
    relabel[order + 1] = np.arange(1, count + 1)
    return relabel[labels], int(count)


def connected_components(
    grid: VoxelGrid, connectivity: Connectivity = "full"
) -> list[VoxelGrid]:
    """Split a binary grid into maximal connected pieces.

    ``full`` uses 26/8-connectivity and ``face`` 6/4-connectivity. Pieces are
    ordered by their lexicographically smallest voxel index.
    """
    labels, count = label_components(grid, connectivity)
    return [grid.with_values(labels == k) for k in range(1, count + 1)]


def subtract(grid: VoxelGrid, removed: VoxelGrid) -> VoxelGrid:
    """Cells occupied in ``grid`` but not in ``removed``.

    Raises:
        FrameMismatchError: Grids are on different frames.
    """
    grid.require_frame(removed)
    return grid.with_values(grid.values.astype(bool) & ~removed.values.astype(bool))


def union(*grids: VoxelGrid) -> VoxelGrid:
    """Cells occupied in any of the grids (all on one frame)."""
    first = grids[0]
    values = first.values.astype(bool).copy()
    for grid in grids[1:]:
        first.require_frame(grid)
        values |= grid.values.astype(bool)
    return first.with_values(values)
