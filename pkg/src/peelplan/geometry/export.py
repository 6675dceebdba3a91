"""Debug and viewer exports: VTK structured points and polyline OBJ."""

from collections.abc import Sequence
from pathlib import Path

import numpy as np

from peelplan.geometry.voxel import VoxelGrid


def write_vtk(grid: VoxelGrid, path: Path, name: str = "values") -> Path:
    """Write a grid as a legacy ASCII VTK structured-points file.

    Points sit at cell centers; 2D grids are written as a single z-slice.
    """
    dims = list(grid.dims) + [1] * (3 - grid.dimension)
    origin = list(grid.origin + 0.5 * grid.spacing) + [0.0] * (3 - grid.dimension)
    # VTK expects x varying fastest
    data = np.asarray(grid.values, dtype=float).reshape(grid.dims).ravel(order="F")

    lines = [
        "# vtk DataFile Version 3.0",
        f"peelplan {name}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(n) for n in dims),
        "ORIGIN " + " ".join(f"{x:.9g}" for x in origin),
        "SPACING " + " ".join(f"{grid.spacing:.9g}" for _ in range(3)),
        f"POINT_DATA {data.size}",
        f"SCALARS {name} float 1",
        "LOOKUP_TABLE default",
        " ".join(f"{x:.9g}" for x in data),
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def write_polyline_obj(points: Sequence[Sequence[float]], path: Path) -> Path:
    """Write one polyline (e.g. a tool-tip trace) as an OBJ line element."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] == 2:
        points = np.column_stack([points, np.zeros(len(points))])

    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in points]
    if len(points) > 1:
        lines.append("l " + " ".join(str(i + 1) for i in range(len(points))))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path
