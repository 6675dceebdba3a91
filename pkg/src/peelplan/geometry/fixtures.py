"""Reference scenes built in code.

Small 2D layouts with known answers (accessibility rounds, trapped supports,
path-planning traps) plus a 3D bracket made with ``trimesh.creation``. Each
scene can be written out as a job directory for the command line.
"""

import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import trimesh

from peelplan.config.settings import ContactSettings, GridSettings
from peelplan.geometry.mesh import TriMesh, from_trimesh, polygon_mesh, rectangle, write_polygon
from peelplan.services.solids import Scene, build_scene

Loops = list[list[list[float]]]


@dataclass(frozen=True)
class FixtureScene:
    """Named scene: part, support, tool and optional fixture.

    2D scenes hold polygon loops; 3D scenes hold trimesh solids.
    """

    name: str
    dimension: int
    part: Loops | trimesh.Trimesh
    tool: Loops | trimesh.Trimesh
    tool_tip: tuple[float, ...]
    support: Loops | trimesh.Trimesh | None = None
    fixture: Loops | trimesh.Trimesh | None = None
    settings: dict[str, Any] = field(default_factory=dict)

    def mesh(self, role: str) -> TriMesh | None:
        source = getattr(self, role)
        if source is None:
            return None
        if self.dimension == 2:
            return polygon_mesh(source)
        return from_trimesh(source)

    def build(
        self, grid: GridSettings | None = None, contact: ContactSettings | None = None
    ) -> Scene:
        """Voxelize the scene directly, without going through files."""
        part = self.mesh("part")
        tool = self.mesh("tool")
        assert part is not None and tool is not None
        return build_scene(
            part,
            tool,
            self.tool_tip,
            grid or GridSettings(),
            contact,
            support_mesh=self.mesh("support"),
            fixture_mesh=self.mesh("fixture"),
        )


def _rect_loop(box: Sequence[float]) -> list[list[float]]:
    x0, y0, x1, y1 = box
    return rectangle(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def _mapped(box: Sequence[float], transform: Callable[[float, float], tuple[float, float]]) -> list[float]:
    x0, y0 = transform(box[0], box[1])
    x1, y1 = transform(box[2], box[3])
    return [x0, y0, x1, y1]


def needle_tool(length: float = 12.5, width: float = 1.0) -> Loops:
    """Thin bar along +x with the tip at the origin."""
    half = width / 2
    return [rectangle(-half, -half, length, half)]


def paddle_tool(length: float = 8.0, width: float = 3.0) -> Loops:
    """Bar too wide for one-voxel slits."""
    half = width / 2
    return [rectangle(-half, -half, length, half)]


def two_square() -> FixtureScene:
    """Square part with one square support block on its right face."""
    return FixtureScene(
        name="two_square",
        dimension=2,
        part=[rectangle(0, 0, 8, 8)],
        support=[rectangle(8, 2, 12, 6)],
        tool=needle_tool(6.5),
        tool_tip=(0.0, 0.0),
    )


def l_part() -> FixtureScene:
    """L-shaped part with a support column under its overhang."""
    part = [[[0, 0], [4, 0], [4, 8], [12, 8], [12, 12], [0, 12]]]
    return FixtureScene(
        name="l_part",
        dimension=2,
        part=part,
        support=[rectangle(8, 0, 10, 8)],
        tool=needle_tool(6.5),
        tool_tip=(0.0, 0.0),
    )


# Maps taking the top side of the forest to the left, bottom and right sides
_FOREST_SIDES: tuple[Callable[[float, float], tuple[float, float]], ...] = (
    lambda x, y: (x, y),
    lambda x, y: (20 - y, x),
    lambda x, y: (20 - x, 20 - y),
    lambda x, y: (y, 20 - x),
)


def forest() -> FixtureScene:
    """Square part with three columns per side; the two outer columns of a
    side shield its short inner column from every orientation.

    Round 0 removes the 8 outer columns and round 1 the 4 inner ones.
    """
    top = [(10, 20, 11, 22), (8, 20, 9, 28), (12, 20, 13, 28)]
    support = [_rect_loop(_mapped(box, side)) for side in _FOREST_SIDES for box in top]
    return FixtureScene(
        name="forest",
        dimension=2,
        part=[rectangle(0, 0, 20, 20)],
        support=support,
        tool=needle_tool(),
        tool_tip=(0.0, 0.0),
    )


def internal_void(with_top_support: bool = True) -> FixtureScene:
    """Hollow square part with a support sealed inside the cavity.

    The optional top support is reachable; the trapped one never is.
    """
    support = [rectangle(8, 5, 12, 8)]
    if with_top_support:
        support.append(rectangle(9, 20, 11, 22))
    return FixtureScene(
        name="internal_void",
        dimension=2,
        part=[rectangle(0, 0, 20, 20), rectangle(5, 5, 15, 15)],
        support=support,
        tool=needle_tool(),
        tool_tip=(0.0, 0.0),
    )


def u_trap() -> FixtureScene:
    """Closed chamber whose only opening is a one-voxel slit.

    The paddle tool fits inside the chamber but not through the slit.
    """
    outer = [[0, 0], [20, 0], [20, 10], [19, 10], [19, 1], [1, 1], [1, 19],
             [19, 19], [19, 11], [20, 11], [20, 20], [0, 20]]
    return FixtureScene(
        name="u_trap",
        dimension=2,
        part=[outer],
        tool=paddle_tool(),
        tool_tip=(0.0, 0.0),
    )


def wall_with_gap() -> FixtureScene:
    """Two wall pins with a gap between them."""
    return FixtureScene(
        name="wall_with_gap",
        dimension=2,
        part=[rectangle(0, 18, 16, 22), rectangle(24, 18, 40, 22)],
        tool=needle_tool(8.0),
        tool_tip=(0.0, 0.0),
    )


def bar_tool_3d(length: float = 8.0, width: float = 1.0) -> trimesh.Trimesh:
    """Square bar along +z with the tip at the origin."""
    half = width / 2
    return trimesh.creation.box(bounds=[[-half, -half, -half], [half, half, length]])


def bracket_3d() -> FixtureScene:
    """Standing bracket with an overhanging arm held up by two thin columns."""
    leg = trimesh.creation.box(bounds=[[0, 0, 0], [3, 6, 12]])
    arm = trimesh.creation.box(bounds=[[2, 0, 9], [12, 6, 12]])
    part = trimesh.boolean.union([leg, arm], engine="manifold")

    columns = [
        trimesh.creation.box(bounds=[[6, 2, 0], [7, 3, 9]]),
        trimesh.creation.box(bounds=[[10, 3, 0], [11, 4, 9]]),
    ]
    support = trimesh.util.concatenate(columns)
    return FixtureScene(
        name="bracket_3d",
        dimension=3,
        part=part,
        support=support,
        tool=bar_tool_3d(),
        tool_tip=(0.0, 0.0, 0.0),
        settings={"rotations": {"method": "hopf", "count": 24}},
    )


SCENES: dict[str, Callable[[], FixtureScene]] = {
    "two_square": two_square,
    "l_part": l_part,
    "forest": forest,
    "internal_void": internal_void,
    "u_trap": u_trap,
    "wall_with_gap": wall_with_gap,
    "bracket_3d": bracket_3d,
}


def write_job(
    scene: FixtureScene,
    directory: Path,
    output_dir: Path | None = None,
    **sections: dict[str, Any],
) -> Path:
    """Write a scene's meshes and a job file into ``directory``.

    Args:
        scene: Scene to write.
        directory: Target directory, created if needed.
        output_dir: Plan output directory recorded in the job file.
        **sections: Settings blocks layered over the scene's own.

    Returns:
        Path of the job file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".poly" if scene.dimension == 2 else ".stl"

    job: dict[str, Any] = {
        "dimension": scene.dimension,
        "tool_tip": list(scene.tool_tip),
        "output_dir": str(output_dir or directory / "out"),
    }
    for role in ("part", "support", "tool", "fixture"):
        source = getattr(scene, role)
        if source is None:
            continue
        target = directory / f"{role}{suffix}"
        if scene.dimension == 2:
            write_polygon(target, source)
        else:
            source.export(target)
        job[role] = target.name

    if scene.dimension == 2:
        job.setdefault("rotations", {"method": "grid2d", "count": 8})
    for name, block in {**scene.settings, **sections}.items():
        job[name] = {**job.get(name, {}), **block}

    path = directory / "job.json"
    path.write_text(json.dumps(job, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def scene_bounds(scene: FixtureScene) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of part and support together."""
    meshes = [m for m in (scene.mesh("part"), scene.mesh("support")) if m is not None]
    lower = np.min([m.bounds[0] for m in meshes], axis=0)
    upper = np.max([m.bounds[1] for m in meshes], axis=0)
    return lower, upper
