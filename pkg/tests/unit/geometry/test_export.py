"""Unit tests for viewer exports and the scene fixtures."""

import json
from pathlib import Path

import numpy as np

from peelplan.config.settings import GridSettings, JobConfig
from peelplan.geometry.export import write_polyline_obj, write_vtk
from peelplan.geometry.fixtures import SCENES, bracket_3d, two_square, write_job
from peelplan.geometry.voxel import VoxelGrid


class TestExport:
    """测试调试导出."""

    def test_vtk_header_and_order(self, tmp_path: Path) -> None:
        """VTK 以 x 最快变化写出单元中心."""
        values = np.array([[0, 1, 2], [3, 4, 5]])
        grid = VoxelGrid(origin=np.array([1.0, 2.0]), spacing=0.5, values=values)

        path = write_vtk(grid, tmp_path / "field.vtk", name="overlap")

        lines = path.read_text(encoding="ascii").splitlines()
        assert "DIMENSIONS 2 3 1" in lines
        assert "ORIGIN 1.25 2.25 0" in lines
        assert lines[-1].split() == ["0", "3", "1", "4", "2", "5"]

    def test_polyline_obj(self, tmp_path: Path) -> None:
        """平面轨迹补零 z 并连成一条折线."""
        path = write_polyline_obj([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]], tmp_path / "leg.obj")

        lines = path.read_text(encoding="ascii").splitlines()
        assert lines[0] == "v 0 0 0"
        assert lines[-1] == "l 1 2 3"


class TestFixtureScenes:
    """测试内置示例场景."""

    def test_write_job(self, tmp_path: Path) -> None:
        """写出的作业文件可以被加载."""
        path = write_job(two_square(), tmp_path / "square")

        raw = json.loads(path.read_text(encoding="utf-8"))
        job = JobConfig.from_file(path)

        assert raw["rotations"] == {"count": 8, "method": "grid2d"}
        assert job.part.exists()
        assert job.support is not None and job.support.exists()
        assert job.output_dir == tmp_path / "square" / "out"

    def test_registry_names(self) -> None:
        """注册表按名称索引场景."""
        for name, builder in SCENES.items():
            assert builder().name == name

    def test_bracket_columns(self, grid_settings: GridSettings) -> None:
        """三维支架的两根支撑柱各成一个分量."""
        scene = bracket_3d().build(grid_settings)

        assert scene.dimension == 3
        assert sorted(c.size for c in scene.components) == [9, 9]
