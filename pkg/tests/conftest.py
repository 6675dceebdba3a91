"""Global pytest fixtures for peelplan tests."""

from pathlib import Path

import numpy as np
import pytest

from peelplan.config.settings import (
    ContactSettings,
    GridSettings,
    JobConfig,
    PlannerSettings,
    SequencingSettings,
    Settings,
)
from peelplan.geometry.fixtures import (
    FixtureScene,
    forest,
    internal_void,
    l_part,
    two_square,
    u_trap,
    wall_with_gap,
    write_job,
)
from peelplan.geometry.se3 import MetricWeights, RotationSample, sample_rotations
from peelplan.models.state import PlanningState
from peelplan.services.collision import CollisionChecker
from peelplan.services.solids import Scene
from peelplan.workflow.graph import create_initial_state
from peelplan.workflow.nodes.loader import SceneLoader

# Two voxels of tolerable overlap on the unit grid
EPSILON = 2.0

# ============ Settings Fixtures ============


@pytest.fixture
def grid_settings() -> GridSettings:
    """测试用体素网格配置."""
    return GridSettings(spacing=1.0)


@pytest.fixture
def contact_settings() -> ContactSettings:
    """测试用接触空间配置."""
    return ContactSettings(epsilon_voxels=2.0, query_points=1, ring_points=4)


@pytest.fixture
def planner_settings() -> PlannerSettings:
    """测试用路径规划配置 (小预算)."""
    return PlannerSettings(max_samples=2000, time_limit_s=30.0, seed=0)


@pytest.fixture
def sequencing_settings() -> SequencingSettings:
    """测试用访问排序配置."""
    return SequencingSettings(exact_tsp=False, exact_limit=8)


@pytest.fixture
def unit_weights() -> MetricWeights:
    """单位度量权重."""
    return MetricWeights(w_rot=1.0, w_trans=1.0)


@pytest.fixture
def rotations_2d() -> RotationSample:
    """八个等间距平面方向."""
    return sample_rotations(8, "grid2d", dimension=2)


# ============ Scene Fixtures ============


@pytest.fixture
def two_square_scene(grid_settings: GridSettings, contact_settings: ContactSettings) -> Scene:
    """正方形零件加一个支撑块."""
    return two_square().build(grid_settings, contact_settings)


@pytest.fixture
def l_part_scene(grid_settings: GridSettings, contact_settings: ContactSettings) -> Scene:
    """L 形零件, 悬臂下一根支撑柱."""
    return l_part().build(grid_settings, contact_settings)


@pytest.fixture
def forest_scene(grid_settings: GridSettings, contact_settings: ContactSettings) -> Scene:
    """四边各三根支撑柱, 需要两轮."""
    return forest().build(grid_settings, contact_settings)


@pytest.fixture
def void_scene(grid_settings: GridSettings, contact_settings: ContactSettings) -> Scene:
    """空腔内封闭支撑, 外加一个可达支撑."""
    return internal_void().build(grid_settings, contact_settings)


@pytest.fixture
def u_trap_scene(grid_settings: GridSettings) -> Scene:
    """只有一条窄缝的封闭腔室."""
    return u_trap().build(grid_settings)


@pytest.fixture
def wall_scene(grid_settings: GridSettings) -> Scene:
    """中间留有缺口的墙."""
    return wall_with_gap().build(grid_settings)


def _part_checker(scene: Scene) -> CollisionChecker:
    return CollisionChecker(
        near_net=scene.near_net([]),
        tool=scene.tool,
        epsilon=EPSILON * scene.part.cell_volume,
    )


@pytest.fixture
def wall_checker(wall_scene: Scene) -> CollisionChecker:
    """只含零件的体素碰撞检查器 (墙场景)."""
    return _part_checker(wall_scene)


@pytest.fixture
def u_trap_checker(u_trap_scene: Scene) -> CollisionChecker:
    """只含零件的体素碰撞检查器 (腔室场景)."""
    return _part_checker(u_trap_scene)


# ============ Job Fixtures ============


def _job(scene: FixtureScene, root: Path, **sections: dict) -> Path:
    return write_job(scene, root / scene.name, output_dir=root / "out", **sections)


@pytest.fixture
def two_square_job(tmp_path: Path) -> Path:
    """正方形场景的作业文件."""
    return _job(two_square(), tmp_path, planner={"max_samples": 5000, "time_limit_s": 60.0})


@pytest.fixture
def void_job(tmp_path: Path) -> Path:
    """空腔场景的作业文件."""
    return _job(internal_void(), tmp_path)


@pytest.fixture
def rng() -> np.random.Generator:
    """固定种子的随机数生成器."""
    return np.random.default_rng(7)


@pytest.fixture
def forest_job(tmp_path: Path) -> Path:
    """两轮场景的作业文件."""
    return _job(forest(), tmp_path, planner={"max_samples": 5000, "verify_mesh": False})


# ============ Workflow Fixtures ============


@pytest.fixture
def planning_job(two_square_job: Path) -> JobConfig:
    """已校验的正方形场景作业."""
    return JobConfig.from_file(two_square_job)


@pytest.fixture
def initial_state(planning_job: JobConfig, tmp_path: Path) -> PlanningState:
    """初始工作流状态."""
    return create_initial_state(planning_job, Settings(), tmp_path / "run")


@pytest.fixture
def loaded_state(initial_state: PlanningState) -> PlanningState:
    """场景已加载的工作流状态."""
    return SceneLoader()(initial_state)
