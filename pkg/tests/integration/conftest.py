"""Fixtures for integration tests."""

from pathlib import Path

import pytest

from peelplan.config.settings import JobConfig, Settings
from peelplan.geometry.fixtures import bracket_3d, two_square, write_job
from peelplan.models.plan import PlanDocument
from peelplan.planner import SupportRemovalPlanner


@pytest.fixture(scope="module")
def planner() -> SupportRemovalPlanner:
    """使用默认配置的规划器."""
    return SupportRemovalPlanner(Settings())


@pytest.fixture(scope="module")
def square_job(tmp_path_factory: pytest.TempPathFactory) -> JobConfig:
    """正方形场景作业, 模块内共享."""
    root = tmp_path_factory.mktemp("square")
    path = write_job(
        two_square(),
        root / "job",
        output_dir=root / "out",
        planner={"max_samples": 5000, "time_limit_s": 60.0},
    )
    return JobConfig.from_file(path)


@pytest.fixture(scope="module")
def square_plan(planner: SupportRemovalPlanner, square_job: JobConfig) -> PlanDocument:
    """正方形场景的规划结果."""
    return planner.run(square_job)


@pytest.fixture
def output_dir(square_job: JobConfig) -> Path:
    """正方形场景的输出目录."""
    return Path(square_job.output_dir)


@pytest.fixture(scope="module")
def bracket_job(tmp_path_factory: pytest.TempPathFactory) -> JobConfig:
    """三维支架场景作业, 模块内共享."""
    root = tmp_path_factory.mktemp("bracket")
    path = write_job(
        bracket_3d(),
        root / "job",
        output_dir=root / "out",
        planner={"max_samples": 5000, "time_limit_s": 60.0},
    )
    return JobConfig.from_file(path)


@pytest.fixture(scope="module")
def bracket_plan(planner: SupportRemovalPlanner, bracket_job: JobConfig) -> PlanDocument:
    """三维支架场景的规划结果."""
    return planner.run(bracket_job)
