"""Integration tests for the planning pipeline: plan, artifacts, validation."""

import json
import time
from pathlib import Path

import pytest

from peelplan.config.settings import JobConfig
from peelplan.geometry.fixtures import forest, write_job
from peelplan.models.plan import PlanDocument
from peelplan.models.state import PlanStatus, Verdict
from peelplan.planner import SupportRemovalPlanner


class TestPlanRun:
    """规划运行级别集成测试."""

    def test_two_square_all_removed(self, square_plan: PlanDocument) -> None:
        """单支撑场景一轮移除, 去回两段路径."""
        assert square_plan.status == PlanStatus.COMPLETED
        assert square_plan.verdict == Verdict.ALL_REMOVED
        assert len(square_plan.rounds) == 1
        assert square_plan.rounds[0].removable == [0]
        assert square_plan.path_count == 2
        assert square_plan.remaining == []

    def test_artifacts_written(self, square_plan: PlanDocument, output_dir: Path) -> None:
        """输出目录包含计划, 摘要, 轮次日志和路径轨迹."""
        assert PlanDocument.from_file(output_dir / "plan.json") == square_plan

        summary = json.loads((output_dir / "summary.json").read_text(encoding="utf-8"))
        assert summary["verdict"] == "all_removed_with_paths"
        assert summary["removed_components"] == [0]
        assert "total_s" in summary["timings"]

        rounds = (output_dir / "rounds.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(rounds) == 1
        assert json.loads(rounds[0])["legs"] == 2

        traces = sorted(p.name for p in (output_dir / "paths").glob("*.obj"))
        assert traces == ["round0_leg0.obj", "round0_leg1.obj"]

    def test_plan_has_no_wall_clock(self, square_plan: PlanDocument) -> None:
        """计划文档不含时间信息且不记录输出目录."""
        text = square_plan.to_json()

        assert "timings" not in text
        assert "output_dir" not in square_plan.config

    def test_deterministic(
        self,
        planner: SupportRemovalPlanner,
        square_job: JobConfig,
        square_plan: PlanDocument,
        tmp_path: Path,
    ) -> None:
        """相同作业与种子得到逐字节相同的计划."""
        again = planner.run(square_job.model_copy(update={"output_dir": tmp_path / "again"}))

        assert again.to_json() == square_plan.to_json()

    def test_internal_void_unreachable(self, planner: SupportRemovalPlanner, void_job: Path) -> None:
        """封闭空腔的支撑判为不可达, 并给出阻挡特征."""
        document = planner.run(JobConfig.from_file(void_job))

        assert document.verdict == Verdict.UNREACHABLE
        assert document.remaining == [0]
        assert document.blocking_features
        assert document.rounds[-1].removable == []


class TestValidate:
    """计划回放验证集成测试."""

    def test_plan_validates(
        self, planner: SupportRemovalPlanner, square_plan: PlanDocument, square_job: JobConfig
    ) -> None:
        """规划结果通过全部检查."""
        report = planner.validate(square_plan, square_job)

        assert report.passed, [c.model_dump() for c in report.failures]
        names = {c.name for c in report.checks}
        assert {"path_replay", "path_resolution", "path_endpoints", "verdict_consistent"} <= names

    def test_refined_grid(
        self, planner: SupportRemovalPlanner, square_plan: PlanDocument, square_job: JobConfig
    ) -> None:
        """细化网格后报告记录细化倍数."""
        report = planner.validate(square_plan, square_job, refine=2)

        assert report.refine == 2
        assert any(c.name == "fracture_contact_refined" for c in report.checks)

    def test_corrupted_waypoint(
        self, planner: SupportRemovalPlanner, square_plan: PlanDocument, square_job: JobConfig
    ) -> None:
        """把一个航点移入零件内部后回放失败."""
        corrupted = square_plan.model_copy(deep=True)
        leg = corrupted.rounds[0].paths[0]
        leg.waypoints[leg.approach_start + 1] = {"theta": 0.0, "translation": [4.0, 4.0]}

        report = planner.validate(corrupted, square_job)

        replay = [c for c in report.failures if c.name == "path_replay"]
        assert len(replay) == 1
        assert (replay[0].round_index, replay[0].leg) == (0, 0)
        assert not report.passed

    def test_failed_plan_reported(
        self, planner: SupportRemovalPlanner, square_plan: PlanDocument, square_job: JobConfig
    ) -> None:
        """失败的计划不做回放."""
        failed = square_plan.model_copy(update={"status": PlanStatus.FAILED, "error": "boom"})

        report = planner.validate(failed, square_job)

        assert [c.name for c in report.failures] == ["plan_completed"]


class TestBracket3D:
    """三维支架场景集成测试."""

    def test_all_removed(self, bracket_plan: PlanDocument) -> None:
        """两根支撑柱全部移除, 每轮去回路径齐全."""
        assert bracket_plan.status == PlanStatus.COMPLETED
        assert bracket_plan.verdict == Verdict.ALL_REMOVED
        assert sorted(c for r in bracket_plan.rounds for c in r.removable) == [0, 1]
        assert bracket_plan.remaining == []
        assert bracket_plan.path_count == sum(
            len(r.removable) + 1 for r in bracket_plan.rounds if r.removable
        )

    def test_mesh_replay_passes(
        self, planner: SupportRemovalPlanner, bracket_plan: PlanDocument, bracket_job: JobConfig
    ) -> None:
        """每条路径在网格碰撞模式下回放无碰撞, 全部检查通过."""
        report = planner.validate(bracket_plan, bracket_job)

        assert report.passed, [c.model_dump() for c in report.failures]
        assert report.mode == "mesh"
        replays = [c for c in report.checks if c.name == "path_replay"]
        assert len(replays) == bracket_plan.path_count


@pytest.mark.slow
class TestScaled:
    """较大场景的性能检查."""

    def test_forest_two_rounds(self, planner: SupportRemovalPlanner, tmp_path: Path) -> None:
        """森林场景两轮全部移除且通过验证."""
        path = write_job(
            forest(),
            tmp_path / "forest",
            output_dir=tmp_path / "out",
            planner={"max_samples": 5000, "verify_mesh": False},
        )
        job = JobConfig.from_file(path)

        started = time.perf_counter()
        document = planner.run(job)
        elapsed = time.perf_counter() - started

        assert document.verdict == Verdict.ALL_REMOVED
        assert [len(r.removable) for r in document.rounds] == [8, 4]
        assert document.path_count == 8 + 1 + 4 + 1
        assert planner.validate(document, job).passed
        assert elapsed < 600
