"""Unit tests for workflow graph routing logic."""

from pathlib import Path
from types import SimpleNamespace

from langgraph.graph import END

from peelplan.config.settings import JobConfig, Settings
from peelplan.geometry.fixtures import wall_with_gap, write_job
from peelplan.models.state import PlanningState, PlanStatus, Verdict
from peelplan.workflow.graph import (
    PlanningWorkflow,
    handle_error,
    should_continue_after_identify,
    should_continue_after_load,
    should_continue_after_order,
    should_continue_after_peel,
    should_continue_after_plan,
)


class TestShouldContinueAfterLoad:
    """测试 load 节点后的路由逻辑."""

    def test_returns_handle_error_when_error_present(
        self, initial_state: PlanningState
    ) -> None:
        """有错误时应路由到 handle_error."""
        state = {**initial_state, "error": "Load error: bad mesh"}

        result = should_continue_after_load(state)

        assert result == "handle_error"

    def test_returns_end_when_verdict_set(self, initial_state: PlanningState) -> None:
        """没有支撑时直接结束."""
        state = {**initial_state, "verdict": Verdict.ALL_REMOVED}

        result = should_continue_after_load(state)

        assert result == END

    def test_returns_identify(self, initial_state: PlanningState) -> None:
        """正常加载后进入识别."""
        result = should_continue_after_load(initial_state)

        assert result == "identify"


class TestShouldContinueAfterIdentify:
    """测试 identify 节点后的路由逻辑."""

    def test_empty_round_goes_to_peel(self, initial_state: PlanningState) -> None:
        """无可移除支撑时跳过排序与规划."""
        state = {**initial_state, "current_round": SimpleNamespace(removable=())}

        result = should_continue_after_identify(state)

        assert result == "peel"

    def test_removable_round_goes_to_order(self, initial_state: PlanningState) -> None:
        """有可移除支撑时进入排序."""
        state = {**initial_state, "current_round": SimpleNamespace(removable=(0,))}

        result = should_continue_after_identify(state)

        assert result == "order"

    def test_error_takes_precedence(self, initial_state: PlanningState) -> None:
        """错误优先于轮次结果."""
        state = {
            **initial_state,
            "current_round": SimpleNamespace(removable=(0,)),
            "error": "Identification error",
        }

        result = should_continue_after_identify(state)

        assert result == "handle_error"


class TestShouldContinueAfterRound:
    """测试 order/plan_paths/peel 节点后的路由逻辑."""

    def test_order_then_plan(self, initial_state: PlanningState) -> None:
        """排序后进入路径规划."""
        assert should_continue_after_order(initial_state) == "plan_paths"
        assert should_continue_after_order({**initial_state, "error": "x"}) == "handle_error"

    def test_plan_then_peel(self, initial_state: PlanningState) -> None:
        """规划后进入剥离."""
        assert should_continue_after_plan(initial_state) == "peel"
        assert should_continue_after_plan({**initial_state, "error": "x"}) == "handle_error"

    def test_peel_loops_until_verdict(self, initial_state: PlanningState) -> None:
        """未得出结论时继续下一轮."""
        assert should_continue_after_peel(initial_state) == "identify"
        assert should_continue_after_peel({**initial_state, "verdict": Verdict.UNREACHABLE}) == END


class TestHandleError:
    """测试错误处理节点."""

    def test_marks_failed(self, initial_state: PlanningState) -> None:
        """错误状态应标记为失败并记录结束时间."""
        state = {**initial_state, "error": "Sequencing error: boom"}

        result = handle_error(state)

        assert result["status"] == PlanStatus.FAILED
        assert result["end_time"] is not None
        assert result["error"] == "Sequencing error: boom"

    def test_without_job(self) -> None:
        """缺少作业时也能处理."""
        result = handle_error({"error": "early failure"})

        assert result["status"] == PlanStatus.FAILED


class TestPlanningWorkflow:
    """测试完整工作流."""

    def test_scene_without_support(self, tmp_path: Path) -> None:
        """没有支撑的场景零轮完成."""
        job = JobConfig.from_file(write_job(wall_with_gap(), tmp_path / "wall"))

        state = PlanningWorkflow(Settings()).run(job, tmp_path / "out")

        assert state["verdict"] == Verdict.ALL_REMOVED
        assert state["status"] == PlanStatus.COMPLETED
        assert state["rounds"] == []

    def test_internal_void_unreachable(self, void_job: Path, tmp_path: Path) -> None:
        """封闭空腔的支撑判为不可达."""
        job = JobConfig.from_file(void_job)

        state = PlanningWorkflow(Settings()).run(job, tmp_path / "run")

        assert state["verdict"] == Verdict.UNREACHABLE
        assert state["remaining"] == [0]
        assert len(state["rounds"]) == 2
        assert (tmp_path / "run" / "rounds.jsonl").read_text().count("\n") == 2
