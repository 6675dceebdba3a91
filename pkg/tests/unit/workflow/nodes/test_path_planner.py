"""Unit tests for PathPlanner node."""

from peelplan.models.state import PlanningState, PlanStatus
from peelplan.services.collision import round_checker
from peelplan.services.motion import replay_leg
from peelplan.workflow.nodes.identifier import RemovableIdentifier
from peelplan.workflow.nodes.path_planner import PathPlanner
from peelplan.workflow.nodes.sequencer import VisitSequencer


def _ordered(state: PlanningState) -> PlanningState:
    return VisitSequencer()(RemovableIdentifier()(state))


class TestPathPlanner:
    """测试 PathPlanner 节点."""

    def test_plans_every_leg(self, loaded_state: PlanningState) -> None:
        """去程与回程两段路径均可规划且可回放."""
        state = _ordered(loaded_state)

        new_state = PathPlanner()(state)

        plan = new_state["round_plan"]
        assert plan.feasible
        assert [p.to_feature for p in plan.paths] == [0, None]
        assert "paths_s" in new_state["round_timings"]

        result = state["current_round"]
        checker = round_checker(
            state["scene"],
            result.near_net,
            result.remaining,
            state["epsilon"],
            state["job"].planner,
            fields=result.fields,
        )
        for path in plan.paths:
            assert replay_leg(path, checker) == []

    def test_legs_join_up(self, loaded_state: PlanningState) -> None:
        """每段终点是下一段起点."""
        plan = PathPlanner()(_ordered(loaded_state))["round_plan"]

        first, second = plan.paths
        assert first.waypoints[0] == loaded_state["reference"]
        assert first.waypoints[-1] == second.waypoints[0]
        assert second.waypoints[-1] == loaded_state["reference"]

    def test_planning_error(self, loaded_state: PlanningState) -> None:
        """缺少旋转采样和场时返回规划错误."""
        state = _ordered(loaded_state)
        state["current_round"].release()
        state = {**state, "rotations": None}

        new_state = PathPlanner()(state)

        assert new_state["status"] == PlanStatus.FAILED
        assert new_state["error"].startswith("Path planning error")
