"""Unit tests for leg planning and path replay."""

import math

import numpy as np
import pytest

from peelplan.config.settings import PlannerSettings
from peelplan.errors import PathNotFoundError, StartInCollisionError
from peelplan.geometry.se3 import MetricWeights, RigidTransform, Rotation, RotationSample
from peelplan.services.collision import CollisionChecker
from peelplan.services.cspace import ContactState
from peelplan.services.motion import (
    densify,
    plan_leg,
    replay_leg,
    segment_distances,
)

UP = math.pi / 2
DOWN = 3 * math.pi / 2


def _pose(x: float, y: float, theta: float) -> RigidTransform:
    return RigidTransform.create(Rotation.from_angle(theta), [x, y])


class TestDensify:
    """测试路径加密."""

    def test_steps_bounded(self, unit_weights: MetricWeights) -> None:
        """相邻点距离不超过步长且终点保留."""
        a, b = _pose(0.0, 0.0, 0.0), _pose(7.0, 3.0, 2.0)

        points = densify(a, b, 0.5, unit_weights)

        assert np.all(segment_distances([a, *points], unit_weights) <= 0.5 + 1e-9)
        assert points[-1] is b


class TestPlanLeg:
    """测试单段路径规划."""

    def test_straight_line_needs_no_samples(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """直线可达时不采样."""
        path = plan_leg(
            _pose(5.0, 5.0, UP),
            _pose(30.0, 5.0, UP),
            wall_checker,
            planner_settings,
            unit_weights,
            rotations=rotations_2d,
        )

        assert path.samples == 0
        assert len(path) == 26
        assert path.approach_start == path.approach_end == 0

    def test_path_through_gap(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """穿过墙缺口的路径全程自由且步长受限."""
        start, goal = _pose(5.0, 5.0, UP), _pose(5.0, 32.0, DOWN)

        path = plan_leg(
            start,
            goal,
            wall_checker,
            planner_settings,
            unit_weights,
            rotations=rotations_2d,
            rng=np.random.default_rng(1),
        )

        assert path.samples > 0
        np.testing.assert_allclose(path.waypoints[0].matrix, start.matrix)
        np.testing.assert_allclose(path.waypoints[-1].matrix, goal.matrix)
        assert np.all(
            segment_distances(path.waypoints, unit_weights) <= path.resolution * (1 + 1e-6)
        )
        for waypoint in path.waypoints:
            assert wall_checker.check(waypoint, conservative=True) == ContactState.FREE
        assert replay_leg(path, wall_checker) == []

    def test_same_seed_same_path(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """相同随机种子得到相同路径."""
        start, goal = _pose(5.0, 5.0, UP), _pose(5.0, 32.0, DOWN)

        first, second = (
            plan_leg(
                start,
                goal,
                wall_checker,
                planner_settings,
                unit_weights,
                rotations=rotations_2d,
                rng=np.random.default_rng(3),
            )
            for _ in range(2)
        )

        assert len(first) == len(second)
        for a, b in zip(first.waypoints, second.waypoints, strict=True):
            np.testing.assert_allclose(a.matrix, b.matrix)

    def test_contact_start_gets_approach(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """接触起点先沿刀轴退出."""
        start = _pose(5.5, 18.5, DOWN)
        assert wall_checker.check(start, conservative=True) == ContactState.CONTACT

        path = plan_leg(
            start,
            _pose(30.0, 5.0, DOWN),
            wall_checker,
            planner_settings,
            unit_weights,
            rotations=rotations_2d,
        )

        assert path.approach_start >= 1
        assert path.in_approach(0.0)
        assert replay_leg(path, wall_checker) == []

    def test_start_in_collision(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """深插在墙内的起点无法退出."""
        with pytest.raises(StartInCollisionError):
            plan_leg(
                _pose(8.0, 20.0, 0.0),
                _pose(30.0, 5.0, UP),
                wall_checker,
                planner_settings,
                unit_weights,
                rotations=rotations_2d,
            )

    def test_trapped_goal_not_found(
        self,
        u_trap_checker: CollisionChecker,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """宽刀具无法通过窄缝进入腔室."""
        params = PlannerSettings(max_samples=200, time_limit_s=20.0)

        with pytest.raises(PathNotFoundError):
            plan_leg(
                _pose(30.0, 10.0, 0.0),
                _pose(4.0, 10.0, 0.0),
                u_trap_checker,
                params,
                unit_weights,
                rotations=rotations_2d,
            )

    def test_missing_rotations(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
    ) -> None:
        """没有场也没有旋转采样时报错."""
        with pytest.raises(ValueError):
            plan_leg(
                _pose(5.0, 5.0, UP),
                _pose(30.0, 5.0, UP),
                wall_checker,
                planner_settings,
                unit_weights,
            )


class TestReplay:
    """测试路径回放."""

    def test_corrupted_waypoint_reported(
        self,
        wall_checker: CollisionChecker,
        planner_settings: PlannerSettings,
        unit_weights: MetricWeights,
        rotations_2d: RotationSample,
    ) -> None:
        """被改入墙内的航点被报告."""
        path = plan_leg(
            _pose(5.0, 5.0, UP),
            _pose(30.0, 5.0, UP),
            wall_checker,
            planner_settings,
            unit_weights,
            rotations=rotations_2d,
        )
        waypoints = list(path.waypoints)
        waypoints[10] = _pose(8.0, 20.0, 0.0)
        broken = type(path)(
            waypoints=tuple(waypoints),
            from_feature=path.from_feature,
            to_feature=path.to_feature,
            resolution=path.resolution,
        )

        issues = replay_leg(broken, wall_checker)

        assert any(issue.position == 10.0 for issue in issues)
        assert all(not issue.approach for issue in issues)
