"""Unit tests for collision checking."""

import math

import numpy as np
import pytest

from peelplan.config.settings import CheckerMode
from peelplan.geometry.se3 import RigidTransform, Rotation, RotationSample
from peelplan.services.collision import CollisionChecker, near_net_meshes
from peelplan.services.cspace import ContactState, compute_fields
from peelplan.services.solids import Scene

DOWN = 3 * math.pi / 2


def _pose(x: float, y: float, theta: float) -> RigidTransform:
    return RigidTransform.create(Rotation.from_angle(theta), [x, y])


@pytest.fixture
def mesh_checker(wall_checker: CollisionChecker, wall_scene: Scene) -> CollisionChecker:
    """网格模式的墙场景检查器."""
    return wall_checker.with_mode(CheckerMode.MESH, near_net_meshes(wall_scene))


class TestVoxelChecker:
    """测试体素碰撞检查."""

    @pytest.mark.parametrize(
        ("pose", "expected"),
        [
            ((5.5, 17.5, DOWN), ContactState.FREE),
            ((5.5, 18.5, DOWN), ContactState.CONTACT),
            ((5.5, 19.5, 0.0), ContactState.COLLIDE),
            ((20.0, 20.0, math.pi / 2), ContactState.FREE),
        ],
    )
    def test_states_near_wall(
        self,
        wall_checker: CollisionChecker,
        pose: tuple[float, float, float],
        expected: ContactState,
    ) -> None:
        """刀具贴墙, 刺入一格, 深插三种情况."""
        assert wall_checker.check(_pose(*pose), conservative=True) == expected

    def test_dilation_blocks_touching_pose(self, wall_checker: CollisionChecker) -> None:
        """膨胀后贴墙位姿不再自由, 去膨胀后恢复."""
        dilated = CollisionChecker(
            near_net=wall_checker.near_net,
            tool=wall_checker.tool,
            epsilon=wall_checker.epsilon,
            dilation_voxels=1,
        )
        pose = _pose(5.5, 17.5, DOWN)

        assert dilated.check(pose, conservative=True) != ContactState.FREE
        assert dilated.undilated().check(pose, conservative=True) == ContactState.FREE
        assert wall_checker.undilated() is wall_checker

    def test_conservative_free_implies_field_free(
        self, wall_scene: Scene, rotations_2d: RotationSample, rng: np.random.Generator
    ) -> None:
        """保守检查判为自由时, 采样场也判为自由."""
        near_net = wall_scene.near_net([])
        fields = compute_fields(near_net, wall_scene.tool, rotations_2d, 2.0)
        checker = CollisionChecker(
            near_net=near_net, tool=wall_scene.tool, epsilon=2.0, fields=fields
        )
        cells = np.stack([rng.integers(0, n, size=200) for n in near_net.dims], axis=1)
        centers = near_net.centers_of(cells)

        for k, center in enumerate(centers):
            pose = RigidTransform.create(rotations_2d[k % len(rotations_2d)], center)
            if checker.check(pose, conservative=True) == ContactState.FREE:
                assert fields.lookup(pose).state == ContactState.FREE


class TestMeshChecker:
    """测试网格碰撞检查."""

    def test_mesh_mode_requires_meshes(self, wall_checker: CollisionChecker) -> None:
        """网格模式缺少源网格时报错."""
        with pytest.raises(ValueError):
            wall_checker.with_mode(CheckerMode.MESH)

    @pytest.mark.parametrize(
        ("pose", "expected"),
        [
            ((5.5, 17.5, DOWN), ContactState.FREE),
            ((5.5, 18.5, DOWN), ContactState.CONTACT),
            ((5.5, 19.5, 0.0), ContactState.COLLIDE),
        ],
    )
    def test_mesh_agrees_on_grid_aligned_poses(
        self,
        mesh_checker: CollisionChecker,
        pose: tuple[float, float, float],
        expected: ContactState,
    ) -> None:
        """网格对齐时体素与网格结果一致."""
        assert mesh_checker.check(_pose(*pose)) == expected

    def test_touching_boundary_is_free(self, mesh_checker: CollisionChecker) -> None:
        """仅边界接触不计重叠."""
        assert mesh_checker.check(_pose(17.0, 17.5, 0.0)) == ContactState.FREE
