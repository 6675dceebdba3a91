"""Unit tests for overlap fields and the contact space."""

import itertools
import time
from collections import Counter

import numpy as np
import pytest
import shapely
import shapely.affinity

from peelplan.errors import GridTooLargeError
from peelplan.geometry.fixtures import bar_tool_3d, needle_tool
from peelplan.geometry.mesh import from_trimesh, polygon_mesh
from peelplan.geometry.se3 import RigidTransform, Rotation, RotationSample, sample_rotations
from peelplan.geometry.voxel import VoxelGrid
from peelplan.services.cspace import (
    ContactSpace,
    ContactState,
    classify,
    compute_fields,
    contact_space,
    count_limit,
    overlap_field,
    projected_contact_field,
    state_of,
)
from peelplan.services.solids import Scene, ToolModel


def _direct_counts(near_net: np.ndarray, lattice: np.ndarray, center: int) -> np.ndarray:
    """Overlap count for every tip cell, adding one shifted copy of N per tool voxel.

    Field cell m has the tip on N-cell m + center - (size - 1), so tool voxel k
    lands on N-cell m + k - (size - 1), i.e. padded cell m + k.
    """
    pad = lattice.shape[0] - 1
    padded = np.pad(near_net.astype(np.int64), pad)
    dims = tuple(n + pad for n in near_net.shape)
    counts = np.zeros(dims, dtype=np.int64)
    for k in zip(*np.nonzero(lattice), strict=True):
        counts += padded[tuple(slice(i, i + d) for i, d in zip(k, dims, strict=True))]
    return counts


def _footprint(tool: ToolModel, theta: float) -> np.ndarray:
    """Integer tip offsets whose cell centers lie inside the rotated tool polygon."""
    polygon = shapely.affinity.rotate(
        tool.mesh.polygon, theta, origin=(0.0, 0.0), use_radians=True
    )
    reach = tool.half_width
    offsets = np.array(
        list(itertools.product(range(-reach, reach + 1), repeat=2)), dtype=np.int64
    )
    inside = shapely.contains_xy(
        polygon, offsets[:, 0] * tool.spacing, offsets[:, 1] * tool.spacing
    )
    return offsets[inside]


def _enumerated_contacts(
    near_net: VoxelGrid, tool: ToolModel, rotations: RotationSample, limit: float
) -> set[tuple[int, tuple[int, ...]]]:
    """Place the tool at every rotation and tip cell and keep 0 < overlap < limit."""
    occupied = np.argwhere(near_net.values)
    contacts = set()
    for s, rotation in enumerate(rotations):
        overlaps: Counter[tuple[int, ...]] = Counter()
        footprint = _footprint(tool, rotation.theta or 0.0)
        for cell in occupied:
            for tip in cell - footprint:
                overlaps[tuple(int(i) for i in tip)] += 1
        contacts.update((s, tip) for tip, n in overlaps.items() if 0 < n < limit)
    return contacts


@pytest.fixture
def short_tool() -> ToolModel:
    """短针状刀具."""
    return ToolModel.from_mesh(polygon_mesh(needle_tool(2.5)), (0.0, 0.0), 1.0)


@pytest.fixture
def bar_tool() -> ToolModel:
    """在 9x9x9 格内的三维方棒刀具."""
    tool = ToolModel.from_mesh(from_trimesh(bar_tool_3d(length=2.5)), (0.0, 0.0, 0.0), 1.0)
    assert tool.shape == (9, 9, 9)
    return tool


class TestContactState:
    """测试接触分类阈值."""

    def test_thresholds(self) -> None:
        """0 为自由, 小于 epsilon 为接触, 否则碰撞."""
        limit = count_limit(2.0, 1.0)

        assert state_of(0, limit) == ContactState.FREE
        assert state_of(1, limit) == ContactState.CONTACT
        assert state_of(2, limit) == ContactState.COLLIDE

    def test_limit_snaps_to_integer(self) -> None:
        """浮点误差内的整数阈值被吸附."""
        assert count_limit(0.3, 0.1) == 3.0
        assert count_limit(2.5, 1.0) == 2.5


class TestOverlapField:
    """测试 FFT 互相关."""

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_direct_summation_2d(self, short_tool: ToolModel, seed: int) -> None:
        """二维随机网格 (至多 128x128) 上 FFT 计数与直接求和逐格相等."""
        rng = np.random.default_rng(seed)
        shape = (128, 128) if seed == 0 else tuple(int(n) for n in rng.integers(8, 129, size=2))
        values = rng.random(shape) < rng.uniform(0.1, 0.6)
        near_net = VoxelGrid(origin=np.array([-2.0, 3.0]), spacing=1.0, values=values)

        for rotation in sample_rotations(8, "grid2d", seed=seed):
            field = overlap_field(near_net, short_tool, rotation)

            expected = _direct_counts(values, short_tool.lattice(rotation), short_tool.center)
            np.testing.assert_array_equal(field.counts.values, expected)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_direct_summation_3d(self, bar_tool: ToolModel, seed: int) -> None:
        """三维随机网格 (至多 32^3, 刀具 9^3) 上 FFT 计数与直接求和逐格相等."""
        rng = np.random.default_rng(seed)
        shape = (32, 32, 32) if seed == 0 else tuple(int(n) for n in rng.integers(6, 33, size=3))
        values = rng.random(shape) < rng.uniform(0.1, 0.6)
        near_net = VoxelGrid(origin=np.zeros(3), spacing=1.0, values=values)

        for rotation in sample_rotations(8, "hopf", seed=seed):
            field = overlap_field(near_net, bar_tool, rotation)

            expected = _direct_counts(values, bar_tool.lattice(rotation), bar_tool.center)
            np.testing.assert_array_equal(field.counts.values, expected)

    def test_count_at_tip_cell(self, short_tool: ToolModel) -> None:
        """刀尖位于单个占据体素上时重叠为 1."""
        values = np.zeros((5, 5), dtype=bool)
        values[2, 2] = True
        near_net = VoxelGrid(origin=np.zeros(2), spacing=1.0, values=values)

        field = overlap_field(near_net, short_tool, Rotation.identity(2))

        assert field.count_at((2, 2)) == 1
        assert field.count_at((1, 2)) == 1
        assert field.count_at((2, 3)) == 0
        assert field.count_at((100, 100)) is None

    def test_fft_budget(self, short_tool: ToolModel) -> None:
        """超出 FFT 预算时报错."""
        near_net = VoxelGrid(origin=np.zeros(2), spacing=1.0, values=np.ones((8, 8), bool))
        sample = RotationSample((Rotation.identity(2),), "grid2d", 0)

        with pytest.raises(GridTooLargeError):
            compute_fields(near_net, short_tool, sample, 2.0, max_fft_cells=10)


class TestContactSpace:
    """测试接触空间."""

    @pytest.mark.parametrize("scene_fixture", ["two_square_scene", "l_part_scene", "forest_scene"])
    @pytest.mark.parametrize("n1", [8, 16])
    @pytest.mark.parametrize("epsilon", [2.0, 3.0])
    def test_matches_exhaustive_enumeration(
        self, request: pytest.FixtureRequest, scene_fixture: str, n1: int, epsilon: float
    ) -> None:
        """接触空间与逐一放置刀具枚举出的 0 < 重叠 < epsilon 位姿集合完全相同."""
        scene: Scene = request.getfixturevalue(scene_fixture)
        near_net = scene.near_net(range(len(scene.components)))
        rotations = sample_rotations(n1, "grid2d", dimension=2)

        space = contact_space(near_net, scene.tool, rotations, epsilon)

        expected = _enumerated_contacts(
            near_net, scene.tool, rotations, epsilon / near_net.cell_volume
        )
        assert expected
        assert space.members() == expected
        assert all(0 < overlap < epsilon for _, _, overlap in space.entries())

    def test_workers_do_not_change_fields(
        self, two_square_scene: Scene, rotations_2d: RotationSample
    ) -> None:
        """并行计算结果与串行一致且按方向排序."""
        near_net = two_square_scene.near_net([0])
        serial = compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0)
        parallel = compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0, workers=3)

        for a, b in zip(serial.fields, parallel.fields, strict=True):
            assert a.rotation_index == b.rotation_index
            np.testing.assert_array_equal(a.counts.values, b.counts.values)

    def test_projected_field_counts_orientations(
        self, two_square_scene: Scene, rotations_2d: RotationSample
    ) -> None:
        """投影场记录每个平移处处于接触的方向数."""
        near_net = two_square_scene.near_net([0])
        space = ContactSpace.from_fields(
            compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0)
        )

        projected = projected_contact_field(space)

        assert projected.values.sum() == len(space)
        assert projected.values.max() <= len(rotations_2d)

    def test_far_translation_is_free(
        self, two_square_scene: Scene, rotations_2d: RotationSample
    ) -> None:
        """远离场景的平移判为自由."""
        near_net = two_square_scene.near_net([0])
        stack = compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0)

        far = RigidTransform.create(rotations_2d[0], [500.0, 500.0])

        assert stack.lookup(far).state == ContactState.FREE


class TestClassify:
    """测试位姿分类."""

    def test_smaller_epsilon_turns_contact_into_collision(
        self, two_square_scene: Scene, rotations_2d: RotationSample
    ) -> None:
        """同一重叠在更小的 epsilon 下判为碰撞."""
        near_net = two_square_scene.near_net([0])
        stack = compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0)
        s, t, overlap = next(iter(ContactSpace.from_fields(stack).entries()))
        transform = RigidTransform.create(rotations_2d[s], t)

        assert overlap == pytest.approx(1.0)
        assert classify(stack, transform) == ContactState.CONTACT
        assert classify(stack, transform, epsilon=1.0) == ContactState.COLLIDE

    def test_contact_space_wrapper(
        self, two_square_scene: Scene, rotations_2d: RotationSample
    ) -> None:
        """contact_space 与先算场再筛选一致."""
        near_net = two_square_scene.near_net([0])

        space = contact_space(near_net, two_square_scene.tool, rotations_2d, 2.0)

        stack = compute_fields(near_net, two_square_scene.tool, rotations_2d, 2.0)
        assert len(space) == len(ContactSpace.from_fields(stack))


@pytest.mark.slow
class TestFieldScaling:
    """重叠场计算的性能检查."""

    def test_single_orientation_128(self, bar_tool: ToolModel) -> None:
        """128^3 网格上单个朝向的重叠场在 5 秒内完成."""
        rng = np.random.default_rng(0)
        values = rng.random((128, 128, 128)) < 0.2
        near_net = VoxelGrid(origin=np.zeros(3), spacing=1.0, values=values)

        started = time.perf_counter()
        field = overlap_field(near_net, bar_tool, Rotation.identity(3))
        elapsed = time.perf_counter() - started

        assert field.counts.dims == (136, 136, 136)
        assert elapsed < 5.0

    def test_linear_in_orientation_count(self, bar_tool: ToolModel) -> None:
        """朝向数从 8 到 64 时耗时按 n1 线性增长 (对数斜率 1.0 ± 0.15)."""
        rng = np.random.default_rng(1)
        values = rng.random((48, 48, 48)) < 0.2
        near_net = VoxelGrid(origin=np.zeros(3), spacing=1.0, values=values)
        counts = [8, 16, 32, 64]
        compute_fields(near_net, bar_tool, sample_rotations(4, "hopf"), epsilon=1.0)

        timings = []
        for n1 in counts:
            rotations = sample_rotations(n1, "hopf")
            started = time.perf_counter()
            compute_fields(near_net, bar_tool, rotations, epsilon=1.0)
            timings.append(time.perf_counter() - started)

        slope = np.polyfit(np.log(counts), np.log(timings), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.15)
