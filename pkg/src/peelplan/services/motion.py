"""Tool paths between consecutive fracture configurations.

Fracture configurations touch the support, so each leg first backs its
endpoints off into free space along a short straight approach segment, then
joins the freed endpoints with a straight line or, failing that, a
bidirectional RRT (RRT-Connect) over the scene box and the sampled
orientations. Edges are validated at the path resolution and at half of it.
"""

import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from itertools import pairwise
from typing import Any

import networkx as nx
import numpy as np
import structlog
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from peelplan.config.settings import PlannerSettings
from peelplan.errors import (
    GoalInCollisionError,
    MotionPlanningError,
    PathNotFoundError,
    StartInCollisionError,
)
from peelplan.geometry.se3 import (
    MetricWeights,
    RigidTransform,
    RotationSample,
    interpolate,
    pairwise_distances,
    stack_transforms,
)
from peelplan.services.collision import CollisionChecker
from peelplan.services.cspace import ContactState
from peelplan.services.fibration import Fiber
from peelplan.services.sequencing import VisitSequence, order_members, with_costs

logger = structlog.get_logger()

_REACHED = "reached"
_ADVANCED = "advanced"
_TRAPPED = "trapped"

_MAX_SUBDIVISION = 1 << 16
_STEP_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ToolPath:
    """Waypoints of one leg.

    The first ``approach_start`` and last ``approach_end`` waypoints form the
    straight approach segments at contact endpoints; they may touch N within
    epsilon. Every other waypoint is Free.
    """

    waypoints: tuple[RigidTransform, ...]
    from_feature: int | None
    to_feature: int | None
    resolution: float
    approach_start: int = 0
    approach_end: int = 0
    samples: int = 0

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def leg_id(self) -> str:
        def name(feature: int | None) -> str:
            return "reference" if feature is None else f"feature{feature}"

        return f"{name(self.from_feature)}->{name(self.to_feature)}"

    def in_approach(self, position: float) -> bool:
        """Whether waypoint ``position`` (or midpoint ``k + 0.5``) is on an approach segment."""
        last = len(self.waypoints) - 1
        return position < self.approach_start or position > last - self.approach_end

    @property
    def tip_trace(self) -> np.ndarray:
        """Tool-tip positions, shape (n, d)."""
        return np.array([w.translation for w in self.waypoints])

    def to_dict(self) -> dict[str, Any]:
        return {
            "leg": self.leg_id,
            "from_feature": self.from_feature,
            "to_feature": self.to_feature,
            "resolution": self.resolution,
            "approach_start": self.approach_start,
            "approach_end": self.approach_end,
            "samples": self.samples,
            "waypoints": [w.to_dict() for w in self.waypoints],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ToolPath":
        return cls(
            waypoints=tuple(RigidTransform.from_dict(w) for w in data["waypoints"]),
            from_feature=data.get("from_feature"),
            to_feature=data.get("to_feature"),
            resolution=float(data["resolution"]),
            approach_start=int(data.get("approach_start", 0)),
            approach_end=int(data.get("approach_end", 0)),
            samples=int(data.get("samples", 0)),
        )


@dataclass(frozen=True)
class LegFailure:
    """The leg a round's motion planning stopped at."""

    leg: int
    from_feature: int | None
    to_feature: int | None
    reason: str
    attempts: int


@dataclass(frozen=True, eq=False)
class RoundPlan:
    """Paths of one round, possibly cut short by a failed leg."""

    paths: tuple[ToolPath, ...]
    sequence: VisitSequence
    failure: LegFailure | None = None
    leg_seconds: tuple[float, ...] = ()

    @property
    def feasible(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class ReplayIssue:
    """A waypoint or midpoint that violates the path rules."""

    position: float
    state: ContactState
    approach: bool


def segment_distances(
    chain: Sequence[RigidTransform], weights: MetricWeights
) -> np.ndarray:
    """Distances between consecutive configurations of a chain."""
    if len(chain) < 2:
        return np.zeros(0)
    rotations, translations = stack_transforms(chain)
    head = (rotations[:-1], translations[:-1])
    tail = (rotations[1:], translations[1:])
    return np.diagonal(pairwise_distances(head, tail, weights)).copy()


def densify(
    a: RigidTransform, b: RigidTransform, max_step: float, weights: MetricWeights
) -> list[RigidTransform]:
    """Configurations after ``a`` up to ``b`` with consecutive distance at most ``max_step``."""
    distance = float(pairwise_distances([a], [b], weights)[0, 0])
    n = max(1, math.ceil(distance / max_step))
    while True:
        points = [interpolate(a, b, k / n) for k in range(1, n)] + [b]
        steps = segment_distances([a, *points], weights)
        if np.all(steps <= max_step * (1.0 + _STEP_SLACK)) or n >= _MAX_SUBDIVISION:
            return points
        n *= 2


def _chain_ok(
    chain: Sequence[RigidTransform], accept: Callable[[RigidTransform], bool]
) -> bool:
    """Every configuration after the first, and every midpoint, is accepted."""
    for previous, current in pairwise(chain):
        if not accept(interpolate(previous, current, 0.5)) or not accept(current):
            return False
    return True


def _release(
    endpoint: RigidTransform,
    checker: CollisionChecker,
    params: PlannerSettings,
    weights: MetricWeights,
    resolution: float,
) -> list[RigidTransform] | None:
    """Approach segment from an endpoint to a Free configuration, endpoint first.

    Retracts along the tool axis, then along the outward part normal, by
    growing multiples of ``retract_voxels``. Returns None when no retraction
    clears N.
    """

    def free(transform: RigidTransform) -> bool:
        return checker.check(transform, conservative=True) == ContactState.FREE

    if free(endpoint):
        return [endpoint]

    touch = checker.undilated()

    def touching(transform: RigidTransform) -> bool:
        return touch.check(transform) != ContactState.COLLIDE

    if not touching(endpoint):
        return None

    directions = [
        checker.tool.axis(endpoint.rotation),
        checker.outward_normal(endpoint.t),
    ]
    directions = [d for d in directions if np.linalg.norm(d) > 0.5]

    h = checker.near_net.spacing
    for attempt in range(params.perturb_retries + 1):
        distance = (attempt + 1) * params.retract_voxels * h
        for direction in directions:
            target = RigidTransform.create(
                endpoint.rotation, endpoint.t + distance * direction
            )
            if not free(target):
                continue
            segment = densify(endpoint, target, resolution, weights)
            chain = [endpoint, *segment]
            if all(touching(p) for p in segment[:-1]) and all(
                touching(interpolate(p, q, 0.5)) for p, q in pairwise(chain)
            ):
                return chain
    return None


class _Tree:
    """One RRT tree; nodes carry their configuration as ``conf``."""

    def __init__(self, root: RigidTransform):
        self.graph = nx.Graph()
        self.graph.add_node(0, conf=root)
        self._rotations = [root.rotation.as_array]
        self._translations = [root.t]

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def conf(self, node: int) -> RigidTransform:
        return self.graph.nodes[node]["conf"]

    def add(self, parent: int, conf: RigidTransform) -> int:
        node = len(self)
        self.graph.add_node(node, conf=conf)
        self.graph.add_edge(parent, node)
        self._rotations.append(conf.rotation.as_array)
        self._translations.append(conf.t)
        return node

    def nearest(self, target: RigidTransform, weights: MetricWeights) -> tuple[int, float]:
        arrays = (np.asarray(self._rotations), np.asarray(self._translations))
        distances = pairwise_distances([target], arrays, weights)[0]
        node = int(np.argmin(distances))
        return node, float(distances[node])

    def path_to(self, node: int) -> list[RigidTransform]:
        return [self.conf(n) for n in nx.shortest_path(self.graph, 0, node)]


def _rrt_connect(
    start: RigidTransform,
    goal: RigidTransform,
    edge_free: Callable[[RigidTransform, RigidTransform], bool],
    sample: Callable[[], RigidTransform],
    rng: np.random.Generator,
    weights: MetricWeights,
    params: PlannerSettings,
    step: float,
) -> tuple[list[RigidTransform] | None, int]:
    """Grow trees from both ends until they meet or the budget runs out."""
    tree_a, tree_b = _Tree(start), _Tree(goal)
    swapped = False
    deadline = time.monotonic() + params.time_limit_s

    def extend(tree: _Tree, target: RigidTransform) -> tuple[str, int]:
        near, distance = tree.nearest(target, weights)
        if distance == 0.0:
            return _REACHED, near
        source = tree.conf(near)
        if distance <= step:
            status, new = _REACHED, target
        else:
            status, new = _ADVANCED, interpolate(source, target, step / distance)
        if not edge_free(source, new):
            return _TRAPPED, near
        return status, tree.add(near, new)

    def connect(tree: _Tree, target: RigidTransform) -> tuple[str, int]:
        while True:
            status, node = extend(tree, target)
            if status != _ADVANCED:
                return status, node

    for count in range(1, params.max_samples + 1):
        if time.monotonic() > deadline:
            logger.warning("Leg planning hit the time limit", samples=count - 1)
            return None, count - 1

        if rng.random() < params.goal_bias:
            target = tree_b.conf(0)
        else:
            target = sample()

        status, node_a = extend(tree_a, target)
        if status != _TRAPPED:
            status_b, node_b = connect(tree_b, tree_a.conf(node_a))
            if status_b == _REACHED:
                path = tree_a.path_to(node_a) + tree_b.path_to(node_b)[::-1][1:]
                return (path[::-1] if swapped else path), count

        if len(tree_a) > len(tree_b):
            tree_a, tree_b = tree_b, tree_a
            swapped = not swapped

    return None, params.max_samples


def _sampler(
    checker: CollisionChecker,
    rotations: RotationSample,
    rng: np.random.Generator,
    endpoints: Sequence[RigidTransform],
) -> Callable[[], RigidTransform]:
    """Uniform translations over the scene box grown by the tool radius, sampled rotations."""
    lower, upper = checker.near_net.bounds
    reach = checker.tool.radius
    points = np.array([e.t for e in endpoints])
    lower = np.minimum(lower - reach, points.min(axis=0))
    upper = np.maximum(upper + reach, points.max(axis=0))

    def sample() -> RigidTransform:
        translation = rng.uniform(lower, upper)
        rotation = rotations[int(rng.integers(len(rotations)))]
        return RigidTransform.create(rotation, translation)

    return sample


def path_resolution(
    checker: CollisionChecker, params: PlannerSettings, weights: MetricWeights
) -> float:
    """Largest metric step between consecutive waypoints."""
    return params.step_voxels * checker.near_net.spacing * weights.w_trans


def plan_leg(
    start: RigidTransform,
    goal: RigidTransform,
    checker: CollisionChecker,
    params: PlannerSettings,
    weights: MetricWeights,
    rotations: RotationSample | None = None,
    rng: np.random.Generator | None = None,
    from_feature: int | None = None,
    to_feature: int | None = None,
) -> ToolPath:
    """Collision-free path between two configurations.

    Args:
        start: Leg start, Free or in contact.
        goal: Leg goal, Free or in contact.
        checker: Collision checker of the round.
        params: Planner settings (budget, retraction, step size).
        weights: Metric weights for nearest neighbours and step lengths.
        rotations: Orientations to sample; defaults to the checker's fields.
        rng: Random generator; defaults to one seeded from ``params.seed``.
        from_feature: Feature the leg starts at, None for the reference.
        to_feature: Feature the leg ends at, None for the reference.

    Returns:
        Waypoints from ``start`` to ``goal``.

    Raises:
        StartInCollisionError: No retraction frees the start.
        GoalInCollisionError: No retraction frees the goal.
        PathNotFoundError: Sample or time budget exhausted.
    """
    if rotations is None:
        if checker.fields is None:
            raise ValueError("Rotation sample required when the checker has no fields")
        rotations = checker.fields.rotations
    rng = rng or np.random.default_rng(params.seed)
    resolution = path_resolution(checker, params, weights)

    head = _release(start, checker, params, weights, resolution)
    if head is None:
        raise StartInCollisionError(f"Start of leg to {to_feature} cannot be freed")
    tail = _release(goal, checker, params, weights, resolution)
    if tail is None:
        raise GoalInCollisionError(f"Goal feature {to_feature} cannot be freed")

    def free(transform: RigidTransform) -> bool:
        return checker.check(transform, conservative=True) == ContactState.FREE

    def edge_free(a: RigidTransform, b: RigidTransform) -> bool:
        return _chain_ok([a, *densify(a, b, resolution, weights)], free)

    a, b = head[-1], tail[-1]
    samples = 0
    if edge_free(a, b):
        nodes = [a, b]
    else:
        sample = _sampler(checker, rotations, rng, [a, b])
        found, samples = _rrt_connect(
            a, b, edge_free, sample, rng, weights, params, params.extend_steps * resolution
        )
        if found is None:
            raise PathNotFoundError(
                f"No path to {'reference' if to_feature is None else f'feature {to_feature}'} "
                f"after {samples} samples"
            )
        nodes = found

    body = [nodes[0]]
    for p, q in pairwise(nodes):
        body.extend(densify(p, q, resolution, weights))

    waypoints = [*head[:-1], *body, *reversed(tail[:-1])]
    return ToolPath(
        waypoints=tuple(waypoints),
        from_feature=from_feature,
        to_feature=to_feature,
        resolution=resolution,
        approach_start=len(head) - 1,
        approach_end=len(tail) - 1,
        samples=samples,
    )


def replay_leg(path: ToolPath, checker: CollisionChecker) -> list[ReplayIssue]:
    """Re-check every waypoint and midpoint of a path.

    Approach waypoints may be in contact; all others must be Free under the
    conservative check.
    """
    touch = checker.undilated()
    issues: list[ReplayIssue] = []

    def judge(position: float, transform: RigidTransform) -> None:
        approach = path.in_approach(position)
        if approach:
            state = touch.check(transform)
            ok = state != ContactState.COLLIDE
        else:
            state = checker.check(transform, conservative=True)
            ok = state == ContactState.FREE
        if not ok:
            issues.append(ReplayIssue(position, state, approach))

    for k, waypoint in enumerate(path.waypoints):
        judge(float(k), waypoint)
        if k:
            judge(k - 0.5, interpolate(path.waypoints[k - 1], waypoint, 0.5))
    return issues


def plan_round(
    sequence: VisitSequence,
    checker: CollisionChecker,
    params: PlannerSettings,
    fibers: Sequence[Fiber],
    rotations: RotationSample | None = None,
    round_index: int = 0,
    verifier: CollisionChecker | None = None,
) -> RoundPlan:
    """Plan every leg of a round's tour, including the return to the reference.

    A failed leg is retried against the next-nearest members of the target
    fiber. Each leg draws from its own generator seeded by
    ``(seed, round, leg, attempt)``.

    Args:
        sequence: Visit order with chosen fracture configurations.
        checker: Collision checker of the round.
        params: Planner settings.
        fibers: Fibers of the round, looked up by feature id.
        rotations: Orientation sample for the tree search.
        round_index: Round counter, part of the seed.
        verifier: Second checker every leg is replayed through before it is kept.

    Returns:
        Paths for all legs, or the legs up to the first failure.
    """
    weights = sequence.weights
    by_feature = {f.feature_id: f for f in fibers}
    configurations = list(sequence.configurations)
    members = list(sequence.member_indices)
    stops: list[int | None] = [*sequence.feature_ids, None]

    paths: list[ToolPath] = []
    seconds: list[float] = []
    previous = sequence.reference
    previous_feature: int | None = None

    for leg, feature_id in enumerate(stops):
        if feature_id is None:
            candidates = [(-1, sequence.reference)]
        else:
            fiber = by_feature[feature_id]
            ordered = [members[leg]] + [
                i for i in order_members(fiber, previous, weights) if i != members[leg]
            ]
            candidates = [(i, fiber.members[i].transform) for i in ordered]

        attempts = min(params.member_retries + 1, len(candidates))
        started = time.perf_counter()
        attempt_number = 0
        try:
            for attempt in Retrying(
                stop=stop_after_attempt(attempts),
                retry=retry_if_exception_type((PathNotFoundError, GoalInCollisionError)),
                reraise=True,
            ):
                with attempt:
                    attempt_number = attempt.retry_state.attempt_number
                    member, goal = candidates[attempt_number - 1]
                    rng = np.random.default_rng(
                        np.random.SeedSequence(
                            [params.seed, round_index, leg, attempt_number - 1]
                        )
                    )
                    path = plan_leg(
                        previous,
                        goal,
                        checker,
                        params,
                        weights,
                        rotations=rotations,
                        rng=rng,
                        from_feature=previous_feature,
                        to_feature=feature_id,
                    )
                    if verifier is not None:
                        issues = replay_leg(path, verifier)
                        if issues:
                            raise PathNotFoundError(
                                f"Leg {path.leg_id} rejected by mesh replay at "
                                f"{len(issues)} points"
                            )
        except MotionPlanningError as e:
            failure = LegFailure(
                leg=leg,
                from_feature=previous_feature,
                to_feature=feature_id,
                reason=f"{type(e).__name__}: {e}",
                attempts=attempt_number,
            )
            logger.warning(
                "Leg planning failed",
                round_index=round_index,
                leg=leg,
                from_feature=previous_feature,
                to_feature=feature_id,
                attempts=attempt_number,
                reason=failure.reason,
            )
            updated = _updated_sequence(sequence, configurations, members)
            return RoundPlan(tuple(paths), updated, failure, tuple(seconds))

        seconds.append(time.perf_counter() - started)
        if feature_id is not None:
            members[leg] = member
            configurations[leg] = goal
            if attempt_number > 1:
                logger.info(
                    "Leg planned with substitute fiber member",
                    round_index=round_index,
                    feature_id=feature_id,
                    member=member,
                )
        paths.append(path)
        previous = goal
        previous_feature = feature_id

    logger.info(
        "Planned round paths",
        round_index=round_index,
        legs=len(paths),
        waypoints=sum(len(p) for p in paths),
    )
    updated = _updated_sequence(sequence, configurations, members)
    return RoundPlan(tuple(paths), updated, None, tuple(seconds))


def _updated_sequence(
    sequence: VisitSequence,
    configurations: Sequence[RigidTransform],
    members: Sequence[int],
) -> VisitSequence:
    updated = replace(
        sequence,
        configurations=tuple(configurations),
        member_indices=tuple(members),
    )
    return with_costs(updated)
