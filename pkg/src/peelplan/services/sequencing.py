"""Visit ordering within a round.

Fibers of the round plus a reference configuration form a complete graph
weighted by fiber distance. The tour is the preorder walk of its minimum
spanning tree (a 2-approximation when the weights obey the triangle
inequality), or an exact Held-Karp tour for small rounds. A greedy pass then
picks concrete fracture configurations along the tour.
"""

import itertools
from collections.abc import Sequence
from dataclasses import dataclass, replace

import networkx as nx
import numpy as np
import structlog

from peelplan.errors import EmptyFiberError
from peelplan.geometry.se3 import (
    MetricWeights,
    RigidTransform,
    pairwise_distances,
    stack_transforms,
    triangle_audit,
)
from peelplan.services.fibration import Fiber

logger = structlog.get_logger()

REFERENCE = 0
_COST_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class FiberGraph:
    """Complete graph; vertex 0 is the reference, vertex k the k-th fiber."""

    graph: nx.Graph
    fibers: tuple[Fiber, ...]
    reference: RigidTransform
    weights: MetricWeights

    @property
    def size(self) -> int:
        return self.graph.number_of_nodes()

    def weight(self, u: int, v: int) -> float:
        if u == v:
            return 0.0
        return float(self.graph.edges[u, v]["weight"])

    def configurations(self, vertex: int) -> list[RigidTransform]:
        if vertex == REFERENCE:
            return [self.reference]
        return self.fibers[vertex - 1].transforms

    def pair(self, u: int, v: int) -> tuple[int, int]:
        """Cached argmin member indices ``(index in u, index in v)``."""
        a, b = self.graph.edges[u, v]["pair"][min(u, v), max(u, v)]
        return (a, b) if u < v else (b, a)

    def feature_id(self, vertex: int) -> int | None:
        return None if vertex == REFERENCE else self.fibers[vertex - 1].feature_id


@dataclass(frozen=True, eq=False)
class VisitSequence:
    """Tour through the round's fibers with concrete fracture configurations."""

    vertices: tuple[int, ...]
    feature_ids: tuple[int, ...]
    configurations: tuple[RigidTransform, ...]
    member_indices: tuple[int, ...]
    reference: RigidTransform
    leg_costs: tuple[float, ...]
    cost: float
    graph_cost: float
    mst_weight: float
    triangle_ok: bool
    bound_holds: bool | None
    weights: MetricWeights
    exact: bool = False

    @property
    def waypoints(self) -> list[RigidTransform]:
        """Reference, fracture configurations, reference."""
        return [self.reference, *self.configurations, self.reference]


def build_graph(
    fibers: Sequence[Fiber], reference: RigidTransform, weights: MetricWeights
) -> FiberGraph:
    """Weight every pair of vertices by fiber distance, caching the argmin pair.

    Raises:
        EmptyFiberError: A fiber has no members.
    """
    for f in fibers:
        if f.is_empty:
            raise EmptyFiberError(f"Feature {f.feature_id} has an empty fiber")

    arrays = [stack_transforms([reference])] + [f.arrays for f in fibers]
    graph = nx.Graph()
    graph.add_nodes_from(range(len(arrays)))

    for u, v in itertools.combinations(range(len(arrays)), 2):
        distances = pairwise_distances(arrays[u], arrays[v], weights)
        flat = int(np.argmin(distances))
        a, b = divmod(flat, distances.shape[1])
        graph.add_edge(u, v, weight=float(distances[a, b]), pair={(u, v): (a, b)})

    return FiberGraph(graph, tuple(fibers), reference, weights)


def weight_matrix(graph: FiberGraph) -> np.ndarray:
    n = graph.size
    w = np.zeros((n, n))
    for u, v, data in graph.graph.edges(data=True):
        w[u, v] = w[v, u] = data["weight"]
    return w


def _preorder(tree: nx.Graph) -> list[int]:
    order: list[int] = []
    seen = {REFERENCE}
    stack = [REFERENCE]
    while stack:
        node = stack.pop()
        order.append(node)
        children = sorted(n for n in tree.neighbors(node) if n not in seen)
        seen.update(children)
        stack.extend(reversed(children))
    return order


def _sequence(
    graph: FiberGraph, order: Sequence[int], mst_weight: float, exact: bool
) -> VisitSequence:
    """Attach edge-cached configurations to a vertex order starting at 0."""
    vertices = tuple(order[1:])
    members = []
    previous = REFERENCE
    for v in vertices:
        members.append(graph.pair(previous, v)[1])
        previous = v

    configurations = tuple(
        graph.configurations(v)[m] for v, m in zip(vertices, members, strict=True)
    )
    graph_cost = sum(
        graph.weight(a, b) for a, b in zip(order, [*order[1:], REFERENCE], strict=True)
    )
    triangle_ok = triangle_audit(weight_matrix(graph), _COST_TOLERANCE).holds
    bound_holds = graph_cost <= 2.0 * mst_weight + _COST_TOLERANCE if triangle_ok else None

    sequence = VisitSequence(
        vertices=vertices,
        feature_ids=tuple(graph.fibers[v - 1].feature_id for v in vertices),
        configurations=configurations,
        member_indices=tuple(members),
        reference=graph.reference,
        leg_costs=(),
        cost=0.0,
        graph_cost=float(graph_cost),
        mst_weight=float(mst_weight),
        triangle_ok=triangle_ok,
        bound_holds=bound_holds,
        weights=graph.weights,
        exact=exact,
    )
    return with_costs(sequence)


def with_costs(sequence: VisitSequence) -> VisitSequence:
    """Recompute leg costs from the chosen configurations."""
    waypoints = sequence.waypoints
    legs = tuple(
        float(pairwise_distances([a], [b], sequence.weights)[0, 0])
        for a, b in zip(waypoints[:-1], waypoints[1:], strict=True)
    )
    return replace(sequence, leg_costs=legs, cost=float(sum(legs)))


def mst_weight(graph: FiberGraph) -> float:
    tree = nx.minimum_spanning_tree(graph.graph, weight="weight")
    return float(tree.size(weight="weight"))


def tsp_tour(graph: FiberGraph) -> VisitSequence:
    """MST preorder tour rooted at the reference, children visited by vertex id."""
    tree = nx.minimum_spanning_tree(graph.graph, weight="weight")
    weight = float(tree.size(weight="weight"))
    order = _preorder(tree)
    sequence = _sequence(graph, order, weight, exact=False)

    if sequence.bound_holds is False:
        logger.warning(
            "Tour exceeds twice the spanning tree weight",
            graph_cost=sequence.graph_cost,
            mst_weight=weight,
        )
    elif sequence.bound_holds is None:
        audit = triangle_audit(weight_matrix(graph), _COST_TOLERANCE)
        logger.info(
            "Fiber distances violate the triangle inequality; tour bound not audited",
            vertices=graph.size,
            violations=audit.violations,
            worst_excess=audit.worst_excess,
        )
    return sequence


def exact_tour(graph: FiberGraph, limit: int = 10) -> VisitSequence:
    """Optimal tour over the graph weights by Held-Karp dynamic programming.

    Raises:
        ValueError: More than ``limit`` fibers.
    """
    n = graph.size
    if n - 1 > limit:
        raise ValueError(f"Exact tour supports at most {limit} fibers, got {n - 1}")
    if n == 1:
        return _sequence(graph, [REFERENCE], 0.0, exact=True)

    cities = list(range(1, n))
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for c in cities:
        best[(1 << (c - 1), c)] = (graph.weight(REFERENCE, c), REFERENCE)

    for size in range(2, len(cities) + 1):
        for subset in itertools.combinations(cities, size):
            mask = sum(1 << (c - 1) for c in subset)
            for last in subset:
                prev_mask = mask & ~(1 << (last - 1))
                best[(mask, last)] = min(
                    (best[(prev_mask, p)][0] + graph.weight(p, last), p)
                    for p in subset
                    if p != last
                )

    full = (1 << len(cities)) - 1
    _, last = min(
        (best[(full, c)][0] + graph.weight(c, REFERENCE), c) for c in cities
    )
    order = []
    mask = full
    while last != REFERENCE:
        order.append(last)
        _, previous = best[(mask, last)]
        mask &= ~(1 << (last - 1))
        last = previous
    order.append(REFERENCE)
    order.reverse()

    return _sequence(graph, order, mst_weight(graph), exact=True)


def nearest_member(fiber: Fiber, previous: RigidTransform, weights: MetricWeights) -> int:
    """Index of the member nearest ``previous``, lowest index on ties."""
    distances = pairwise_distances([previous], fiber.arrays, weights)[0]
    return int(np.argmin(distances))


def greedy_configs(sequence: VisitSequence, fibers: Sequence[Fiber]) -> VisitSequence:
    """Re-pick each fracture configuration as the member nearest its predecessor.

    ``fibers`` are looked up by feature id.
    """
    by_feature = {f.feature_id: f for f in fibers}

    previous = sequence.reference
    configurations = []
    members = []
    for feature_id in sequence.feature_ids:
        fiber = by_feature[feature_id]
        index = nearest_member(fiber, previous, sequence.weights)
        members.append(index)
        configurations.append(fiber.members[index].transform)
        previous = fiber.members[index].transform

    updated = replace(
        sequence, configurations=tuple(configurations), member_indices=tuple(members)
    )
    return with_costs(updated)


def order_members(
    fiber: Fiber, previous: RigidTransform, weights: MetricWeights
) -> list[int]:
    """Member indices sorted by distance from ``previous``, stable by index."""
    distances = pairwise_distances([previous], fiber.arrays, weights)[0]
    return [int(i) for i in np.argsort(distances, kind="stable")]
