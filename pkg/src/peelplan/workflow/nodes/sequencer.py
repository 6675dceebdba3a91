"""Visit ordering node for the planning workflow."""

import time
from datetime import datetime

import structlog

from peelplan.config.settings import SequencingSettings
from peelplan.geometry.se3 import MetricWeights, RigidTransform
from peelplan.models.state import PlanningState, PlanStatus
from peelplan.services.fibration import Fiber
from peelplan.services.sequencing import (
    VisitSequence,
    build_graph,
    exact_tour,
    greedy_configs,
    tsp_tour,
)

logger = structlog.get_logger()


def order_round(
    fibers: list[Fiber],
    reference: RigidTransform,
    weights: MetricWeights,
    settings: SequencingSettings,
) -> VisitSequence:
    """Tour through the round's fibers, then greedy fracture configurations.

    The exact tour is used when requested and the round is small enough.
    """
    graph = build_graph(fibers, reference, weights)
    if settings.exact_tsp and len(fibers) <= settings.exact_limit:
        sequence = exact_tour(graph, settings.exact_limit)
    else:
        if settings.exact_tsp:
            logger.warning(
                "Round too large for the exact tour; using the spanning tree tour",
                fibers=len(fibers),
                exact_limit=settings.exact_limit,
            )
        sequence = tsp_tour(graph)
    return greedy_configs(sequence, fibers)


class VisitSequencer:
    """Node for ordering the fracture visits of the current round."""

    def __call__(self, state: PlanningState) -> PlanningState:
        """Order the round's fibers into a tour from and back to the reference.

        Args:
            state: Current workflow state.

        Returns:
            Updated state with the visit sequence.
        """
        result = state["current_round"]
        assert result is not None
        started = time.perf_counter()

        try:
            fibers = [result.fibers[j] for j in result.removed_features]
            sequence = order_round(
                fibers, state["reference"], state["weights"], state["job"].sequencing
            )
        except Exception as e:
            logger.exception("Error ordering fracture visits", round_index=result.index)
            return {
                **state,
                "status": PlanStatus.FAILED,
                "error": f"Sequencing error: {e}",
                "end_time": datetime.now().isoformat(),
            }

        logger.info(
            "Ordered fracture visits",
            round_index=result.index,
            feature_ids=list(sequence.feature_ids),
            cost=sequence.cost,
            mst_weight=sequence.mst_weight,
            bound_holds=sequence.bound_holds,
        )

        timings = dict(state.get("round_timings", {}))
        timings["sequencing_s"] = time.perf_counter() - started
        return {**state, "sequence": sequence, "round_timings": timings}
