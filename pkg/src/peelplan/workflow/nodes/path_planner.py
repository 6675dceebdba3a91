"""Tool path planning node for the planning workflow."""

import time
from datetime import datetime

import structlog

from peelplan.config.settings import CheckerMode
from peelplan.models.state import PlanningState, PlanStatus
from peelplan.services.collision import round_checker
from peelplan.services.motion import RoundPlan, plan_round

logger = structlog.get_logger()


class PathPlanner:
    """Node for planning the tool paths of the current round."""

    def __call__(self, state: PlanningState) -> PlanningState:
        """Plan every leg of the round's tour against its near-net shape.

        A leg that cannot be planned is recorded on the round plan, not raised.

        Args:
            state: Current workflow state.

        Returns:
            Updated state with the round plan.
        """
        result = state["current_round"]
        sequence = state["sequence"]
        scene = state["scene"]
        params = state["job"].planner
        assert result is not None and sequence is not None and scene is not None
        started = time.perf_counter()

        if not sequence.feature_ids:
            logger.info("Round has no features to visit", round_index=result.index)
            plan = RoundPlan((), sequence)
        else:
            try:
                meshes = state.get("meshes")
                checker = round_checker(
                    scene,
                    result.near_net,
                    result.remaining,
                    state["epsilon"],
                    params,
                    fields=result.fields,
                    meshes=meshes,
                )
                verifier = None
                if params.verify_mesh and checker.mode == CheckerMode.VOXEL:
                    verifier = checker.with_mode(CheckerMode.MESH, meshes)

                plan = plan_round(
                    sequence,
                    checker,
                    params,
                    list(result.fibers.values()),
                    rotations=state["rotations"],
                    round_index=result.index,
                    verifier=verifier,
                )
            except Exception as e:
                logger.exception("Error planning tool paths", round_index=result.index)
                return {
                    **state,
                    "status": PlanStatus.FAILED,
                    "error": f"Path planning error: {e}",
                    "end_time": datetime.now().isoformat(),
                }

        timings = dict(state.get("round_timings", {}))
        timings["paths_s"] = time.perf_counter() - started
        timings["legs_s"] = sum(plan.leg_seconds)
        return {
            **state,
            "round_plan": plan,
            "sequence": plan.sequence,
            "round_timings": timings,
        }
