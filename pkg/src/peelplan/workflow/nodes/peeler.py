"""Round bookkeeping node for the planning workflow."""

import json
from datetime import datetime
from pathlib import Path
from typing import Any

import structlog

from peelplan.models.state import PlanningState, PlanStatus, RoundRecord, Verdict

logger = structlog.get_logger()

ROUND_LOG = "rounds.jsonl"


def round_log_entry(record: RoundRecord) -> dict[str, Any]:
    """JSON-lines entry of one round."""
    result = record["result"]
    plan = record["plan"]
    entry: dict[str, Any] = {
        "round": result.index,
        "remaining": list(result.remaining),
        "removed": list(result.removable),
        "no_contact": list(result.no_contact),
        "fiber_sizes": {str(j): n for j, n in sorted(result.fiber_sizes.items())},
        "blocking": {str(i): list(js) for i, js in sorted(result.blocking.items())},
        "support_voxels": result.support.count,
        "legs": len(plan.paths) if plan is not None else 0,
        "path_failure": None,
        "timings": {k: round(v, 6) for k, v in sorted(record["timings"].items())},
    }
    if plan is not None and plan.failure is not None:
        entry["path_failure"] = {
            "leg": plan.failure.leg,
            "to_feature": plan.failure.to_feature,
            "reason": plan.failure.reason,
        }
    return entry


def append_round_log(path: Path, record: RoundRecord) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(round_log_entry(record), sort_keys=True) + "\n")


class RoundPeeler:
    """Node for closing a round: record it, remove its supports, pick the verdict."""

    def __call__(self, state: PlanningState) -> PlanningState:
        """Record the current round and advance the near-net shape.

        Args:
            state: Current workflow state.

        Returns:
            Updated state with the surviving components, and a verdict once
            the loop is over.
        """
        result = state["current_round"]
        assert result is not None
        plan = state.get("round_plan")

        record: RoundRecord = {
            "result": result,
            "plan": plan,
            "timings": dict(state.get("round_timings", {})),
        }
        rounds = [*state.get("rounds", []), record]
        result.release()

        try:
            append_round_log(state["output_dir"] / ROUND_LOG, record)
        except OSError as e:
            logger.exception("Error writing round log", round_index=result.index)
            return {
                **state,
                "rounds": rounds,
                "status": PlanStatus.FAILED,
                "error": f"Round log error: {e}",
                "end_time": datetime.now().isoformat(),
            }

        updated: PlanningState = {
            **state,
            "rounds": rounds,
            "remaining": list(result.survivors),
            "current_round": None,
            "sequence": None,
            "round_plan": None,
            "round_timings": {},
        }

        verdict = None
        if not result.removable:
            verdict = Verdict.UNREACHABLE
            blocking = sorted(j for js in result.blocking.values() for j in js)
            updated["blocking_features"] = blocking
            logger.warning(
                "Supports unreachable",
                round_index=result.index,
                remaining=list(result.remaining),
                blocking_features=blocking,
            )
        elif plan is not None and not plan.feasible:
            # The round cannot be executed, so none of its supports came off
            verdict = Verdict.PATH_FAILURE
            updated["remaining"] = list(result.remaining)
        elif not result.survivors:
            verdict = Verdict.ALL_REMOVED
        else:
            logger.info(
                "Peeled round",
                round_index=result.index,
                removed=list(result.removable),
                survivors=list(result.survivors),
            )

        if verdict is not None:
            logger.info("Planning finished", verdict=verdict.value, rounds=len(rounds))
            updated.update(
                verdict=verdict,
                status=PlanStatus.COMPLETED,
                end_time=datetime.now().isoformat(),
            )
        return updated
