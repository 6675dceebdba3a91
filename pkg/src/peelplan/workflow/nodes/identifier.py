"""Removable-support identification node for the planning workflow."""

import json
from datetime import datetime
from pathlib import Path

import structlog

from peelplan.models.state import PlanningState, PlanStatus
from peelplan.services.rounds import RoundResult, compute_round

logger = structlog.get_logger()


def write_fibers(result: RoundResult, path: Path) -> Path:
    """Dump the round's fibers, keyed by feature id."""
    data = {
        str(j): [
            {
                "rotation_index": m.rotation_index,
                "lattice_index": list(m.lattice_index),
                "transform": m.transform.to_dict(),
                "overlap": m.overlap,
            }
            for m in fiber.members
        ]
        for j, fiber in sorted(result.fibers.items())
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


class RemovableIdentifier:
    """Node for computing one round's contact space, fibers and removable set."""

    def __call__(self, state: PlanningState) -> PlanningState:
        """Identify the maximal removable collection for the current near-net shape.

        Args:
            state: Current workflow state.

        Returns:
            Updated state with the current round.
        """
        job = state["job"]
        scene = state["scene"]
        rotations = state["rotations"]
        round_index = len(state.get("rounds", []))
        debug_dir = state["output_dir"] / "debug" if job.contact.debug_fields else None

        try:
            assert scene is not None and rotations is not None
            result = compute_round(
                scene,
                state["remaining"],
                round_index,
                rotations,
                state["epsilon"],
                contact=job.contact,
                grid=job.grid,
                debug_dir=debug_dir,
            )
            if debug_dir is not None:
                write_fibers(result, debug_dir / f"fibers_round{round_index}.json")

        except Exception as e:
            logger.exception("Error identifying removable supports", round_index=round_index)
            return {
                **state,
                "current_round": None,
                "status": PlanStatus.FAILED,
                "error": f"Identification error: {e}",
                "end_time": datetime.now().isoformat(),
            }

        return {
            **state,
            "current_round": result,
            "sequence": None,
            "round_plan": None,
            "round_timings": dict(result.timings),
        }
