"""LangGraph state definitions for the planning workflow."""

from enum import Enum
from pathlib import Path
from typing import TypedDict

from peelplan.config.settings import JobConfig, Settings
from peelplan.geometry.se3 import MetricWeights, RigidTransform, RotationSample
from peelplan.services.collision import NearNetMeshes
from peelplan.services.motion import RoundPlan
from peelplan.services.rounds import RoundResult
from peelplan.services.sequencing import VisitSequence
from peelplan.services.solids import Scene


class PlanStatus(str, Enum):
    """Status of a planning job."""

    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"


class Verdict(str, Enum):
    """Outcome of a completed planning job."""

    ALL_REMOVED = "all_removed_with_paths"
    UNREACHABLE = "unreachable"
    PATH_FAILURE = "path_failure"


class RoundRecord(TypedDict):
    """One finished round: removable set plus its planned paths."""

    result: RoundResult
    plan: RoundPlan | None
    timings: dict[str, float]


class PlanningState(TypedDict, total=False):
    """State of the planning workflow.

    This is the main state object that flows through the LangGraph workflow.
    The loader fills the scene fields once; each round the identifier,
    sequencer, path planner and peeler update the round fields in turn.
    """

    # Job input
    job: JobConfig
    settings: Settings
    output_dir: Path

    # Scene, fixed for the whole job
    scene: Scene | None
    meshes: NearNetMeshes | None
    rotations: RotationSample | None
    weights: MetricWeights | None
    reference: RigidTransform | None
    epsilon: float

    # Peeling loop
    remaining: list[int]
    current_round: RoundResult | None
    sequence: VisitSequence | None
    round_plan: RoundPlan | None
    round_timings: dict[str, float]
    rounds: list[RoundRecord]

    # Outcome
    status: PlanStatus
    verdict: Verdict | None
    blocking_features: list[int]
    timings: dict[str, float]
    start_time: str | None
    end_time: str | None
    error: str | None
