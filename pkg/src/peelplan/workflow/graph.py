"""LangGraph workflow definition for support-removal planning."""

from datetime import datetime
from pathlib import Path
from typing import cast

import structlog
from langchain_core.runnables import RunnableConfig
from langgraph.graph import END, START, StateGraph
from langgraph.graph.state import CompiledStateGraph

from peelplan.config.settings import JobConfig, Settings
from peelplan.models.state import PlanningState, PlanStatus
from peelplan.workflow.nodes.identifier import RemovableIdentifier
from peelplan.workflow.nodes.loader import SceneLoader
from peelplan.workflow.nodes.path_planner import PathPlanner
from peelplan.workflow.nodes.peeler import RoundPeeler
from peelplan.workflow.nodes.sequencer import VisitSequencer

logger = structlog.get_logger()


def should_continue_after_load(state: PlanningState) -> str:
    """Routing logic after loading.

    Args:
        state: Current workflow state.

    Returns:
        Next node name or END.
    """
    if state.get("error"):
        return "handle_error"

    if state.get("verdict") is not None:
        return cast(str, END)

    return "identify"


def should_continue_after_identify(state: PlanningState) -> str:
    """Routing logic after identifying the removable set.

    A round with nothing removable goes straight to bookkeeping, which
    records it and ends the loop as unreachable.
    """
    if state.get("error"):
        return "handle_error"

    result = state.get("current_round")
    if result is None or not result.removable:
        return "peel"

    return "order"


def should_continue_after_order(state: PlanningState) -> str:
    if state.get("error"):
        return "handle_error"
    return "plan_paths"


def should_continue_after_plan(state: PlanningState) -> str:
    if state.get("error"):
        return "handle_error"
    return "peel"


def should_continue_after_peel(state: PlanningState) -> str:
    """Routing logic after a round is closed.

    Returns:
        ``identify`` for the next round, or END once a verdict is set.
    """
    if state.get("error"):
        return "handle_error"

    if state.get("verdict") is not None:
        return cast(str, END)

    return "identify"


def handle_error(state: PlanningState) -> PlanningState:
    """Handle error state.

    Args:
        state: Current workflow state.

    Returns:
        Updated state with failed status.
    """
    job = state.get("job")
    part = str(job.part) if job is not None else "unknown"

    logger.error(
        "Workflow error",
        part=part,
        rounds=len(state.get("rounds", [])),
        error=state.get("error"),
    )

    return {
        **state,
        "status": PlanStatus.FAILED,
        "end_time": datetime.now().isoformat(),
    }


def create_initial_state(
    job: JobConfig, settings: Settings, output_dir: Path | None = None
) -> PlanningState:
    """Fresh workflow state for one job."""
    return {
        "job": job,
        "settings": settings,
        "output_dir": Path(output_dir or job.output_dir),
        "scene": None,
        "meshes": None,
        "rotations": None,
        "weights": None,
        "reference": None,
        "epsilon": 0.0,
        "remaining": [],
        "current_round": None,
        "sequence": None,
        "round_plan": None,
        "round_timings": {},
        "rounds": [],
        "status": PlanStatus.PENDING,
        "verdict": None,
        "blocking_features": [],
        "timings": {},
        "start_time": datetime.now().isoformat(),
        "end_time": None,
        "error": None,
    }


def build_planning_workflow(settings: Settings) -> CompiledStateGraph:
    """Build the planning workflow graph.

    Args:
        settings: Application settings.

    Returns:
        Compiled workflow graph.
    """
    # Initialize nodes
    loader = SceneLoader()
    identifier = RemovableIdentifier()
    sequencer = VisitSequencer()
    path_planner = PathPlanner()
    peeler = RoundPeeler()

    # Build workflow
    workflow = StateGraph(PlanningState)

    # Add nodes
    workflow.add_node("load", loader)
    workflow.add_node("identify", identifier)
    workflow.add_node("order", sequencer)
    workflow.add_node("plan_paths", path_planner)
    workflow.add_node("peel", peeler)
    workflow.add_node("handle_error", handle_error)

    # Define edges
    workflow.add_edge(START, "load")

    workflow.add_conditional_edges(
        "load",
        should_continue_after_load,
        {"identify": "identify", "handle_error": "handle_error", END: END},
    )

    workflow.add_conditional_edges(
        "identify",
        should_continue_after_identify,
        {"order": "order", "peel": "peel", "handle_error": "handle_error"},
    )

    workflow.add_conditional_edges(
        "order",
        should_continue_after_order,
        {"plan_paths": "plan_paths", "handle_error": "handle_error"},
    )

    workflow.add_conditional_edges(
        "plan_paths",
        should_continue_after_plan,
        {"peel": "peel", "handle_error": "handle_error"},
    )

    workflow.add_conditional_edges(
        "peel",
        should_continue_after_peel,
        {"identify": "identify", "handle_error": "handle_error", END: END},
    )

    workflow.add_edge("handle_error", END)

    # One job per invocation, so no checkpointer
    app = workflow.compile()

    logger.info("Built planning workflow", env=settings.app.env)

    return app


class PlanningWorkflow:
    """Wrapper class for the planning workflow."""

    def __init__(self, settings: Settings):
        self.settings = settings
        self.app = build_planning_workflow(settings)

    def run(self, job: JobConfig, output_dir: Path | None = None) -> PlanningState:
        """Run one planning job to completion.

        Args:
            job: Validated job configuration.
            output_dir: Directory for the round log and debug dumps;
                defaults to the job's output directory.

        Returns:
            Final workflow state.
        """
        initial_state = create_initial_state(job, self.settings, output_dir)

        config = cast(
            RunnableConfig, {"recursion_limit": self.settings.app.recursion_limit}
        )
        result = self.app.invoke(initial_state, config)

        return cast(PlanningState, result)
