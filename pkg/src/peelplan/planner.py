"""Support-removal planner: run a job end to end, or replay a finished plan."""

import json
import time
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import structlog

from peelplan import __version__
from peelplan.config.settings import CheckerMode, JobConfig, Settings, settings
from peelplan.geometry.export import write_polyline_obj
from peelplan.geometry.se3 import MetricWeights, RigidTransform, pairwise_distances
from peelplan.geometry.voxel import VoxelGrid
from peelplan.models.plan import (
    SCHEMA_VERSION,
    ComponentSummary,
    FeatureSummary,
    PathFailureModel,
    PathModel,
    PlanDocument,
    RotationSummary,
    RoundModel,
    SceneSummary,
    SequenceModel,
    ValidationReport,
)
from peelplan.models.state import PlanningState, PlanStatus, RoundRecord, Verdict
from peelplan.services.collision import CollisionChecker, round_checker
from peelplan.services.cspace import ContactState
from peelplan.services.motion import ToolPath, replay_leg, segment_distances
from peelplan.services.rounds import compute_round
from peelplan.services.sequencing import VisitSequence
from peelplan.services.solids import Scene
from peelplan.workflow.graph import PlanningWorkflow
from peelplan.workflow.nodes.loader import JobScene, load_scene
from peelplan.workflow.nodes.peeler import ROUND_LOG

logger = structlog.get_logger()

PLAN_FILE = "plan.json"
SUMMARY_FILE = "summary.json"
PATHS_DIR = "paths"

TRACKED_PACKAGES = ("numpy", "scipy", "trimesh", "shapely", "networkx", "langgraph")

_COST_TOLERANCE = 1e-9
_POSE_TOLERANCE = 1e-9
_RUNTIME_FIELDS = {"workers", "debug_fields"}


def tool_versions() -> dict[str, str]:
    versions = {"peelplan": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def scene_summary(scene: Scene) -> SceneSummary:
    return SceneSummary(
        dimension=scene.dimension,
        spacing=scene.spacing,
        origin=[float(x) for x in scene.part.origin],
        dims=list(scene.part.dims),
        part_voxels=scene.part.count,
        support_voxels=scene.support.count,
        fixture_voxels=scene.fixture.count if scene.fixture is not None else 0,
        tool_half_width=scene.tool.half_width,
        components=[
            ComponentSummary(id=c.id, voxels=c.size, feature_ids=list(c.feature_ids))
            for c in scene.components
        ],
        features=[
            FeatureSummary(
                id=f.id,
                component=f.component,
                voxels=f.size,
                query_points=f.query_points.tolist(),
            )
            for f in scene.features
        ],
    )


def sequence_model(sequence: VisitSequence) -> SequenceModel:
    return SequenceModel(
        feature_ids=list(sequence.feature_ids),
        configurations=[c.to_dict() for c in sequence.configurations],
        member_indices=list(sequence.member_indices),
        leg_costs=list(sequence.leg_costs),
        cost=sequence.cost,
        graph_cost=sequence.graph_cost,
        mst_weight=sequence.mst_weight,
        triangle_ok=sequence.triangle_ok,
        bound_holds=sequence.bound_holds,
        exact=sequence.exact,
    )


def path_model(leg: int, path: ToolPath) -> PathModel:
    data = path.to_dict()
    data["leg_id"] = data.pop("leg")
    return PathModel(leg=leg, **data)


def round_model(record: RoundRecord) -> RoundModel:
    result = record["result"]
    plan = record["plan"]
    model = RoundModel(
        index=result.index,
        remaining=list(result.remaining),
        removable=list(result.removable),
        no_contact=list(result.no_contact),
        blocking={str(i): list(js) for i, js in sorted(result.blocking.items())},
        fiber_sizes={str(j): n for j, n in sorted(result.fiber_sizes.items())},
        support_voxels=result.support.count,
        near_net_voxels=result.near_net.count,
    )
    if plan is not None:
        model.sequence = sequence_model(plan.sequence)
        model.paths = [path_model(k, p) for k, p in enumerate(plan.paths)]
        if plan.failure is not None:
            model.path_failure = PathFailureModel(
                leg=plan.failure.leg,
                from_feature=plan.failure.from_feature,
                to_feature=plan.failure.to_feature,
                reason=plan.failure.reason,
                attempts=plan.failure.attempts,
            )
    return model


def plan_document(state: PlanningState) -> PlanDocument:
    """Build the plan document from a finished workflow state."""
    job = state["job"]
    scene = state.get("scene")
    rotations = state.get("rotations")
    weights = state.get("weights")
    reference = state.get("reference")

    document = PlanDocument(
        tool_versions=tool_versions(),
        config=job.echo(),
        status=state["status"],
        verdict=state.get("verdict"),
        error=state.get("error"),
        rounds=[round_model(r) for r in state.get("rounds", [])],
        remaining=list(state.get("remaining", [])),
        blocking_features=list(state.get("blocking_features", [])),
    )
    if scene is not None:
        document.scene = scene_summary(scene)
        document.epsilon = state["epsilon"]
    if rotations is not None:
        document.rotations = RotationSummary(
            method=rotations.method.value,
            seed=rotations.seed,
            count=len(rotations),
            values=rotations.as_arrays().tolist(),
        )
    if weights is not None:
        document.weights = {"w_rot": weights.w_rot, "w_trans": weights.w_trans}
    if reference is not None:
        document.reference = reference.to_dict()
    return document


def run_summary(state: PlanningState, document: PlanDocument) -> dict[str, Any]:
    """Verdict, counts and timings of a run."""
    records = state.get("rounds", [])
    return {
        "status": document.status.value,
        "verdict": document.verdict.value if document.verdict else None,
        "error": document.error,
        "rounds": len(document.rounds),
        "paths": document.path_count,
        "waypoints": sum(len(p.waypoints) for r in document.rounds for p in r.paths),
        "removed_components": sorted(
            i for r in document.rounds if r.path_failure is None for i in r.removable
        ),
        "remaining": document.remaining,
        "blocking_features": document.blocking_features,
        "start_time": state.get("start_time"),
        "end_time": state.get("end_time"),
        "timings": {
            **state.get("timings", {}),
            "rounds": [
                {"round": r["result"].index, **r["timings"]} for r in records
            ],
        },
    }


def write_path_traces(records: list[RoundRecord], directory: Path) -> list[Path]:
    """One tool-tip polyline OBJ per planned leg."""
    directory.mkdir(parents=True, exist_ok=True)
    for stale in directory.glob("round*_leg*.obj"):
        stale.unlink()

    written = []
    for record in records:
        plan = record["plan"]
        if plan is None:
            continue
        for k, path in enumerate(plan.paths):
            target = directory / f"round{record['result'].index}_leg{k}.obj"
            written.append(write_polyline_obj(path.tip_trace, target))
    return written


def _planning_fields(section: dict[str, Any] | None) -> dict[str, Any]:
    """Section values that change the plan (not parallelism or debug output)."""
    return {k: v for k, v in (section or {}).items() if k not in _RUNTIME_FIELDS}


def _same_pose(a: RigidTransform, b: RigidTransform) -> bool:
    return bool(
        np.allclose(a.t, b.t, atol=_POSE_TOLERANCE)
        and a.rotation.angle_to(b.rotation) <= _POSE_TOLERANCE
    )


def refined_job(job: JobConfig, refine: int) -> JobConfig:
    """The same job on a grid ``refine`` times finer, epsilon kept as a volume."""
    factor = refine**job.dimension
    return job.model_copy(
        update={
            "grid": job.grid.model_copy(update={"spacing": job.grid.spacing / refine}),
            "contact": job.contact.model_copy(
                update={"epsilon_voxels": job.contact.epsilon_voxels * factor}
            ),
        }
    )


def _resampled(source: VoxelGrid, target: VoxelGrid) -> np.ndarray:
    """``source`` occupancy looked up at the cell centers of ``target``."""
    indices = source.index_of(target.centers())
    inside = source.in_bounds(indices)
    values = np.zeros(len(indices), dtype=bool)
    values[inside] = source.values[tuple(indices[inside].T)].astype(bool)
    return values.reshape(target.dims)


class SupportRemovalPlanner:
    """Front door of the library: one job in, one plan document out."""

    def __init__(self, app_settings: Settings | None = None):
        self.settings = app_settings or settings
        self.workflow = PlanningWorkflow(self.settings)

    def run(self, job: JobConfig) -> PlanDocument:
        """Plan a job and write its artifacts to the job's output directory.

        Args:
            job: Validated job configuration.

        Returns:
            The plan document, also written as ``plan.json``.

        Raises:
            OSError: Output files cannot be written.
        """
        output_dir = Path(job.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        (output_dir / ROUND_LOG).unlink(missing_ok=True)

        logger.info("Starting planning job", part=str(job.part), output_dir=str(output_dir))
        started = time.perf_counter()
        state = self.workflow.run(job, output_dir)
        elapsed = time.perf_counter() - started
        state["timings"] = {**state.get("timings", {}), "total_s": elapsed}

        document = plan_document(state)
        document.write(output_dir / PLAN_FILE)
        records = state.get("rounds", [])
        write_path_traces(records, output_dir / PATHS_DIR)
        summary = run_summary(state, document)
        (output_dir / SUMMARY_FILE).write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

        logger.info(
            "Finished planning job",
            status=document.status.value,
            verdict=summary["verdict"],
            rounds=len(document.rounds),
            paths=document.path_count,
            elapsed_s=round(elapsed, 3),
        )
        return document

    def validate(
        self, plan: PlanDocument, job: JobConfig, refine: int = 1
    ) -> ValidationReport:
        """Replay a plan against its scene and re-check every invariant.

        Waypoints are replayed through the mesh-mode checker. Rounds are
        recomputed and compared with the recorded removable sets. With
        ``refine > 1`` fracture configurations are also re-classified on a
        grid ``refine`` times finer.

        Args:
            plan: Plan produced by :meth:`run`.
            job: The job configuration the plan was produced from.
            refine: Grid refinement factor for the resolution check.

        Returns:
            Report with one pass/fail entry per assertion.
        """
        report = ValidationReport(verdict=plan.verdict, mode=CheckerMode.MESH.value, refine=refine)
        report.add(
            "schema_version",
            plan.schema_version == SCHEMA_VERSION,
            f"plan {plan.schema_version}, expected {SCHEMA_VERSION}",
        )
        if plan.status != PlanStatus.COMPLETED:
            report.add("plan_completed", False, plan.error or plan.status.value)
            return report

        loaded = load_scene(job, with_meshes=True)
        weights = MetricWeights(**plan.weights) if plan.weights else loaded.weights
        reference = (
            RigidTransform.from_dict(plan.reference) if plan.reference else loaded.reference
        )
        echo = job.echo()
        for section in ("grid", "rotations", "contact"):
            same = _planning_fields(plan.config.get(section)) == _planning_fields(echo[section])
            report.add(
                f"config_{section}", same, "" if same else "recorded section differs from the job"
            )

        self._check_rounds(report, plan, loaded, job)
        for r in plan.rounds:
            if r.sequence is None:
                continue
            sequence = r.sequence
            configurations = [RigidTransform.from_dict(c) for c in sequence.configurations]
            self._check_tour(report, r, loaded.scene, configurations, reference, weights)
            self._check_paths(report, r, loaded, job, configurations, reference, weights)
            if refine > 1:
                self._check_refined(report, r, loaded, job, configurations, refine)
        self._check_verdict(report, plan, loaded.scene)

        logger.info(
            "Validated plan",
            checks=len(report.checks),
            failures=len(report.failures),
            refine=refine,
        )
        return report

    def _check_rounds(
        self, report: ValidationReport, plan: PlanDocument, loaded: JobScene, job: JobConfig
    ) -> None:
        scene = loaded.scene
        expected_remaining = list(scene.component_ids)
        previous_voxels: int | None = None

        for r in plan.rounds:
            report.add(
                "round_remaining",
                r.remaining == expected_remaining,
                f"recorded {r.remaining}, expected {expected_remaining}",
                round_index=r.index,
            )

            recomputed = compute_round(
                scene, r.remaining, r.index, loaded.rotations, loaded.epsilon, job.contact, job.grid
            )
            report.add(
                "round_removable",
                list(recomputed.removable) == r.removable,
                f"recorded {r.removable}, recomputed {list(recomputed.removable)}",
                round_index=r.index,
            )

            maximal = True
            for i in r.remaining:
                sizes = [r.fiber_sizes.get(str(j), 0) for j in scene.component(i).feature_ids]
                blocked = any(n == 0 for n in sizes)
                if (i in r.removable) == blocked:
                    maximal = False
            report.add("round_maximality", maximal, round_index=r.index)

            if previous_voxels is not None:
                report.add(
                    "round_progress",
                    r.support_voxels < previous_voxels,
                    f"{previous_voxels} -> {r.support_voxels} support voxels",
                    round_index=r.index,
                )
            previous_voxels = r.support_voxels

            if r.sequence is not None:
                checker = round_checker(
                    scene,
                    recomputed.near_net,
                    recomputed.remaining,
                    loaded.epsilon,
                    job.planner,
                    fields=recomputed.fields,
                    mode=CheckerMode.VOXEL,
                )
                states = [
                    checker.check(RigidTransform.from_dict(c)) for c in r.sequence.configurations
                ]
                bad = [
                    fid
                    for fid, s in zip(r.sequence.feature_ids, states, strict=True)
                    if s != ContactState.CONTACT
                ]
                report.add(
                    "fracture_contact",
                    not bad,
                    f"features not in contact: {bad}" if bad else "",
                    round_index=r.index,
                )
            recomputed.release()

            expected_remaining = [i for i in r.remaining if i not in set(r.removable)]

    def _check_tour(
        self,
        report: ValidationReport,
        r: RoundModel,
        scene: Scene,
        configurations: list[RigidTransform],
        reference: RigidTransform,
        weights: MetricWeights,
    ) -> None:
        assert r.sequence is not None
        expected = sorted(j for i in r.removable for j in scene.component(i).feature_ids)
        report.add(
            "tour_features",
            sorted(r.sequence.feature_ids) == expected
            and len(set(r.sequence.feature_ids)) == len(r.sequence.feature_ids),
            f"visited {r.sequence.feature_ids}, expected each of {expected} once",
            round_index=r.index,
        )

        stops = [reference, *configurations, reference]
        legs = [
            float(pairwise_distances([a], [b], weights)[0, 0])
            for a, b in zip(stops[:-1], stops[1:], strict=True)
        ]
        recorded = r.sequence.leg_costs
        ok = (
            len(legs) == len(recorded)
            and all(abs(a - b) <= _COST_TOLERANCE * max(1.0, a) for a, b in zip(legs, recorded, strict=False))
            and abs(sum(recorded) - r.sequence.cost) <= _COST_TOLERANCE * max(1.0, r.sequence.cost)
        )
        report.add("tour_cost", ok, f"recomputed cost {sum(legs):.12g}", round_index=r.index)

    def _check_paths(
        self,
        report: ValidationReport,
        r: RoundModel,
        loaded: JobScene,
        job: JobConfig,
        configurations: list[RigidTransform],
        reference: RigidTransform,
        weights: MetricWeights,
    ) -> None:
        assert r.sequence is not None
        scene = loaded.scene
        stops = [reference, *configurations, reference]
        legs_expected = len(configurations) + 1 if configurations else 0
        if r.path_failure is None:
            report.add(
                "round_legs",
                len(r.paths) == legs_expected,
                f"{len(r.paths)} legs, expected {legs_expected}",
                round_index=r.index,
            )

        if not r.paths:
            return
        checker: CollisionChecker = round_checker(
            scene,
            scene.near_net(r.remaining),
            r.remaining,
            loaded.epsilon,
            job.planner,
            meshes=loaded.meshes,
            mode=CheckerMode.MESH,
        )

        for p in r.paths:
            path = ToolPath.from_dict({**p.model_dump(), "leg": p.leg_id})
            issues = replay_leg(path, checker)
            report.add(
                "path_replay",
                not issues,
                "; ".join(
                    f"{'approach' if i.approach else 'interior'} point {i.position} is {i.state.value}"
                    for i in issues[:5]
                ),
                round_index=r.index,
                leg=p.leg,
            )

            steps = segment_distances(list(path.waypoints), weights)
            longest = float(steps.max()) if len(steps) else 0.0
            report.add(
                "path_resolution",
                longest <= path.resolution * (1.0 + _COST_TOLERANCE),
                f"longest step {longest:.6g}, resolution {path.resolution:.6g}",
                round_index=r.index,
                leg=p.leg,
            )

            ends_ok = (
                p.leg + 1 < len(stops)
                and _same_pose(path.waypoints[0], stops[p.leg])
                and _same_pose(path.waypoints[-1], stops[p.leg + 1])
            )
            report.add("path_endpoints", ends_ok, round_index=r.index, leg=p.leg)

    def _check_refined(
        self,
        report: ValidationReport,
        r: RoundModel,
        loaded: JobScene,
        job: JobConfig,
        configurations: list[RigidTransform],
        refine: int,
    ) -> None:
        fine = load_scene(refined_job(job, refine), with_meshes=False)
        coarse_support = loaded.scene.support_of(r.remaining)
        support = fine.scene.support.values.astype(bool) & _resampled(
            coarse_support, fine.scene.support
        )
        grids = [fine.scene.part.values.astype(bool), support]
        if fine.scene.fixture is not None:
            grids.append(fine.scene.fixture.values.astype(bool))
        near_net = fine.scene.part.with_values(np.logical_or.reduce(grids))

        checker = CollisionChecker(near_net=near_net, tool=fine.scene.tool, epsilon=loaded.epsilon)
        states = [checker.check(c, conservative=True) for c in configurations]
        assert r.sequence is not None
        unstable = [
            (fid, s.value)
            for fid, s in zip(r.sequence.feature_ids, states, strict=True)
            if s != ContactState.CONTACT
        ]
        report.add(
            "fracture_contact_refined",
            not unstable,
            f"classification changed at spacing {fine.scene.spacing:g}: {unstable}" if unstable else "",
            round_index=r.index,
        )

    def _check_verdict(self, report: ValidationReport, plan: PlanDocument, scene: Scene) -> None:
        rounds = plan.rounds
        last = rounds[-1] if rounds else None
        if plan.verdict == Verdict.ALL_REMOVED:
            if last is None:
                ok = not scene.components
            else:
                survivors = [i for i in last.remaining if i not in set(last.removable)]
                ok = not survivors and all(
                    r.path_failure is None and r.removable for r in rounds
                )
        elif plan.verdict == Verdict.UNREACHABLE:
            ok = last is not None and not last.removable and plan.remaining == last.remaining
        elif plan.verdict == Verdict.PATH_FAILURE:
            ok = last is not None and last.path_failure is not None
        else:
            ok = False
        report.add(
            "verdict_consistent",
            ok,
            f"verdict {plan.verdict.value if plan.verdict else None}",
        )
