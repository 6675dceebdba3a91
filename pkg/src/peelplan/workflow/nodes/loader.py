"""Scene loading node for the planning workflow."""

from dataclasses import dataclass
from datetime import datetime

import structlog

from peelplan.config.settings import CheckerMode, JobConfig
from peelplan.errors import ConfigError
from peelplan.geometry.mesh import load_mesh
from peelplan.geometry.se3 import (
    MetricWeights,
    RigidTransform,
    Rotation,
    RotationSample,
    sample_rotations,
)
from peelplan.models.state import PlanningState, PlanStatus, Verdict
from peelplan.services.collision import NearNetMeshes, near_net_meshes
from peelplan.services.solids import Scene, build_scene

logger = structlog.get_logger()

# Clearance between the scene box and the default reference tool pose, in voxels
REFERENCE_CLEARANCE_VOXELS = 2


@dataclass(frozen=True, eq=False)
class JobScene:
    """Everything a job fixes before the first round."""

    scene: Scene
    rotations: RotationSample
    weights: MetricWeights
    reference: RigidTransform
    epsilon: float
    meshes: NearNetMeshes | None = None


def default_reference(scene: Scene) -> RigidTransform:
    """Unrotated tool parked beyond the upper corner of the scene frame."""
    _, upper = scene.part.bounds
    offset = scene.tool.radius + REFERENCE_CLEARANCE_VOXELS * scene.spacing
    return RigidTransform.create(Rotation.identity(scene.dimension), upper + offset)


def load_scene(job: JobConfig, with_meshes: bool | None = None) -> JobScene:
    """Load and voxelize the job's meshes and fix the per-job quantities.

    Args:
        job: Validated job configuration.
        with_meshes: Build the source meshes used by mesh-mode checks; by
            default only when the planner needs them.

    Returns:
        Scene, rotation sample, metric weights, reference pose and epsilon.

    Raises:
        ConfigError: Mesh dimension or reference pose disagrees with the job.
        MeshError: An input mesh is not a usable solid.
    """
    part = load_mesh(job.part)
    tool = load_mesh(job.tool)
    support = load_mesh(job.support) if job.support is not None else None
    fixture = load_mesh(job.fixture) if job.fixture is not None else None

    for name, mesh in (("part", part), ("tool", tool)):
        if mesh.dimension != job.dimension:
            raise ConfigError(
                f"{name} mesh is {mesh.dimension}D but the job is {job.dimension}D"
            )

    scene = build_scene(
        part,
        tool,
        job.tool_tip,
        job.grid,
        job.contact,
        support_mesh=support,
        fixture_mesh=fixture,
    )
    rotations = sample_rotations(
        job.rotations.count,
        job.rotations.method,
        job.rotations.seed,
        dimension=job.dimension,
    )
    weights = MetricWeights.from_settings(job.metric, scene.diagonal)

    if job.reference is not None:
        try:
            reference = RigidTransform.from_dict(job.reference)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid reference configuration: {e}") from e
        if reference.dimension != job.dimension or len(reference.translation) != job.dimension:
            raise ConfigError("Reference configuration does not match the job dimension")
    else:
        reference = default_reference(scene)

    epsilon = job.contact.epsilon_voxels * scene.part.cell_volume

    if with_meshes is None:
        with_meshes = job.planner.mode == CheckerMode.MESH or job.planner.verify_mesh
    meshes = near_net_meshes(scene) if with_meshes else None

    return JobScene(
        scene=scene,
        rotations=rotations,
        weights=weights,
        reference=reference,
        epsilon=float(epsilon),
        meshes=meshes,
    )


class SceneLoader:
    """Node for loading the job scene."""

    def __call__(self, state: PlanningState) -> PlanningState:
        """Load meshes, voxelize and sample orientations.

        Args:
            state: Current workflow state.

        Returns:
            Updated state with the scene, or the AllRemoved verdict when the
            scene has no support at all.
        """
        job = state["job"]
        try:
            loaded = load_scene(job)
        except Exception as e:
            logger.exception("Error loading scene", part=str(job.part), error=str(e))
            return {
                **state,
                "status": PlanStatus.FAILED,
                "error": f"Load error: {e}",
                "end_time": datetime.now().isoformat(),
            }

        scene = loaded.scene
        logger.info(
            "Loaded scene",
            dimension=scene.dimension,
            components=len(scene.components),
            features=len(scene.features),
            rotations=len(loaded.rotations),
            epsilon=loaded.epsilon,
            reference=loaded.reference.to_dict(),
            meshes=loaded.meshes is not None,
        )

        updated: PlanningState = {
            **state,
            "scene": scene,
            "meshes": loaded.meshes,
            "rotations": loaded.rotations,
            "weights": loaded.weights,
            "reference": loaded.reference,
            "epsilon": loaded.epsilon,
            "remaining": list(scene.component_ids),
            "status": PlanStatus.IN_PROGRESS,
        }

        if not scene.components:
            logger.info("Scene has no support to remove")
            updated.update(
                status=PlanStatus.COMPLETED,
                verdict=Verdict.ALL_REMOVED,
                end_time=datetime.now().isoformat(),
            )
        return updated

