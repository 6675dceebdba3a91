"""Pydantic models for the plan document and the validation report."""

import json
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from peelplan.models.state import PlanStatus, Verdict

SCHEMA_VERSION = "1.0"


class ComponentSummary(BaseModel):
    """One support component of the scene."""

    id: int
    voxels: int
    feature_ids: list[int]


class FeatureSummary(BaseModel):
    """One dislocation feature of the scene."""

    id: int
    component: int
    voxels: int
    query_points: list[list[float]]


class SceneSummary(BaseModel):
    """Voxel frame and support decomposition shared by every round."""

    dimension: int
    spacing: float
    origin: list[float]
    dims: list[int]
    part_voxels: int
    support_voxels: int
    fixture_voxels: int = 0
    tool_half_width: int
    components: list[ComponentSummary] = Field(default_factory=list)
    features: list[FeatureSummary] = Field(default_factory=list)


class RotationSummary(BaseModel):
    """The orientation sample, as ``[theta]`` or ``[w, x, y, z]`` rows."""

    method: str
    seed: int
    count: int
    values: list[list[float]]


class SequenceModel(BaseModel):
    """Tour report of one round."""

    feature_ids: list[int]
    configurations: list[dict[str, Any]]
    member_indices: list[int]
    leg_costs: list[float]
    cost: float
    graph_cost: float
    mst_weight: float
    triangle_ok: bool
    bound_holds: bool | None
    exact: bool = False


class PathModel(BaseModel):
    """Waypoints of one leg."""

    leg: int
    leg_id: str
    from_feature: int | None
    to_feature: int | None
    resolution: float
    approach_start: int = 0
    approach_end: int = 0
    samples: int = 0
    waypoints: list[dict[str, Any]]


class PathFailureModel(BaseModel):
    """Leg at which a round's motion planning stopped."""

    leg: int
    from_feature: int | None
    to_feature: int | None
    reason: str
    attempts: int


class RoundModel(BaseModel):
    """One peeling round with its tour and paths."""

    index: int
    remaining: list[int]
    removable: list[int]
    no_contact: list[int] = Field(default_factory=list)
    blocking: dict[str, list[int]] = Field(default_factory=dict)
    fiber_sizes: dict[str, int] = Field(default_factory=dict)
    support_voxels: int
    near_net_voxels: int
    sequence: SequenceModel | None = None
    paths: list[PathModel] = Field(default_factory=list)
    path_failure: PathFailureModel | None = None


class PlanDocument(BaseModel):
    """Everything a plan run decided, free of wall-clock data.

    Two runs with the same job file and seeds serialize to identical bytes.
    """

    schema_version: str = SCHEMA_VERSION
    tool_versions: dict[str, str] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)
    status: PlanStatus = PlanStatus.PENDING
    verdict: Verdict | None = None
    error: str | None = None
    scene: SceneSummary | None = None
    rotations: RotationSummary | None = None
    weights: dict[str, float] | None = None
    reference: dict[str, Any] | None = None
    epsilon: float | None = None
    rounds: list[RoundModel] = Field(default_factory=list)
    remaining: list[int] = Field(default_factory=list)
    blocking_features: list[int] = Field(default_factory=list)

    @property
    def path_count(self) -> int:
        return sum(len(r.paths) for r in self.rounds)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def from_file(cls, path: Path) -> "PlanDocument":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


class ValidationCheck(BaseModel):
    """One assertion of the validation report."""

    name: str
    passed: bool
    detail: str = ""
    round_index: int | None = None
    leg: int | None = None


class ValidationReport(BaseModel):
    """Pass/fail entries from replaying a plan against its scene."""

    verdict: Verdict | None = None
    mode: str
    refine: int = 1
    checks: list[ValidationCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[ValidationCheck]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, detail: str = "", **where: int | None) -> None:
        self.checks.append(ValidationCheck(name=name, passed=passed, detail=detail, **where))

    def to_json(self) -> str:
        data = self.model_dump(mode="json")
        data["passed"] = self.passed
        data["failure_count"] = len(self.failures)
        return json.dumps(data, sort_keys=True, indent=2) + "\n"
