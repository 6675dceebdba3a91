"""Application settings using Pydantic Settings."""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from peelplan.errors import ConfigError

load_dotenv()

POLYGON_SUFFIXES = {".poly", ".txt"}
MESH_SUFFIXES = {".stl", ".obj"}


class VoxelPolicy(str, Enum):
    """Rasterization policy for solids."""

    CENTROID = "centroid"
    CONSERVATIVE = "conservative"


class RotationMethod(str, Enum):
    """Rotation sampling schemes."""

    HOPF = "hopf"
    FIBONACCI = "fibonacci"
    GRID2D = "grid2d"


class CheckerMode(str, Enum):
    """Collision checker backends."""

    VOXEL = "voxel"
    MESH = "mesh"


class GridSettings(BaseSettings):
    """Voxel grid configuration."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_GRID_")

    spacing: float = Field(default=1.0, gt=0)
    policy: VoxelPolicy = VoxelPolicy.CENTROID
    tool_policy: VoxelPolicy = VoxelPolicy.CENTROID
    padding_cells: int = Field(default=1, ge=1)

    # Budget in cells of the zero-padded FFT grid
    max_fft_cells: int = Field(default=2**24, gt=0)


class RotationSettings(BaseSettings):
    """Orientation sampling configuration."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_ROTATIONS_")

    count: int = Field(default=8, ge=1)
    method: RotationMethod = RotationMethod.GRID2D
    seed: int = Field(default=0, ge=0)


class ContactSettings(BaseSettings):
    """Contact-space configuration."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_CONTACT_")

    # Tolerable interference, counted in voxels
    epsilon_voxels: float = Field(default=2.0, gt=0)
    query_points: int = Field(default=1, ge=1)
    ring_points: int = Field(default=4, ge=0)
    workers: int = Field(default=1, ge=1)
    debug_fields: bool = False


class MetricSettings(BaseSettings):
    """Weights of the rigid-motion distance."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_METRIC_")

    w_rot: float = Field(default=1.0, gt=0)
    w_trans: float = Field(default=1.0, gt=0)
    normalize_translation: bool = True


class SequencingSettings(BaseSettings):
    """Visit ordering configuration."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_SEQUENCING_")

    exact_tsp: bool = False
    exact_limit: int = Field(default=10, ge=1)


class PlannerSettings(BaseSettings):
    """Tool path planner configuration."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_PLANNER_")

    mode: CheckerMode = CheckerMode.VOXEL
    max_samples: int = Field(default=50_000, gt=0)
    time_limit_s: float = Field(default=60.0, gt=0)
    goal_bias: float = Field(default=0.1, ge=0, le=1)

    # Waypoint spacing and tree extension, in voxels of translation
    step_voxels: float = Field(default=1.0, gt=0)
    extend_steps: int = Field(default=8, ge=1)

    retract_voxels: int = Field(default=2, ge=1)
    perturb_retries: int = Field(default=3, ge=0)
    member_retries: int = Field(default=3, ge=0)
    dilation_voxels: int = Field(default=0, ge=0)
    verify_mesh: bool = True
    seed: int = Field(default=0, ge=0)

    # Overlap below this fraction of a voxel counts as clearance in mesh mode
    mesh_free_tolerance: float = Field(default=1e-6, ge=0)


class AppSettings(BaseSettings):
    """Application settings."""

    model_config = SettingsConfigDict(env_prefix="PEELPLAN_APP_")

    env: str = "development"
    debug: bool = False
    log_level: str = "INFO"
    log_format: Literal["json", "console"] = "json"
    recursion_limit: int = Field(default=1000, ge=10)


class Settings(BaseSettings):
    """Global application settings."""

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    app: AppSettings = Field(default_factory=AppSettings)
    grid: GridSettings = Field(default_factory=GridSettings)
    rotations: RotationSettings = Field(default_factory=RotationSettings)
    contact: ContactSettings = Field(default_factory=ContactSettings)
    metric: MetricSettings = Field(default_factory=MetricSettings)
    sequencing: SequencingSettings = Field(default_factory=SequencingSettings)
    planner: PlannerSettings = Field(default_factory=PlannerSettings)


JOB_SECTIONS = ("grid", "rotations", "contact", "metric", "sequencing", "planner")


class JobConfig(BaseModel):
    """One planning job, loaded from a single JSON file.

    Section blocks override the environment-backed defaults field by field.
    Relative mesh paths are resolved against the directory of the job file.
    """

    model_config = ConfigDict(extra="forbid")

    dimension: Literal[2, 3]
    part: Path
    support: Path | None = None
    tool: Path
    fixture: Path | None = None
    tool_tip: list[float]
    reference: dict[str, Any] | None = Field(
        default=None, description="Reference tool configuration as a transform dict"
    )
    output_dir: Path = Path("out")

    grid: GridSettings = Field(default_factory=GridSettings)
    rotations: RotationSettings = Field(default_factory=RotationSettings)
    contact: ContactSettings = Field(default_factory=ContactSettings)
    metric: MetricSettings = Field(default_factory=MetricSettings)
    sequencing: SequencingSettings = Field(default_factory=SequencingSettings)
    planner: PlannerSettings = Field(default_factory=PlannerSettings)

    @model_validator(mode="after")
    def check_consistency(self) -> "JobConfig":
        """Check files, dimension and method compatibility."""
        if len(self.tool_tip) != self.dimension:
            raise ValueError(
                f"tool_tip has {len(self.tool_tip)} coordinates, expected {self.dimension}"
            )

        allowed = POLYGON_SUFFIXES if self.dimension == 2 else MESH_SUFFIXES
        for name in ("part", "support", "tool", "fixture"):
            path: Path | None = getattr(self, name)
            if path is None:
                continue
            if not path.exists():
                raise ValueError(f"{name} mesh not found: {path}")
            if path.suffix.lower() not in allowed:
                raise ValueError(
                    f"{name} mesh {path.name} is not a {self.dimension}D format "
                    f"(expected one of {sorted(allowed)})"
                )

        return self

    @classmethod
    def from_file(cls, path: Path, defaults: Settings | None = None) -> "JobConfig":
        """Load a job file, layering its sections over default settings.

        Args:
            path: JSON job file.
            defaults: Settings providing values absent from the file.

        Returns:
            Validated job configuration.

        Raises:
            ConfigError: File missing, not JSON, or fails validation.
        """
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"Job file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Job file is not valid JSON: {e}") from e

        if not isinstance(raw, dict):
            raise ConfigError("Job file must contain a JSON object")

        base = path.parent
        for key in ("part", "support", "tool", "fixture"):
            if raw.get(key) is not None and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])

        return cls.from_dict(raw, defaults)

    @classmethod
    def from_dict(
        cls, raw: dict[str, Any], defaults: Settings | None = None
    ) -> "JobConfig":
        """Validate a job mapping, layering sections over default settings."""
        defaults = defaults or Settings()
        data = dict(raw)

        try:
            for section in JOB_SECTIONS:
                default = getattr(defaults, section)
                override = data.get(section) or {}
                if not isinstance(override, dict):
                    raise ConfigError(f"Section '{section}' must be an object")
                data[section] = type(default)(**{**default.model_dump(), **override})

            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid job configuration: {e}") from e

    def echo(self) -> dict[str, Any]:
        """JSON-safe copy of the configuration for the plan document.

        The output directory is left out; it does not affect the plan.
        """
        return self.model_dump(mode="json", exclude={"output_dir"})


# Global settings instance
settings = Settings()
