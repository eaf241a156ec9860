"""Configuration: process settings from the environment, experiment documents from JSON."""

import json
import logging
import math
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from manifill.core import ParamBox
from manifill.estimate import default_k
from manifill.kernel import KernelFamily

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Rate and Michaelis constants of the enzyme network, in the order of ENZYME_RATE_NAMES
ENZYME_RATE_NAMES = (
    "kp_FAA",
    "kp_FBB",
    "k_AC",
    "kp_BC",
    "K_IA",
    "Kp_FAA",
    "K_CB",
    "Kp_FBB",
    "K_AC",
    "Kp_BC",
)
ENZYME_RATES = (7.0437, 0.1364, 3.0061, 0.8395, 0.0183, 0.0016, 0.0122, 0.0032, 0.0044, 0.0742)


class Settings(BaseSettings):
    """Process settings loaded from MANIFILL_* environment variables.

    None of these influence numeric results.
    """

    log_level: str = "info"
    workers: int = Field(default=1, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="MANIFILL_",
        case_sensitive=False,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


def configure_logging(level: str) -> None:
    """Configure application-wide logging."""
    numeric_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def load_settings() -> Settings:
    """Load settings from the environment and configure logging."""
    settings = Settings()
    configure_logging(settings.log_level)
    return settings


class Algorithm(StrEnum):
    """Resampling potential: k-NN radii (derivative free) or the m-dimensional Jacobian."""

    KNN = "knn"
    JACOBIAN = "jacobian"

    @classmethod
    def _missing_(cls, value: object) -> "Algorithm | None":
        if value == "derivative_free":
            return cls.KNN
        return None


class RunConfig(BaseModel):
    """Algorithm selection and tunables of one run."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    algorithm: Algorithm = Algorithm.JACOBIAN
    n_samples: int = Field(alias="N", ge=2)
    q: float = Field(gt=0.0, lt=1.0)
    h: float = Field(gt=0.0)
    b: float | None = Field(default=None, gt=0.0)
    k: int | None = Field(default=None, ge=1)
    max_iterations: int = Field(default=10, ge=1)
    stop_tol: float = Field(default=0.01, ge=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    kernel: KernelFamily = KernelFamily.BIWEIGHT
    h_schedule: tuple[float, ...] | None = None
    finite_difference: bool = False

    @field_validator("h_schedule")
    @classmethod
    def _positive_schedule(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        if value is not None and (not value or any(not h > 0 for h in value)):
            raise ValueError("h_schedule must be a non-empty list of positive bandwidths")
        return value

    @model_validator(mode="after")
    def _check_k(self) -> "RunConfig":
        if self.k is not None:
            if self.k > self.n_samples:
                raise ValueError(f"k={self.k} exceeds N={self.n_samples}")
            if self.algorithm is Algorithm.KNN and self.k < 2:
                raise ValueError("The knn algorithm needs k >= 2 (k=1 gives zero radii)")
        return self

    def bandwidth(self, iteration: int) -> float:
        """Bandwidth of perturbation round ``iteration`` (1-based)."""
        if not self.h_schedule:
            return self.h
        return self.h_schedule[min(max(iteration, 1) - 1, len(self.h_schedule) - 1)]

    def resolved_k(self, m: int) -> int:
        return self.k if self.k is not None else max(2, default_k(self.n_samples, m))

    def resolved_b(self, box: ParamBox) -> float:
        """Truncation level: infinite for the Jacobian algorithm, 1000 q/vol(P) by default."""
        if self.algorithm is Algorithm.JACOBIAN:
            return math.inf
        if self.b is None:
            return 1e3 * self.q / box.volume()
        return self.b

    def check_box(self, box: ParamBox) -> None:
        """Validate the bandwidths and truncation level against a box."""
        smallest = float(min(box.widths))
        for h in (self.h, *(self.h_schedule or ())):
            if h >= smallest:
                raise ValueError(f"h={h} must be below the smallest box side {smallest}")
        b = self.resolved_b(box)
        if math.isfinite(b) and b <= self.q / box.volume():
            raise ValueError(f"b={b} must exceed q/volume={self.q / box.volume()}")


class TorusConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["torus"]
    R: float = 1.0
    r: float = 0.9

    @model_validator(mode="after")
    def _radii(self) -> "TorusConfig":
        if not 0 < self.r < self.R:
            raise ValueError(f"Torus needs 0 < r < R, got r={self.r}, R={self.R}")
        return self

    def default_box(self) -> ParamBox:
        return ParamBox([0.0, 0.0], [TWO_PI, TWO_PI])


class ExponentialConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["exponential"]
    t: tuple[float, float, float] = (1.0, 2.0, 4.0)

    @field_validator("t")
    @classmethod
    def _increasing(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if not 0 < value[0] < value[1] < value[2]:
            raise ValueError(f"Need 0 < t1 < t2 < t3, got {value}")
        return value

    def default_box(self) -> ParamBox:
        return ParamBox([0.0, 0.0], [100.0, 100.0])


class EnzymeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["enzyme"]
    I0: float = Field(default=0.5, gt=0.0)
    I1: float = Field(default=0.6, gt=0.0)
    F_A: float = Field(default=0.5, gt=0.0)
    F_B: float = Field(default=0.5, gt=0.0)
    rates: tuple[float, ...] = ENZYME_RATES
    t_max: float = Field(default=1000.0, gt=0.0)
    steady_tol: float = Field(default=1e-6, gt=0.0)
    steady_window: float = Field(default=10.0, gt=0.0)
    rtol: float = Field(default=1e-7, gt=0.0)
    atol: float = Field(default=1e-9, gt=0.0)
    # RK45 needs thousands of steps per window on this circuit; LSODA switches to BDF
    method: Literal["RK45", "DOP853", "LSODA"] = "LSODA"
    strict: bool = False

    @model_validator(mode="after")
    def _stimulus(self) -> "EnzymeConfig":
        if self.I1 == self.I0:
            raise ValueError("I1 must differ from I0 (zero stimulus)")
        if len(self.rates) != len(ENZYME_RATE_NAMES):
            raise ValueError(f"rates needs {len(ENZYME_RATE_NAMES)} values")
        return self

    def default_box(self) -> ParamBox:
        return ParamBox([0.35, 0.0], [0.88, 1.0])


class IdentityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["identity"]
    dim: int = Field(default=2, ge=1)

    def default_box(self) -> ParamBox:
        return ParamBox([0.0] * self.dim, [1.0] * self.dim)


class ExternalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["external"]
    command: list[str] = Field(min_length=1)
    dim_in: int = Field(ge=1)
    dim_out: int = Field(ge=1)
    lower: list[float]
    upper: list[float]
    timeout: float = Field(default=600.0, ge=0.0)

    def default_box(self) -> ParamBox:
        return ParamBox(self.lower, self.upper)


ModelConfig = Annotated[
    TorusConfig | ExponentialConfig | EnzymeConfig | IdentityConfig | ExternalConfig,
    Field(discriminator="name"),
]


class UniformTargetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["uniform"] = "uniform"


class InverseSquareDistanceTargetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["inverse_square_distance"]
    point: tuple[float, ...] = (0.0, 1.0, 0.0)


TargetConfig = Annotated[
    UniformTargetConfig | InverseSquareDistanceTargetConfig, Field(discriminator="name")
]


class BoxConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lower: list[float]
    upper: list[float]


class ExperimentConfig(BaseModel):
    """A complete experiment: model, target, optional box override and run settings."""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig
    target: TargetConfig = Field(default_factory=UniformTargetConfig)
    box: BoxConfig | None = None
    run: RunConfig

    def resolved_box(self) -> ParamBox:
        if self.box is not None:
            return ParamBox(self.box.lower, self.box.upper)
        return self.model.default_box()

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        box = self.resolved_box()
        self.run.check_box(box)
        if isinstance(self.model, ExternalConfig):
            if len(self.model.lower) != self.model.dim_in:
                raise ValueError("External model bounds must have dim_in entries")
        if self.model.name == "enzyme" and self.run.algorithm is Algorithm.JACOBIAN:
            if not self.run.finite_difference:
                raise ValueError(
                    "The enzyme model has no derivative; use algorithm 'knn' "
                    "or enable finite_difference"
                )
        if self.model.name == "external" and self.run.algorithm is Algorithm.JACOBIAN:
            if not self.run.finite_difference:
                raise ValueError("External models have no derivative; use algorithm 'knn'")
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        run = RunConfig.model_validate({**self.run.model_dump(by_alias=True), "seed": seed})
        return self.model_copy(update={"run": run})

    def resolved(self) -> dict[str, Any]:
        """Full configuration with defaults filled in, as written to the manifest."""
        data = self.model_dump(mode="json", by_alias=True)
        box = self.resolved_box()
        data["box"] = box.to_dict()
        data["run"]["k"] = self.run.resolved_k(box.dim)
        b = self.run.resolved_b(box)
        data["run"]["b"] = "inf" if math.isinf(b) else b
        return data


def load_experiment(path: Path) -> ExperimentConfig:
    """Parse and validate an experiment JSON document.

    Raises:
        pydantic.ValidationError: If the document is invalid.
        OSError, json.JSONDecodeError: If it cannot be read or parsed.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    config = ExperimentConfig.model_validate(data)
    logger.debug("Loaded experiment config from %s", path)
    return config
