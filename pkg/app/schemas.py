from __future__ import annotations

import importlib
import logging
from datetime import datetime
from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.coefficients import CoefficientSpec, check_linear_growth, constant, custom, odd_power_law, power_law
from app.em_engine import SdeProblem
from app.errors import ConfigurationError
from app.estimators import EstimatorKind

logger = logging.getLogger("nonsticky.schemas")

CoefficientKindName = Literal["power_law", "odd_power_law", "constant", "custom"]
RunStatus = Literal["running", "passed", "failed"]


class StudyKind(str, Enum):
    WEAK_KS = "weak_ks"
    STRONG_CAUCHY = "strong_cauchy"
    ABS_STRONG_CAUCHY = "abs_strong_cauchy"
    OCCUPATION_SCALING = "occupation_scaling"
    TRAP_CONTROL = "trap_control"


class CoefficientSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: CoefficientKindName
    alpha: float | None = Field(default=None, gt=0, lt=1)
    value: float | None = None
    function: str | None = None
    zero_set: list[float] = Field(default_factory=list)
    linear_growth_constant: float = Field(default=1.0, gt=0)
    vectorized: bool = False
    continuity_attested: bool = False

    @model_validator(mode="after")
    def check_kind_fields(self) -> CoefficientSection:
        if self.kind in ("power_law", "odd_power_law") and self.alpha is None:
            raise ValueError(f"{self.kind} coefficient needs alpha")
        if self.kind == "constant" and self.value is None:
            raise ValueError("constant coefficient needs value")
        if self.kind == "custom" and not self.function:
            raise ValueError("custom coefficient needs function = 'module:attribute'")
        return self

    def build(self) -> CoefficientSpec:
        if self.kind == "power_law":
            return power_law(self.alpha)
        if self.kind == "odd_power_law":
            return odd_power_law(self.alpha)
        if self.kind == "constant":
            return constant(self.value)
        if not self.continuity_attested:
            logger.warning("custom coefficient %s: continuity at discontinuity points not attested", self.function)
        spec = custom(
            _resolve_function(self.function),
            sorted(self.zero_set),
            self.linear_growth_constant,
            vectorized=self.vectorized,
            continuity_attested=self.continuity_attested,
        )
        if not check_linear_growth(spec):
            raise ConfigurationError(
                f"{self.function} exceeds {self.linear_growth_constant} * (1 + |x|) on [-10, 10]; "
                "raise linear_growth_constant"
            )
        return spec


def _resolve_function(reference: str) -> Any:
    module_name, _, attribute = reference.partition(":")
    if not module_name or not attribute:
        raise ConfigurationError(f"function reference must look like 'module:attribute', got {reference!r}")
    try:
        target = getattr(importlib.import_module(module_name), attribute)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot resolve coefficient function {reference!r}: {exc}") from exc
    if not callable(target):
        raise ConfigurationError(f"{reference!r} is not callable")
    return target


class ProblemSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x0: float
    horizon: float = Field(default=1.0, gt=0)


class StudySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: StudyKind
    levels: list[int] = Field(..., min_length=1)
    n_paths: int = Field(..., ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    p: float = Field(default=1.0, ge=1)
    finest_level: int | None = Field(default=None, ge=0)
    z: float = 0.0
    eps_ladder: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025], min_length=1)
    estimator: EstimatorKind = EstimatorKind.TENT
    dominance_factor: float = Field(default=1.0, ge=0)
    slope_tolerance: float = Field(default=0.15, gt=0)
    ks_p_threshold: float = Field(default=0.01, gt=0, lt=1)
    monotone_slack: float = Field(default=0.10, ge=0)

    @field_validator("levels")
    @classmethod
    def validate_levels(cls, value: list[int]) -> list[int]:
        if any(level < 0 for level in value):
            raise ValueError("levels must be nonnegative")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("levels must be strictly ascending")
        return value

    @field_validator("eps_ladder")
    @classmethod
    def validate_eps(cls, value: list[float]) -> list[float]:
        if any(eps <= 0 for eps in value):
            raise ValueError("eps values must be positive")
        return sorted(value, reverse=True)


class StudyFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coefficient: CoefficientSection
    problem: ProblemSection | None = None
    study: StudySection | None = None

    def build_problem(self) -> SdeProblem:
        if self.problem is None:
            raise ConfigurationError("config has no [problem] section")
        return SdeProblem(self.coefficient.build(), self.problem.x0, self.problem.horizon)


class ReportRow(BaseModel):
    level: int
    statistic: float
    ci_low: float | None = None
    ci_high: float | None = None
    n_paths: int
    p_value: float | None = None
    eps: float | None = None
    arm: str | None = None
    wall_time: float = 0.0


class Provenance(BaseModel):
    seed: int
    config_hash: str
    code_version: str


class ConvergenceReport(BaseModel):
    study: StudyKind
    rows: list[ReportRow]
    verdict: bool
    ci_reliable: bool
    details: dict[str, Any] = Field(default_factory=dict)
    provenance: Provenance

    def summary(self) -> dict[str, Any]:
        """Everything but timings, so identical runs serialize identically."""
        return self.model_dump(mode="json", exclude={"rows": {"__all__": {"wall_time"}}})


class RunManifest(BaseModel):
    config_path: str
    config_hash: str
    seed: int
    workers: int
    started_at: datetime
    finished_at: datetime | None = None
    outputs: dict[str, str] = Field(default_factory=dict)
    code_version: str
    status: RunStatus = "running"
    wall_time: float | None = None
