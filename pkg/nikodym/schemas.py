from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, conint, field_validator, model_validator

SCHEMA_VERSION = 1


# =========================
# Geometry / audit reports
# =========================
class NondegeneracyReport(BaseModel):
    curve: str
    L: int
    B: float
    min_gen_det: float
    max_cnorm: float
    samples: int
    passes: bool
    certification: Literal["sampled"] = "sampled"


class AuditReport(BaseModel):
    """Sampled symbol audit; serialized with the keys ``lambda`` and ``pass``."""

    model_config = ConfigDict(populate_by_name=True)

    symbol_id: str
    lemma: str
    n: Optional[int] = None
    nu: Optional[int] = None
    lam: float = Field(alias="lambda")
    min_ratio: Optional[float] = None
    max_ratio: Optional[float] = None
    passed: bool = Field(alias="pass")
    samples: int = 0
    empty: bool = False
    details: Dict[str, Any] = Field(default_factory=dict)


class StageResult(BaseModel):
    stage: str
    passed: bool
    message: str = ""
    details: Dict[str, Any] = Field(default_factory=dict)


class PipelineReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(default=SCHEMA_VERSION, alias="schema")
    curve: str
    lam: float = Field(alias="lambda")
    N: int
    constants: Dict[str, float] = Field(default_factory=dict)
    preflight: Optional[StageResult] = None
    stages: List[StageResult] = Field(default_factory=list)
    passed: bool = False
    failed_stage: Optional[str] = None


# =========================
# Experiments
# =========================
class NormEstimate(BaseModel):
    operator: str
    p: float
    q: float
    strategy: Literal["random", "adversarial", "power-iteration"]
    value: float
    trials: int
    seed: int
    witness_hash: str = ""
    history: List[float] = Field(default_factory=list)
    monotone: Optional[bool] = None


class ScalingFit(BaseModel):
    x: List[float]
    y: List[float]
    slope: float
    intercept: float
    r2: float
    slope_stderr: float
    claimed_exponent: float
    slack: float
    bound: Literal["upper", "lower"] = "upper"
    passed: bool


class ExperimentReport(BaseModel):
    """Generic envelope written to report.json; ``rows`` also feed data.csv."""

    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(default=SCHEMA_VERSION, alias="schema")
    experiment: str
    passed: bool
    summary: Dict[str, Any] = Field(default_factory=dict)
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    failed_stage: Optional[str] = None


# =========================
# Run configuration
# =========================
class GridConfig(BaseModel):
    X: float = 4.0
    nx: conint(ge=8) = 64
    nt: conint(ge=8) = 32

    @field_validator("nx", "nt")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError("must be a power of two")
        return v


class RunConfig(BaseModel):
    experiment: str
    curve: str = "circle2d"
    d: conint(ge=1, le=6) = 2
    delta_grid: List[float] = Field(default_factory=list)
    lambda_grid: List[float] = Field(default_factory=list)
    N: Optional[int] = None
    p: float = 2.0
    q: float = 2.0
    grid: GridConfig = Field(default_factory=GridConfig)
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str = "results"
    slack: float = 0.25
    workers: int = 0
    options: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("experiment")
    @classmethod
    def _known_experiment(cls, v: str) -> str:
        from .services.presets import PRESETS

        if v not in PRESETS:
            raise ValueError(f"unknown experiment '{v}'")
        return v

    @field_validator("delta_grid")
    @classmethod
    def _deltas_in_unit_interval(cls, v: List[float]) -> List[float]:
        if any(not 0 < x < 1 for x in v):
            raise ValueError("every delta must lie in (0,1)")
        return v

    @field_validator("lambda_grid")
    @classmethod
    def _lambdas_positive(cls, v: List[float]) -> List[float]:
        if any(x < 1 for x in v):
            raise ValueError("every lambda must be >= 1")
        return v

    @model_validator(mode="after")
    def _curve_and_contracts(self) -> "RunConfig":
        from .services.curve_geometry import get_curve

        curve = get_curve(self.curve, self.d)
        self.d = curve.d
        if self.N is not None and not 1 <= self.N <= self.d:
            raise ValueError(f"N must be in 1..{self.d}")
        reach = float(np.max(np.linalg.norm(curve.eval(0, np.linspace(-1, 1, 257)), axis=-1)))
        if self.grid.X < reach + 1:
            raise ValueError(f"grid.X must be at least sup|gamma| + 1 = {reach + 1:.3f}")
        return self

    def hash_payload(self) -> Dict[str, Any]:
        """Every parameter that can change results (not output_dir or workers)."""
        return self.model_dump(exclude={"output_dir", "workers"})


# =========================
# API views
# =========================
class PresetInfo(BaseModel):
    name: str
    description: str
    parameters: Dict[str, Any]
    runtime_class: Literal["seconds", "minutes", "long"]


class RunOut(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    id: int
    config_hash: str
    preset: str
    curve: str
    status: str
    failed_stage: Optional[str] = None
    output_path: str
    library_version: str
    wall_time: float
    created_at: Optional[datetime] = None
