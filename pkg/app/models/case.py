"""
Pydantic models for case files, run options and the HTTP surface
"""
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.core.config import settings
from app.models.dispatch import CostModel, Forecast
from app.models.network import Network


class ExperimentDefaults(BaseModel):
    """Optional per-case experiment settings"""

    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0, lt=2**64)
    scenarios: int = Field(default_factory=lambda: settings.default_scenarios, ge=1)
    sigma_grid: List[float] = Field(default_factory=lambda: list(settings.default_sigma_grid))


class CaseFile(BaseModel):
    """A parsed benchmark case"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = "case"
    network: Network
    costs: CostModel
    forecast: Forecast
    defaults: ExperimentDefaults = Field(default_factory=ExperimentDefaults)

    @property
    def n(self) -> int:
        return self.network.n


Command = Literal["nda", "rld", "evaluate", "price"]
POLICY_NAMES = ("rld", "three_sigma", "rld_congestion_ignorant", "rld_lower_bound", "oracle")


class RunOptions(BaseModel):
    """Flags shared by every command (CLI and HTTP)"""

    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    scenarios: Optional[int] = Field(None, ge=1)
    sigma: Optional[float] = Field(None, ge=0)
    sigma_grid: Optional[List[float]] = None
    beta_ratio: Optional[float] = Field(None, gt=1.0)
    policies: Optional[List[str]] = None
    workers: Optional[int] = Field(None, ge=1)
    alpha2_form: Optional[Literal["dual", "theorem"]] = None

    @field_validator("policies")
    @classmethod
    def _known_policies(cls, value):
        if value is None:
            return value
        unknown = [p for p in value if p not in POLICY_NAMES]
        if unknown:
            raise ValueError(f"unknown policies: {', '.join(unknown)}")
        return value

    @field_validator("sigma_grid")
    @classmethod
    def _ascending(cls, value):
        if value is None:
            return value
        if len(value) < 1 or any(b <= a for a, b in zip(value, value[1:])) or value[0] < 0:
            raise ValueError("sigma grid must be nonnegative and strictly ascending")
        return value


Cell = Union[str, int, float]


class CommandResult(BaseModel):
    """A table produced by a command, rendered as CSV or JSON"""

    command: Command
    columns: List[str]
    rows: List[List[Cell]]
    comments: List[str] = Field(default_factory=list)


# HTTP models

class DispatchRequest(RunOptions):
    """Run a command on a bundled case or on inline case text"""

    case: Optional[str] = Field(None, description="Bundled case name, e.g. case9")
    case_text: Optional[str] = Field(None, max_length=1_000_000, description="Case file contents")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "case": "case9",
                "sigma": 20.0,
                "beta_ratio": 1.5,
                "scenarios": 2000,
                "seed": 7,
            }
        }
    )


class CaseSummary(BaseModel):
    """Short description of a case"""

    name: str
    buses: int
    branches: int
    total_demand: float
    sigma_e: float
    bounded_branches: int

    @classmethod
    def of(cls, case: CaseFile) -> "CaseSummary":
        return cls(
            name=case.name,
            buses=case.network.n,
            branches=case.network.m,
            total_demand=float(np.sum(case.forecast.d_hat)),
            sigma_e=case.forecast.sigma_e,
            bounded_branches=sum(1 for br in case.network.branches if br.bounded),
        )


class ErrorResponse(BaseModel):
    """Error response"""
    error: str
    detail: Optional[str] = None
    code: str
