"""
Pydantic models for prices, forecasts, OPF results and risk-limiting dispatches
"""
from enum import Enum
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.models.types import Matrix, Vector


class CostModel(BaseModel):
    """Day-ahead (alpha) and real-time (beta) linear prices per bus, $/MW"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: Vector
    beta: Vector
    pmax: Optional[Vector] = Field(
        default=None, description="Per-bus limit on the nominal day-ahead purchase, inf when unlimited"
    )

    @model_validator(mode="after")
    def _check_prices(self) -> "CostModel":
        if self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta must have one entry per bus")
        if np.any(self.alpha < 0) or np.any(self.beta < 0):
            raise ValueError("prices must be nonnegative")
        if self.alpha.max() > self.beta.min():
            raise ValueError(
                f"day-ahead price {self.alpha.max():g} exceeds real-time price {self.beta.min():g}"
            )
        if self.pmax is not None:
            if self.pmax.shape != self.alpha.shape:
                raise ValueError("pmax must have one entry per bus")
            if np.any(self.pmax < 0):
                raise ValueError("pmax must be nonnegative")
        return self

    @property
    def n(self) -> int:
        return self.alpha.shape[0]


class Forecast(BaseModel):
    """Predicted net demand with Gaussian errors e ~ N(0, sigma_e^2 corr)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    d_hat: Vector
    sigma_e: float = Field(..., ge=0, description="Error scale in MW; zero is the deterministic limit")
    corr: Matrix

    @model_validator(mode="before")
    @classmethod
    def _default_corr(cls, data):
        if isinstance(data, dict) and data.get("corr") is None:
            data = dict(data)
            data["corr"] = np.eye(len(data["d_hat"]))
        return data

    @model_validator(mode="after")
    def _check_corr(self) -> "Forecast":
        n = self.d_hat.shape[0]
        if self.corr.shape != (n, n):
            raise ValueError(f"correlation matrix must be {n}x{n}")
        if not np.allclose(self.corr, self.corr.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if np.linalg.eigvalsh(self.corr).min() < -settings.cholesky_max_jitter:
            raise ValueError("correlation matrix must be positive semidefinite")
        if not np.all(np.isfinite(self.d_hat)):
            raise ValueError("forecast must be finite")
        return self

    @property
    def n(self) -> int:
        return self.d_hat.shape[0]

    def with_sigma(self, sigma_e: float) -> "Forecast":
        return Forecast(d_hat=self.d_hat, sigma_e=sigma_e, corr=self.corr)


class CongestedLine(BaseModel):
    """A binding line; direction +1 when flow runs from_bus -> to_bus"""

    model_config = ConfigDict(frozen=True)

    branch: int
    direction: Literal[1, -1]


class OpfResult(BaseModel):
    """
    Optimum of the generic DC-OPF J(q, x).

    generation is the signed balancing generation x + A f (negative means
    disposal); purchased is the costed part y >= max(generation, 0).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    generation: Vector
    purchased: Vector
    disposal: Vector
    demand: Vector
    flows: Vector
    fundamental_flows: Vector
    cost: float
    bus_duals: Vector
    capacity_duals: Vector = Field(..., description="Signed per-branch mu, positive when from->to binds")
    congested: List[CongestedLine] = Field(default_factory=list)
    degenerate: List[CongestedLine] = Field(
        default_factory=list, description="Binding lines carrying no multiplier"
    )
    iterations: int = 0

    def generating(self, tol: Optional[float] = None) -> np.ndarray:
        """Indices of buses with strictly positive generation"""
        tol = settings.active_tol if tol is None else tol
        return np.flatnonzero(self.generation > tol)

    def shedding(self, tol: Optional[float] = None) -> np.ndarray:
        tol = settings.active_tol if tol is None else tol
        return np.flatnonzero(self.generation < -tol)


class Region(str, Enum):
    """Partition of the two-bus forecast plane"""
    A = "A"  # cheap-side surplus exports at capacity
    B = "B"  # uncongested, net shortage
    C = "C"  # expensive-side surplus exports at capacity
    D = "D"  # uncongested, net surplus
    E = "E"  # congested cheap -> expensive, both buses generate


class RegionClassification(BaseModel):
    region: Region
    boundary_case: bool = False


class ReductionPattern(str, Enum):
    """How a single-congestion nominal solution collapses to two buses"""
    IDENTITY = "identity"
    TWO_GENERATORS = "two_generators"
    ONE_GENERATOR = "one_generator"
    SURPLUS_SOURCE_SIDE = "surplus_source_side"


class TwoBusProblem(BaseModel):
    """
    Congested two-bus network 1' -> 2' with correlated normalized errors.

    delta_map is |G| x 2: per-bus perturbations of the generating buses are
    delta_map @ (delta1', delta2').
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    cov: Matrix
    gamma: Vector
    source_bus: int
    sink_bus: int
    congested_branch: int
    pattern: ReductionPattern = ReductionPattern.IDENTITY
    generators: List[int] = Field(default_factory=list)
    delta_map: Matrix = Field(default_factory=lambda: np.zeros((0, 2)))
    error_weights: Optional[Vector] = None

    @model_validator(mode="after")
    def _check_cov(self) -> "TwoBusProblem":
        if self.cov.shape != (2, 2):
            raise ValueError("cov must be 2x2")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("cov must be symmetric")
        if np.any(self.gamma < -1e-9) or np.any(self.gamma > 1 + 1e-9):
            raise ValueError("gamma weights must lie in [0, 1]")
        return self

    @property
    def m(self) -> float:
        """Real-time price of a shortage on the source side (backflow makes both sides available)"""
        return min(self.beta1, self.beta2)


class EquilibriumSolution(BaseModel):
    """Stationary point of the perturbed two-bus problem in sigma_e units"""

    model_config = ConfigDict(frozen=True)

    delta1: float
    delta2: float
    price: float
    residual: float = 0.0
    iterations: int = 0
    saturated: bool = False


class RldDispatch(BaseModel):
    """Risk-limiting day-ahead schedule g* = max(0, g_bar + sigma_e * delta)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    g_star: Vector
    delta: Vector
    nominal: OpfResult
    price_of_uncertainty: float
    sigma_e: float
    path: Literal["single_bus", "two_bus"]
    pattern: Optional[ReductionPattern] = None
    reduction: Optional[TwoBusProblem] = None
    equilibrium: Optional[EquilibriumSolution] = None
    saturated: bool = False
    boundary_case: bool = False


class AggregateDispatch(BaseModel):
    """Copper-plate reduction used when no line is congested"""

    model_config = ConfigDict(frozen=True)

    alpha: float
    beta: float
    std: float = Field(..., description="sqrt(1' corr 1), the aggregate error scale in sigma_e units")
    delta: float
    price: float
    generators: List[int]
