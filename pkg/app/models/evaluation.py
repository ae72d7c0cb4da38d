"""
Pydantic models for Monte Carlo policy evaluation
"""
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.dispatch import CostModel, Forecast
from app.models.network import FlowStructure, Network
from app.models.types import Matrix

ScheduleFn = Callable[[Network, FlowStructure, CostModel, Forecast], np.ndarray]


class ScenarioBatch(BaseModel):
    """Standardized errors z ~ N(0, corr), one row per scenario"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    seed: int = Field(..., ge=0, lt=2**64)
    count: int = Field(..., ge=1)
    z_samples: Matrix

    def demands(self, forecast: Forecast) -> np.ndarray:
        """Realized demand d_hat + sigma_e z per scenario"""
        return forecast.d_hat[None, :] + forecast.sigma_e * self.z_samples


class Policy(BaseModel):
    """A day-ahead scheduling rule under evaluation"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    schedule: ScheduleFn
    evaluation_network: Optional[Network] = Field(
        default=None, description="Network the recourse and its paired oracle run on, if not the case network"
    )


class EvaluationRow(BaseModel):
    """Cost statistics of one policy at one sigma"""

    sigma: float
    policy: str
    mean_cost: float
    std_error: float
    stage1_cost: float
    stage2_cost: float
    integration_cost: float
    integration_std_error: float
    scenarios: int
    infeasible: int = 0


class PriceFit(BaseModel):
    """Least-squares fit of integration cost against sigma"""

    policy: str
    slope: float = Field(..., description="Fit through the origin")
    half_width: float = Field(..., description="95% confidence half-width of the slope")
    free_slope: float
    intercept: float
    r_squared: float
    analytic_price: Optional[float] = None


class EvaluationReport(BaseModel):
    """Rows per (sigma, policy) plus per-policy price fits"""

    seed: int
    count: int
    sigma_grid: List[float]
    rows: List[EvaluationRow] = Field(default_factory=list)
    fits: List[PriceFit] = Field(default_factory=list)

    def row(self, sigma: float, policy: str) -> EvaluationRow:
        for r in self.rows:
            if r.policy == policy and np.isclose(r.sigma, sigma):
                return r
        raise KeyError(f"no row for policy '{policy}' at sigma {sigma:g}")

    def fit(self, policy: str) -> PriceFit:
        for f in self.fits:
            if f.policy == policy:
                return f
        raise KeyError(f"no fit for policy '{policy}'")


class BruteForceResult(BaseModel):
    """Best grid point of the sample-average two-stage objective"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    delta: List[float] = Field(..., description="Perturbation of each searched bus, sigma_e units")
    buses: List[int]
    cost: float
    final_step: float
    grid_too_coarse: bool = False
    evaluations: int = 0
