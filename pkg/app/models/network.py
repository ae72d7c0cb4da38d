"""
Pydantic models for the transmission network and its flow structure
"""
import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.types import Matrix


class Branch(BaseModel):
    """A transmission line; positive flow runs from `from_bus` to `to_bus`"""

    model_config = ConfigDict(frozen=True)

    from_bus: int = Field(..., ge=0, description="Sending-end bus (0-based)")
    to_bus: int = Field(..., ge=0, description="Receiving-end bus (0-based)")
    susceptance: float = Field(..., gt=0, description="Per-unit admittance weight")
    capacity: float = Field(default=math.inf, ge=0, description="Thermal limit in MW, inf when unbounded")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.capacity)

    @model_validator(mode="after")
    def _no_self_loop(self) -> "Branch":
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}->{self.to_bus} is a self-loop")
        return self


class Network(BaseModel):
    """DC network over dense bus ids 0..n-1. Parallel branches stay distinct."""

    model_config = ConfigDict(frozen=True)

    n_buses: int = Field(..., ge=1)
    branches: List[Branch] = Field(default_factory=list)

    @property
    def n(self) -> int:
        return self.n_buses

    @property
    def m(self) -> int:
        return len(self.branches)

    @model_validator(mode="after")
    def _check_topology(self) -> "Network":
        for idx, br in enumerate(self.branches):
            if br.from_bus >= self.n_buses or br.to_bus >= self.n_buses:
                raise ValueError(f"branch {idx} references a bus outside 0..{self.n_buses - 1}")
        if self.n_buses >= 2 and self.m < self.n_buses - 1:
            raise ValueError(f"{self.n_buses} buses need at least {self.n_buses - 1} branches")
        return self


class FlowStructure(BaseModel):
    """
    Linear-algebraic view of a network.

    incidence       n x m, +1 at the sending bus and -1 at the receiving bus,
                    so incidence @ f is the net outflow of every bus
    cycle_matrix    (m-n+1) x m reactance-weighted fundamental cycles (K)
    tree_branches   n-1 spanning-tree branch indices; fundamental coordinate j
                    is the flow on tree_branches[j]
    flow_basis      m x (n-1) map R from fundamental to branch flows
    injection_map   n x (n-1) map A = incidence @ R
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    incidence: Matrix
    cycle_matrix: Matrix
    tree_branches: List[int]
    flow_basis: Matrix
    injection_map: Matrix
    root: int = 0
    pinned_branch: Optional[int] = None
