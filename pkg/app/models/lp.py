"""
Pydantic models for dense linear programs
"""
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models.types import Matrix, Vector


class LpStatus(str, Enum):
    """Solver outcome"""
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LinearProgram(BaseModel):
    """
    min c'x  s.t.  a_eq x = b_eq,  a_ub x <= b_ub,  lower <= x <= upper

    Omitted constraint blocks are empty; omitted bounds default to x >= 0.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    c: Vector
    a_eq: Optional[Matrix] = None
    b_eq: Optional[Vector] = None
    a_ub: Optional[Matrix] = None
    b_ub: Optional[Vector] = None
    lower: Optional[Vector] = None
    upper: Optional[Vector] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n = len(np.atleast_1d(np.asarray(data["c"], dtype=float)))
        for a_key, b_key in (("a_eq", "b_eq"), ("a_ub", "b_ub")):
            if data.get(a_key) is None:
                data[a_key] = np.zeros((0, n))
                data[b_key] = np.zeros(0)
            else:
                data[a_key] = np.asarray(data[a_key], dtype=float).reshape(-1, n)
        if data.get("lower") is None:
            data["lower"] = np.zeros(n)
        if data.get("upper") is None:
            data["upper"] = np.full(n, np.inf)
        return data

    @model_validator(mode="after")
    def _check_dimensions(self) -> "LinearProgram":
        n = self.n_vars
        for name, a, b in (("eq", self.a_eq, self.b_eq), ("ub", self.a_ub, self.b_ub)):
            if a.shape[1] != n or a.shape[0] != b.shape[0]:
                raise ValueError(f"{name} block has shape {a.shape} against {b.shape[0]} rhs and {n} variables")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"{name} right-hand side must be finite")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ValueError("bounds exclude every value")
        return self

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]


class LpSolution(BaseModel):
    """
    Solver result. Multipliers follow the Lagrangian

        c'x - dual_eq'(a_eq x - b_eq) + dual_ineq'(a_ub x - b_ub)
            - dual_lower'(x - lower) + dual_upper'(x - upper)

    with dual_ineq, dual_lower, dual_upper >= 0.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    status: LpStatus
    primal: Optional[Vector] = None
    dual_eq: Optional[Vector] = None
    dual_ineq: Optional[Vector] = None
    dual_lower: Optional[Vector] = None
    dual_upper: Optional[Vector] = None
    objective_value: float = float("nan")
    iterations: int = 0
    basis: List[int] = []

    @property
    def optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL
