"""
DC-OPF problems as LPs: the generic balancing problem J(q, x), the nominal
day-ahead OPF, the real-time recourse and the clairvoyant oracle
"""
import logging
from typing import List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import DimensionMismatch, DomainError, InfeasibleNetwork, NumericalFailure
from app.models.dispatch import CongestedLine, CostModel, OpfResult
from app.models.lp import LinearProgram, LpStatus
from app.models.network import FlowStructure, Network
from app.services.lp import ParametricRhsSolver, solve_lp

logger = logging.getLogger(__name__)


def _bounded_branches(net: Network) -> np.ndarray:
    return np.array([idx for idx, br in enumerate(net.branches) if br.bounded], dtype=int)


def _check_vector(name: str, value, n: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if value.shape != (n,):
        raise DimensionMismatch(f"{name} must have {n} entries, got shape {value.shape}")
    return value


def opf_structure(
    net: Network,
    fs: FlowStructure,
    prices,
    pmax: Optional[np.ndarray] = None,
) -> LinearProgram:
    """
    Balancing LP over (y, f~), demand-free part:

        min q'y  s.t.  -y + A f~ <= -x,  |R_b f~| <= c_b for bounded b,
                       0 <= y <= pmax,  f~ free

    The first n rows of b_ub carry -x.
    """
    n, k = net.n, fs.injection_map.shape[1]
    bounded = _bounded_branches(net)
    caps = np.array([net.branches[b].capacity for b in bounded])
    r_bounded = fs.flow_basis[bounded, :]
    a_ub = np.vstack([
        np.hstack([-np.eye(n), fs.injection_map]),
        np.hstack([np.zeros((len(bounded), n)), r_bounded]),
        np.hstack([np.zeros((len(bounded), n)), -r_bounded]),
    ])
    b_ub = np.concatenate([np.zeros(n), caps, caps])
    upper = np.full(n + k, np.inf)
    if pmax is not None:
        upper[:n] = pmax
    return LinearProgram(
        c=np.concatenate([np.asarray(prices, dtype=float), np.zeros(k)]),
        a_ub=a_ub,
        b_ub=b_ub,
        lower=np.concatenate([np.zeros(n), np.full(k, -np.inf)]),
        upper=upper,
    )


def _classify(net: Network, flows: np.ndarray, mu_pos: np.ndarray, mu_neg: np.ndarray, bounded: np.ndarray
              ) -> Tuple[List[CongestedLine], List[CongestedLine]]:
    tol = settings.active_tol
    congested, degenerate = [], []
    for pos, b in enumerate(bounded):
        cap = net.branches[b].capacity
        for direction, mu in ((1, mu_pos[pos]), (-1, mu_neg[pos])):
            if direction * flows[b] >= cap - tol:
                line = CongestedLine(branch=int(b), direction=direction)
                (congested if mu > tol else degenerate).append(line)
    return congested, degenerate


def solve_generic_opf(
    net: Network,
    fs: FlowStructure,
    prices,
    demand,
    pmax: Optional[np.ndarray] = None,
) -> OpfResult:
    """
    Minimal cost of balancing demand x at prices q with free disposal.

    Raises:
        InfeasibleNetwork: if the purchase limits cannot cover the demand
    """
    prices = _check_vector("prices", prices, net.n)
    demand = _check_vector("demand", demand, net.n)
    if np.any(prices < 0):
        raise DomainError("prices must be nonnegative")

    lp = opf_structure(net, fs, prices, pmax)
    b_ub = lp.b_ub.copy()
    b_ub[: net.n] = -demand
    sol = solve_lp(lp.model_copy(update={"b_ub": b_ub}))
    if sol.status == LpStatus.INFEASIBLE:
        raise InfeasibleNetwork("purchase limits and line capacities cannot balance the demand")
    if not sol.optimal:
        raise NumericalFailure(f"balancing LP ended {sol.status.value}")

    n = net.n
    y = sol.primal[:n]
    f_tilde = sol.primal[n:]
    flows = fs.flow_basis @ f_tilde
    generation = demand + fs.injection_map @ f_tilde
    bounded = _bounded_branches(net)
    k = len(bounded)
    mu_pos = sol.dual_ineq[n: n + k]
    mu_neg = sol.dual_ineq[n + k:]
    capacity_duals = np.zeros(net.m)
    capacity_duals[bounded] = mu_pos - mu_neg
    congested, degenerate = _classify(net, flows, mu_pos, mu_neg, bounded)
    if degenerate:
        logger.warning("binding lines without multiplier: %s", [(c.branch, c.direction) for c in degenerate])

    return OpfResult(
        generation=generation,
        purchased=y,
        disposal=np.maximum(y - generation, 0.0),
        demand=demand,
        flows=flows,
        fundamental_flows=f_tilde,
        cost=sol.objective_value,
        bus_duals=sol.dual_ineq[:n],
        capacity_duals=capacity_duals,
        congested=congested,
        degenerate=degenerate,
        iterations=sol.iterations,
    )


def solve_nda_opf(net: Network, fs: FlowStructure, costs: CostModel, d_hat) -> OpfResult:
    """Nominal day-ahead OPF: J(alpha, d_hat) under the day-ahead purchase limits"""
    result = solve_generic_opf(net, fs, costs.alpha, d_hat, pmax=costs.pmax)
    logger.info(
        "nominal OPF: cost %.6g, congested %s",
        result.cost,
        [(c.branch, c.direction) for c in result.congested] or "none",
    )
    return result


def oracle_cost(net: Network, fs: FlowStructure, costs: CostModel, d_realized) -> float:
    """Clairvoyant cost J(alpha, d)"""
    return solve_generic_opf(net, fs, costs.alpha, d_realized).cost


def rt_opf_cost(net: Network, fs: FlowStructure, costs: CostModel, d_realized, g_dayahead) -> float:
    """Real-time recourse cost J(beta, d - g)"""
    g = _check_vector("schedule", g_dayahead, net.n)
    if np.any(g < -settings.feasibility_tol):
        raise DomainError("day-ahead schedule must be nonnegative")
    d = _check_vector("demand", d_realized, net.n)
    return solve_generic_opf(net, fs, costs.beta, d - g).cost


def congested_lines(result: OpfResult) -> List[Tuple[int, int]]:
    """(branch, direction) pairs of the congested set"""
    return [(c.branch, c.direction) for c in result.congested]


class OpfBatchSolver:
    """J(q, x) for many demands x on one network and price vector"""

    def __init__(self, net: Network, fs: FlowStructure, prices):
        self.net = net
        self.prices = _check_vector("prices", prices, net.n)
        self._structure = opf_structure(net, fs, self.prices) if net.n > 1 else None
        self._solver = ParametricRhsSolver(self._structure) if self._structure is not None else None

    def costs(self, demands: np.ndarray) -> np.ndarray:
        """One cost per row of `demands`; nan where the LP is infeasible"""
        demands = np.atleast_2d(np.asarray(demands, dtype=float))
        if demands.shape[1] != self.net.n:
            raise DimensionMismatch(f"demands must have {self.net.n} columns")
        if self._solver is None:
            return self.prices[0] * np.maximum(demands[:, 0], 0.0)
        b_ub = np.broadcast_to(self._structure.b_ub, (demands.shape[0], self._structure.b_ub.shape[0])).copy()
        b_ub[:, : self.net.n] = -demands
        return self._solver.objectives(b_ub=b_ub)


def generic_opf_costs(net: Network, fs: FlowStructure, prices, demands) -> np.ndarray:
    """Batched J(q, x)"""
    return OpfBatchSolver(net, fs, prices).costs(demands)


def oracle_costs(net: Network, fs: FlowStructure, costs: CostModel, demands) -> np.ndarray:
    """Batched clairvoyant costs"""
    return generic_opf_costs(net, fs, costs.alpha, demands)


def rt_opf_costs(net: Network, fs: FlowStructure, costs: CostModel, demands, g_dayahead) -> np.ndarray:
    """Batched recourse costs for one day-ahead schedule"""
    g = _check_vector("schedule", g_dayahead, net.n)
    return generic_opf_costs(net, fs, costs.beta, np.atleast_2d(demands) - g[None, :])
