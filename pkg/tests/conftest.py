"""
Shared fixtures: bundled cases, small networks and an independent LP oracle
"""
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from app.models.dispatch import CostModel, Forecast
from app.models.network import Branch, Network
from app.services.case_io import resolve_case
from app.services.network import build_flow_structure


@pytest.fixture(scope="session")
def case9():
    return resolve_case("case9")


@pytest.fixture(scope="session")
def case9_congested():
    return resolve_case("case9_congested")


@pytest.fixture(scope="session")
def two_bus_case():
    return resolve_case("two_bus")


@pytest.fixture(scope="session")
def ring_case():
    return resolve_case("three_bus_ring")


@pytest.fixture(scope="session")
def single_bus_case():
    return resolve_case("single_bus")


def line(frm, to, b=10.0, cap=math.inf) -> Branch:
    return Branch(from_bus=frm, to_bus=to, susceptance=b, capacity=cap)


@pytest.fixture
def ring3():
    """Equal-admittance triangle, line 0-1 limited to 60 MW"""
    net = Network(n_buses=3, branches=[line(0, 1, cap=60.0), line(1, 2), line(2, 0)])
    return net, build_flow_structure(net)


@pytest.fixture
def path3():
    """Path 2 - 0 - 1 with the 0-1 line limited"""
    net = Network(n_buses=3, branches=[line(0, 1, cap=50.0), line(2, 0)])
    return net, build_flow_structure(net)


def make_two_bus(alpha=(0.45, 0.5), beta=(1.0, 1.0), d_hat=(50.0, 200.0), cap=100.0, sigma=1.0, rho=0.0):
    net = Network(n_buses=2, branches=[line(0, 1, cap=cap)])
    costs = CostModel(alpha=list(alpha), beta=list(beta))
    forecast = Forecast(d_hat=list(d_hat), sigma_e=sigma, corr=[[1.0, rho], [rho, 1.0]])
    return net, build_flow_structure(net), costs, forecast


def surplus_source_ring(sigma=5.0):
    """Bus 1 has surplus to dispose of and exports through a congested 1-2 line"""
    net = Network(n_buses=3, branches=[line(0, 1, cap=100.0), line(1, 2), line(2, 0)])
    costs = CostModel(alpha=[0.2, 0.9, 0.4], beta=[1.0, 1.0, 1.0])
    forecast = Forecast(d_hat=[-150.0, 200.0, 0.0], sigma_e=sigma)
    return net, build_flow_structure(net), costs, forecast


@pytest.fixture
def reference_opf_cost():
    """J(q, x) through scipy's HiGHS on the bus-angle formulation"""

    def solve(net: Network, prices, demand, pmax=None) -> float:
        n, m = net.n, net.m
        # variables: y (n), theta (n)
        b = np.array([br.susceptance for br in net.branches])
        inc = np.zeros((n, m))
        for k, br in enumerate(net.branches):
            inc[br.from_bus, k] = 1.0
            inc[br.to_bus, k] = -1.0
        flow = np.diag(b) @ inc.T  # f = flow @ theta
        a_ub = [np.hstack([-np.eye(n), inc @ flow])]
        b_ub = [-np.asarray(demand, dtype=float)]
        for k, br in enumerate(net.branches):
            if br.bounded:
                row = np.concatenate([np.zeros(n), flow[k]])
                a_ub += [row[None, :], -row[None, :]]
                b_ub += [[br.capacity], [br.capacity]]
        a_eq = np.zeros((1, 2 * n))
        a_eq[0, n] = 1.0
        upper = [None] * n if pmax is None else [None if not np.isfinite(p) else p for p in pmax]
        bounds = [(0, u) for u in upper] + [(None, None)] * n
        res = linprog(
            np.concatenate([np.asarray(prices, dtype=float), np.zeros(n)]),
            A_ub=np.vstack(a_ub), b_ub=np.concatenate(b_ub), A_eq=a_eq, b_eq=[0.0],
            bounds=bounds, method="highs",
        )
        return res.fun if res.status == 0 else float("nan")

    return solve
