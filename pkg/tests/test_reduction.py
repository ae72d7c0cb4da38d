"""
Tests for aggregation weights, the two-bus reduction and the network dispatch
"""
import math

import numpy as np
import pytest

from app.core.errors import Unsupported
from app.models.dispatch import CongestedLine, CostModel, Forecast, ReductionPattern, TwoBusProblem
from app.models.network import Network
from app.services.dcopf import solve_nda_opf
from app.services.evaluation import sample_average_cost, sample_scenarios
from app.services.gaussian import phi, q_inv
from app.services.network import build_flow_structure
from app.services.rld import (
    aggregate_single_bus,
    congestion_ignorant_rld,
    gamma_weights,
    network_rld,
    price_of_uncertainty_single,
    reduce_to_two_bus,
    solve_reduced,
    two_bus_expected_cost,
)
from tests.conftest import line, make_two_bus, surplus_source_ring


def _ring(ring_case, sigma=None):
    net, costs, forecast = ring_case.network, ring_case.costs, ring_case.forecast
    if sigma is not None:
        forecast = forecast.with_sigma(sigma)
    return net, build_flow_structure(net), costs, forecast


class TestGammaWeights:
    """Source-side share of each bus"""

    def test_two_bus(self):
        net, fs, _, _ = make_two_bus()
        gamma = gamma_weights(net, fs, CongestedLine(branch=0, direction=1))
        assert gamma.tolist() == [1.0, 0.0]

    def test_reversed_direction_swaps_sides(self):
        net, fs, _, _ = make_two_bus()
        gamma = gamma_weights(net, fs, CongestedLine(branch=0, direction=-1))
        assert gamma.tolist() == [0.0, 1.0]

    def test_ring_interior_bus_splits_evenly(self, ring3):
        net, fs = ring3
        gamma = gamma_weights(net, fs, CongestedLine(branch=0, direction=1))
        assert gamma == pytest.approx([1.0, 0.0, 0.5], abs=1e-10)

    def test_radial_bus_follows_its_neighbour(self, path3):
        net, fs = path3
        gamma = gamma_weights(net, fs, CongestedLine(branch=0, direction=1))
        assert gamma == pytest.approx([1.0, 0.0, 1.0])


class TestReduction:
    """Collapsing a single congestion to two buses"""

    def test_ring_two_generators(self, ring_case):
        net, fs, costs, forecast = _ring(ring_case)
        nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
        assert nominal.generation == pytest.approx([30.0, 0.0, 120.0], abs=1e-6)
        problem = reduce_to_two_bus(net, fs, costs, forecast, nominal)
        assert problem.pattern == ReductionPattern.TWO_GENERATORS
        assert (problem.source_bus, problem.sink_bus) == (0, 1)
        assert problem.generators == [0, 2]
        assert problem.alpha1 == pytest.approx(0.5)
        assert problem.alpha2 == pytest.approx(0.7)
        assert problem.delta_map == pytest.approx(np.array([[1.0, -1.0], [0.0, 2.0]]))

    def test_dual_prices_are_the_end_duals(self, ring_case, case9_congested):
        for case in (ring_case, case9_congested):
            net, costs, forecast = case.network, case.costs, case.forecast
            fs = build_flow_structure(net)
            nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
            problem = reduce_to_two_bus(net, fs, costs, forecast, nominal, alpha2_form="dual")
            assert problem.alpha1 == pytest.approx(nominal.bus_duals[problem.source_bus], abs=1e-8)
            assert problem.alpha2 == pytest.approx(nominal.bus_duals[problem.sink_bus], abs=1e-8)

    def test_theorem_form_price(self, ring_case):
        net, fs, costs, forecast = _ring(ring_case)
        nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
        problem = reduce_to_two_bus(net, fs, costs, forecast, nominal, alpha2_form="theorem")
        assert problem.alpha2 == pytest.approx(0.95)

    def test_aggregated_variance_is_total_variance(self, ring_case):
        net, fs, costs, _ = _ring(ring_case)
        corr = np.array([[1.0, 0.3, -0.2], [0.3, 1.0, 0.4], [-0.2, 0.4, 1.0]])
        forecast = Forecast(d_hat=ring_case.forecast.d_hat, sigma_e=1.0, corr=corr)
        nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
        problem = reduce_to_two_bus(net, fs, costs, forecast, nominal)
        assert problem.cov.sum() == pytest.approx(corr.sum())
        assert problem.cov[0, 0] == pytest.approx(np.array([1, 0, 0.5]) @ corr @ np.array([1, 0, 0.5]))

    def test_surplus_at_the_source(self):
        net, fs, _, _ = make_two_bus()
        costs = CostModel(alpha=[0.2, 0.3], beta=[1.0, 1.0])
        forecast = Forecast(d_hat=[-150.0, 200.0], sigma_e=5.0)
        result = network_rld(net, fs, costs, forecast)
        assert result.pattern == ReductionPattern.SURPLUS_SOURCE_SIDE
        assert result.delta == pytest.approx([0.0, q_inv(0.3)])
        assert result.price_of_uncertainty == pytest.approx(price_of_uncertainty_single(0.3, 1.0))

    def test_surplus_source_with_interior_generator(self):
        net, fs, costs, forecast = surplus_source_ring()
        result = network_rld(net, fs, costs, forecast)
        assert result.nominal.generation == pytest.approx([-50.0, 0.0, 100.0], abs=1e-6)
        assert result.pattern == ReductionPattern.SURPLUS_SOURCE_SIDE
        problem = result.reduction
        assert problem.gamma == pytest.approx([1.0, 0.0, 0.5], abs=1e-10)
        # the sink dual: bus 2 delivers half of each extra unit past the line
        assert problem.alpha2 == pytest.approx(0.8)
        assert problem.alpha2 == pytest.approx(result.nominal.bus_duals[1], abs=1e-8)
        assert problem.cov[1, 1] == pytest.approx(1.25)
        assert result.delta[0] == 0.0
        assert result.delta[2] == pytest.approx(2.0 * result.equilibrium.delta2)
        assert result.equilibrium.delta2 == pytest.approx(math.sqrt(1.25) * q_inv(0.8))

    def test_one_generator_stationarity(self):
        problem = TwoBusProblem(
            alpha1=0.6,
            alpha2=0.7,
            beta1=1.0,
            beta2=1.0,
            cov=[[0.5, 0.1], [0.1, 0.8]],
            gamma=[1.0, 0.0, 0.4],
            source_bus=0,
            sink_bus=1,
            congested_branch=0,
            pattern=ReductionPattern.ONE_GENERATOR,
            generators=[2],
            delta_map=[[1.0, 1.0]],
        )
        delta, eq = solve_reduced(problem, 3)
        assert delta[2] == pytest.approx(eq.delta1 + eq.delta2)
        assert eq.delta1 == pytest.approx(0.4 * delta[2])
        best = two_bus_expected_cost(problem, eq.delta1, eq.delta2)
        for step in (-0.05, 0.05):
            dk = delta[2] + step
            assert two_bus_expected_cost(problem, 0.4 * dk, 0.6 * dk) > best


class TestNetworkRld:
    """End-to-end day-ahead schedules"""

    def test_uncongested_case9(self, case9):
        net = case9.network
        fs = build_flow_structure(net)
        result = network_rld(net, fs, case9.costs, case9.forecast)
        expected = q_inv(1.0 / 1.5)
        assert result.path == "single_bus"
        assert result.delta[:3] == pytest.approx([expected] * 3)
        assert result.delta[3:] == pytest.approx(np.zeros(6))
        assert result.price_of_uncertainty == pytest.approx(4.5 * phi(expected))
        assert result.price_of_uncertainty == pytest.approx(1.637, abs=1e-3)
        assert result.g_star[:3] == pytest.approx(result.nominal.generation[:3] + 20.0 * expected)

    def test_deterministic_limit(self, case9_congested):
        net = case9_congested.network
        fs = build_flow_structure(net)
        forecast = case9_congested.forecast.with_sigma(0.0)
        result = network_rld(net, fs, case9_congested.costs, forecast)
        assert result.g_star == pytest.approx(np.maximum(result.nominal.generation, 0.0))

    def test_price_scale_invariance(self, ring_case):
        net, fs, costs, forecast = _ring(ring_case, sigma=5.0)
        scaled = CostModel(alpha=3.0 * costs.alpha, beta=3.0 * costs.beta)
        base = network_rld(net, fs, costs, forecast)
        tripled = network_rld(net, fs, scaled, forecast)
        assert tripled.delta == pytest.approx(base.delta, abs=1e-6)
        assert tripled.price_of_uncertainty == pytest.approx(3.0 * base.price_of_uncertainty, rel=1e-6)

    def test_schedule_linear_in_sigma(self, ring_case):
        net, fs, costs, _ = _ring(ring_case)
        small = network_rld(net, fs, costs, ring_case.forecast.with_sigma(1.0))
        large = network_rld(net, fs, costs, ring_case.forecast.with_sigma(2.0))
        assert large.delta == pytest.approx(small.delta, abs=1e-9)
        assert large.g_star - small.nominal.generation == pytest.approx(
            2.0 * (small.g_star - small.nominal.generation), abs=1e-6
        )

    def test_congested_case9_takes_two_bus_path(self, case9_congested):
        net = case9_congested.network
        fs = build_flow_structure(net)
        result = network_rld(net, fs, case9_congested.costs, case9_congested.forecast)
        assert result.path == "two_bus"
        assert result.pattern == ReductionPattern.TWO_GENERATORS
        assert (result.reduction.source_bus, result.reduction.sink_bus) == (5, 4)
        assert result.reduction.gamma[2] == pytest.approx(1.0)
        assert 0.0 < result.reduction.gamma[0] < 1.0
        assert result.equilibrium.residual <= 1e-7
        assert result.price_of_uncertainty > 0

    def test_dual_form_costs_less_than_theorem_form(self, ring_case):
        net, fs, costs, forecast = _ring(ring_case, sigma=10.0)
        batch = sample_scenarios(forecast, seed=3, count=20_000)
        dual = network_rld(net, fs, costs, forecast, alpha2_form="dual")
        theorem = network_rld(net, fs, costs, forecast, alpha2_form="theorem")
        assert not np.allclose(dual.g_star, theorem.g_star)
        dual_cost = sample_average_cost(net, fs, costs, forecast, batch, dual.g_star)
        theorem_cost = sample_average_cost(net, fs, costs, forecast, batch, theorem.g_star)
        assert dual_cost <= theorem_cost

    def test_multiple_congestion_unsupported(self):
        net = Network(n_buses=3, branches=[line(0, 1, cap=10.0), line(1, 2, cap=10.0), line(2, 0)])
        fs = build_flow_structure(net)
        costs = CostModel(alpha=[0.5, 0.9, 0.6], beta=[1.0, 1.0, 1.0])
        forecast = Forecast(d_hat=[0.0, 100.0, 0.0], sigma_e=1.0)
        assert len(solve_nda_opf(net, fs, costs, forecast.d_hat).congested) == 2
        with pytest.raises(Unsupported):
            network_rld(net, fs, costs, forecast)

    def test_congestion_ignorant_uses_copper_plate(self, case9_congested):
        net = case9_congested.network
        fs = build_flow_structure(net)
        result = congestion_ignorant_rld(net, fs, case9_congested.costs, case9_congested.forecast)
        assert result.path == "single_bus"
        assert result.delta[0] == pytest.approx(result.delta[2])
        # mean of (1.2, 0.8) against beta 1.5
        assert result.delta[0] * 2 == pytest.approx(3.0 * q_inv(1.0 / 1.5))


class TestAggregate:
    """Copper-plate threshold"""

    def test_correlated_errors_widen_the_threshold(self):
        corr = np.array([[1.0, 0.5], [0.5, 1.0]])
        agg = aggregate_single_bus(0.3, 1.0, corr, [0])
        assert agg.std == pytest.approx(math.sqrt(3.0))
        assert agg.delta == pytest.approx(math.sqrt(3.0) * q_inv(0.3))
        assert agg.price == pytest.approx(math.sqrt(3.0) * price_of_uncertainty_single(0.3, 1.0))

    def test_no_generators(self):
        agg = aggregate_single_bus(0.3, 1.0, np.eye(2), [])
        assert agg.delta == 0.0 and agg.price == 0.0


def _random_ring(rng, n=6):
    branches = [
        line(i, (i + 1) % n, b=float(rng.uniform(5.0, 20.0)), cap=15.0 if i == 0 else math.inf)
        for i in range(n)
    ]
    alpha = np.concatenate([[0.3], rng.uniform(0.6, 1.0, n - 1)])
    d_hat = np.concatenate([[0.0], rng.uniform(20.0, 60.0, n - 1)])
    return Network(n_buses=n, branches=branches), CostModel(alpha=alpha, beta=np.ones(n)), d_hat


class TestSingleCycleDuals:
    """Random six-bus rings congested on one line"""

    def test_duals_interpolate_between_line_ends(self):
        rng = np.random.default_rng(2024)
        used = 0
        for _ in range(200):
            net, costs, d_hat = _random_ring(rng)
            fs = build_flow_structure(net)
            nominal = solve_nda_opf(net, fs, costs, d_hat)
            if len(nominal.congested) != 1:
                continue
            used += 1
            congested = nominal.congested[0]
            br = net.branches[congested.branch]
            src, sink = (br.from_bus, br.to_bus) if congested.direction == 1 else (br.to_bus, br.from_bus)
            gamma = gamma_weights(net, fs, congested)
            assert np.all((gamma >= 0.0) & (gamma <= 1.0))
            lam = nominal.bus_duals
            assert lam[sink] >= lam[src]
            assert lam == pytest.approx(gamma * lam[src] + (1.0 - gamma) * lam[sink], abs=1e-6)
        assert used >= 100
