"""
Tests for scenario sampling, policy evaluation, price fits and the grid search
"""
import numpy as np
import pytest

from app.core.errors import DimensionMismatch, DomainError, EvaluationAborted
from app.models.dispatch import Forecast, ReductionPattern, TwoBusProblem
from app.services.evaluation import (
    _check_infeasible,
    brute_force_two_stage,
    build_policies,
    evaluate,
    fit_price,
    price_sweep,
    sample_average_cost,
    sample_scenarios,
    scenario_costs,
    three_sigma_policy,
)
from app.services.gaussian import phi, q_inv
from app.services.network import build_flow_structure
from app.services.rld import network_rld, solve_two_bus_equilibrium
from tests.conftest import make_two_bus, surplus_source_ring


def _unpack(case, sigma=None):
    forecast = case.forecast if sigma is None else case.forecast.with_sigma(sigma)
    return case.network, build_flow_structure(case.network), case.costs, forecast


class TestSampling:
    """Per-scenario random streams"""

    def test_same_seed_same_scenarios(self, case9):
        a = sample_scenarios(case9.forecast, seed=5, count=50)
        b = sample_scenarios(case9.forecast, seed=5, count=50)
        assert np.array_equal(a.z_samples, b.z_samples)

    def test_prefix_independent_of_count(self, case9):
        short = sample_scenarios(case9.forecast, seed=5, count=10)
        long = sample_scenarios(case9.forecast, seed=5, count=40)
        assert np.array_equal(short.z_samples, long.z_samples[:10])

    def test_adjacent_scenarios_share_no_draws(self):
        forecast = Forecast(d_hat=np.zeros(9), sigma_e=1.0)
        z = sample_scenarios(forecast, seed=7, count=50).z_samples
        for first, second in zip(z, z[1:]):
            assert np.intersect1d(first, second).size == 0

    def test_draws_look_independent(self):
        forecast = Forecast(d_hat=np.zeros(9), sigma_e=1.0)
        z = sample_scenarios(forecast, seed=7, count=4000).z_samples
        # the tail of one scenario against the head of the next
        shifted = np.corrcoef(z[:-1, 4:].ravel(), z[1:, :5].ravel())[0, 1]
        assert abs(shifted) < 0.03
        assert np.cov(z.T) == pytest.approx(np.eye(9), abs=0.08)

    def test_different_seeds_differ(self, case9):
        a = sample_scenarios(case9.forecast, seed=1, count=10)
        b = sample_scenarios(case9.forecast, seed=2, count=10)
        assert not np.allclose(a.z_samples, b.z_samples)

    def test_sample_covariance(self):
        corr = np.array([[1.0, 0.6], [0.6, 1.0]])
        batch = sample_scenarios(Forecast(d_hat=[1.0, 2.0], sigma_e=1.0, corr=corr), seed=9, count=20_000)
        assert np.cov(batch.z_samples.T) == pytest.approx(corr, abs=0.03)

    def test_demands_scale_with_sigma(self, two_bus_case):
        batch = sample_scenarios(two_bus_case.forecast, seed=1, count=4)
        demands = batch.demands(two_bus_case.forecast.with_sigma(3.0))
        assert demands == pytest.approx(two_bus_case.forecast.d_hat + 3.0 * batch.z_samples)

    def test_needs_a_scenario(self, case9):
        with pytest.raises(DomainError):
            sample_scenarios(case9.forecast, seed=1, count=0)


class TestPolicies:
    """Schedules under evaluation"""

    def test_three_sigma_reserve(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        g = three_sigma_policy(net, fs, costs, forecast)
        # 3 sigma on each of nine buses, shared by three generators
        assert g[:3] == pytest.approx(np.array([86.6, 134.35, 94.05]) + 180.0, abs=0.1)
        assert g[3:] == pytest.approx(np.zeros(6), abs=1e-6)

    def test_unknown_policy(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        with pytest.raises(DomainError):
            build_policies(["rld", "bogus"], net, fs, costs, forecast)

    def test_oracle_is_not_a_schedule(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        policies = build_policies(["oracle", "rld", "three_sigma"], net, fs, costs, forecast)
        assert [p.name for p in policies] == ["rld", "three_sigma"]

    def test_lower_bound_runs_on_relaxed_network(self, case9_congested):
        net, fs, costs, forecast = _unpack(case9_congested)
        (policy,) = build_policies(["rld_lower_bound"], net, fs, costs, forecast)
        bounded = [br.bounded for br in policy.evaluation_network.branches]
        assert bounded == [i == 2 for i in range(9)]


class TestEvaluate:
    """Policy statistics against the paired oracle"""

    def test_cost_ordering(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        batch = sample_scenarios(forecast, seed=11, count=2000)
        policies = build_policies(["rld", "three_sigma"], net, fs, costs, forecast)
        report = evaluate(net, fs, costs, forecast, policies, batch)
        oracle = report.row(20.0, "oracle").mean_cost
        rld = report.row(20.0, "rld").mean_cost
        three_sigma = report.row(20.0, "three_sigma").mean_cost
        assert oracle <= rld <= three_sigma
        assert report.row(20.0, "rld").integration_cost >= 0.0
        assert report.row(20.0, "rld").scenarios == 2000

    def test_deterministic_limit(self, case9):
        net, fs, costs, forecast = _unpack(case9, sigma=0.0)
        batch = sample_scenarios(forecast, seed=11, count=20)
        policies = build_policies(["rld", "three_sigma"], net, fs, costs, forecast)
        report = evaluate(net, fs, costs, forecast, policies, batch)
        nominal = network_rld(net, fs, costs, forecast).nominal.cost
        for name in ("rld", "three_sigma"):
            row = report.row(0.0, name)
            assert row.mean_cost == pytest.approx(nominal, abs=1e-6)
            assert row.std_error == pytest.approx(0.0, abs=1e-9)
        assert report.row(0.0, "oracle").mean_cost == pytest.approx(314.685)

    def test_row_columns_add_up(self, two_bus_case):
        net, fs, costs, forecast = _unpack(two_bus_case, sigma=5.0)
        batch = sample_scenarios(forecast, seed=2, count=500)
        report = evaluate(net, fs, costs, forecast, build_policies(["rld"], net, fs, costs, forecast), batch)
        row = report.row(5.0, "rld")
        assert row.mean_cost == pytest.approx(row.stage1_cost + row.stage2_cost)
        assert row.integration_cost == pytest.approx(row.mean_cost - report.row(5.0, "oracle").mean_cost)

    def test_worker_count_does_not_change_results(self, case9_congested, monkeypatch):
        from app.core.config import settings

        monkeypatch.setattr(settings, "eval_chunk_size", 64)
        net, fs, costs, forecast = _unpack(case9_congested)
        demands = sample_scenarios(forecast, seed=4, count=300).demands(forecast)
        serial = scenario_costs(net, fs, costs.beta, demands, workers=1)
        threaded = scenario_costs(net, fs, costs.beta, demands, workers=4)
        assert np.array_equal(serial, threaded)

    def test_scenario_dimension_checked(self, case9, two_bus_case):
        net, fs, costs, forecast = _unpack(case9)
        batch = sample_scenarios(two_bus_case.forecast, seed=1, count=5)
        with pytest.raises(DimensionMismatch):
            evaluate(net, fs, costs, forecast, [], batch)

    def test_infeasible_fraction_aborts(self):
        bad = np.zeros(100, dtype=bool)
        bad[:5] = True
        with pytest.raises(EvaluationAborted):
            _check_infeasible("rld", 1.0, bad)
        _check_infeasible("rld", 1.0, np.zeros(100, dtype=bool))


class TestPriceFit:
    """Integration cost against sigma"""

    def test_exact_line(self):
        fit = fit_price("rld", [1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0], analytic_price=2.0)
        assert fit.slope == pytest.approx(2.0)
        assert fit.half_width == pytest.approx(0.0, abs=1e-12)
        assert fit.free_slope == pytest.approx(2.0)
        assert fit.intercept == pytest.approx(0.0, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)

    def test_noisy_line_interval(self):
        fit = fit_price("rld", [1.0, 2.0, 3.0], [1.1, 1.9, 3.05])
        assert fit.slope == pytest.approx((1.1 + 3.8 + 9.15) / 14.0)
        assert fit.half_width > 0

    def test_needs_two_points(self):
        with pytest.raises(DomainError):
            fit_price("rld", [1.0], [1.0])

    def test_single_bus_sweep_recovers_price(self, single_bus_case):
        net, fs, costs, forecast = _unpack(single_bus_case)
        report = price_sweep(net, fs, costs, forecast, [2.0, 6.0, 10.0, 14.0], seed=3, count=20_000,
                             policy_names=("rld", "oracle"))
        fit = report.fit("rld")
        expected = 2.0 * phi(q_inv(0.5))
        assert fit.analytic_price == pytest.approx(expected)
        assert fit.slope == pytest.approx(expected, rel=0.03)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)
        assert report.fit("oracle").slope == pytest.approx(0.0, abs=1e-12)
        assert len(report.rows) == 8

    @pytest.mark.parametrize("grid", [[1.0, 2.0], [1.0, 3.0, 2.0]])
    def test_sweep_grid_checked(self, single_bus_case, grid):
        net, fs, costs, forecast = _unpack(single_bus_case)
        with pytest.raises(DomainError):
            price_sweep(net, fs, costs, forecast, grid, seed=1, count=10)

    @pytest.mark.slow
    def test_case9_price(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        report = price_sweep(net, fs, costs, forecast, [5.0, 15.0, 25.0, 35.0], seed=1, count=20_000)
        fit = report.fit("rld")
        assert fit.slope == pytest.approx(1.637, rel=0.03)
        assert report.fit("three_sigma").slope > fit.slope


class TestBruteForce:
    """Grid search of the sample-average two-stage cost"""

    def test_zero_sigma_picks_zero_perturbation(self, two_bus_case):
        net, fs, costs, forecast = _unpack(two_bus_case, sigma=0.0)
        batch = sample_scenarios(forecast, seed=1, count=10)
        result = brute_force_two_stage(net, fs, costs, forecast, batch, final_step=0.1)
        assert result.buses == [0, 1]
        assert result.delta == pytest.approx([0.0, 0.0])

    def test_rejects_large_networks(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        batch = sample_scenarios(forecast, seed=1, count=10)
        with pytest.raises(DomainError):
            brute_force_two_stage(net, fs, costs, forecast, batch)

    def test_two_bus_dispatch_is_near_optimal(self, two_bus_case):
        net, fs, costs, forecast = _unpack(two_bus_case, sigma=5.0)
        batch = sample_scenarios(forecast, seed=21, count=2000)
        result = brute_force_two_stage(net, fs, costs, forecast, batch, final_step=0.05)
        rld = network_rld(net, fs, costs, forecast)
        rld_cost = sample_average_cost(net, fs, costs, forecast, batch, rld.g_star)
        assert result.cost <= rld_cost + 1e-9
        assert rld_cost - result.cost <= 0.02 * forecast.sigma_e
        assert result.delta == pytest.approx(rld.delta.tolist(), abs=0.3)
        assert not result.grid_too_coarse

    @pytest.mark.slow
    def test_two_bus_certification(self, two_bus_case):
        net, fs, costs, forecast = _unpack(two_bus_case, sigma=5.0)
        batch = sample_scenarios(forecast, seed=21, count=100_000)
        result = brute_force_two_stage(net, fs, costs, forecast, batch)
        rld = network_rld(net, fs, costs, forecast)
        assert result.delta == pytest.approx(rld.delta.tolist(), abs=0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("rho", [-0.5, 0.0, 0.5])
    def test_symmetric_two_bus_certification(self, rho):
        # bus 1 a hair dearer so the nominal export from bus 0 is the unique optimum
        net, fs, costs, forecast = make_two_bus(alpha=(0.5, 0.5001), rho=rho)
        problem = TwoBusProblem(
            alpha1=0.5, alpha2=0.5001, beta1=1.0, beta2=1.0, cov=[[1.0, rho], [rho, 1.0]],
            gamma=[1.0, 0.0], source_bus=0, sink_bus=1, congested_branch=0,
        )
        eq = solve_two_bus_equilibrium(problem)
        assert eq.residual <= 1e-7
        batch = sample_scenarios(forecast, seed=17, count=1_000_000)
        result = brute_force_two_stage(net, fs, costs, forecast, batch, steps=(0.25, 0.05), final_step=0.01)
        assert result.buses == [0, 1]
        assert result.delta == pytest.approx([eq.delta1, eq.delta2], abs=result.final_step + 1e-9)
        assert not result.grid_too_coarse

    @pytest.mark.slow
    def test_ring_argmin_matches_dual_effective_prices(self, ring_case):
        net, fs, costs, forecast = _unpack(ring_case, sigma=5.0)
        batch = sample_scenarios(forecast, seed=5, count=200_000)
        result = brute_force_two_stage(net, fs, costs, forecast, batch)
        assert result.buses == [0, 2]
        dual = network_rld(net, fs, costs, forecast, alpha2_form="dual").delta[result.buses]
        theorem = network_rld(net, fs, costs, forecast, alpha2_form="theorem").delta[result.buses]
        assert result.delta == pytest.approx(dual.tolist(), abs=0.05)
        assert np.abs(theorem - np.array(result.delta)).max() > 0.2
        assert not result.grid_too_coarse

    @pytest.mark.slow
    def test_surplus_source_ring_certification(self):
        net, fs, costs, forecast = surplus_source_ring()
        rld = network_rld(net, fs, costs, forecast)
        assert rld.pattern == ReductionPattern.SURPLUS_SOURCE_SIDE
        batch = sample_scenarios(forecast, seed=8, count=100_000)
        result = brute_force_two_stage(net, fs, costs, forecast, batch, span=3.0)
        assert result.buses == [2]
        assert result.delta[0] == pytest.approx(rld.delta[2], abs=0.05)
        # moving bus 2 one for one with the sink side would land far from the optimum
        one_for_one = np.sqrt(rld.reduction.cov[1, 1]) * q_inv(costs.alpha[2] / costs.beta[2])
        assert abs(result.delta[0] - one_for_one) > 0.5


@pytest.fixture(scope="module")
def congested_sweep(case9_congested):
    net, fs, costs, forecast = _unpack(case9_congested)
    return price_sweep(
        net, fs, costs, forecast, [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0], seed=2, count=100_000,
        policy_names=("rld", "three_sigma", "rld_congestion_ignorant", "rld_lower_bound", "oracle"),
    )


def _paired_bound(*rows):
    return 3.0 * float(np.sqrt(sum(r.integration_std_error ** 2 for r in rows)))


@pytest.mark.slow
class TestCongestedCase9:
    """Policy ordering on the derated 9-bus network"""

    def test_rld_between_oracle_and_three_sigma(self, congested_sweep):
        for sigma in congested_sweep.sigma_grid:
            rld = congested_sweep.row(sigma, "rld")
            three_sigma = congested_sweep.row(sigma, "three_sigma")
            assert rld.integration_cost >= -_paired_bound(rld)
            assert rld.integration_cost <= three_sigma.integration_cost + _paired_bound(rld, three_sigma)

    def test_integration_cost_linear_in_sigma(self, congested_sweep):
        assert congested_sweep.fit("rld").r_squared >= 0.99

    def test_close_to_one_line_lower_bound(self, congested_sweep):
        for sigma in congested_sweep.sigma_grid:
            rld = congested_sweep.row(sigma, "rld").mean_cost
            bound = congested_sweep.row(sigma, "rld_lower_bound").mean_cost
            assert abs(rld - bound) <= 0.03 * bound

    def test_congestion_aware_beats_ignorant(self, congested_sweep):
        for sigma in congested_sweep.sigma_grid:
            rld = congested_sweep.row(sigma, "rld")
            ignorant = congested_sweep.row(sigma, "rld_congestion_ignorant")
            assert rld.integration_cost <= ignorant.integration_cost + _paired_bound(rld, ignorant)


class TestOracle:
    """Clairvoyant cost on the uncongested network"""

    @pytest.mark.slow
    def test_flat_in_sigma(self, case9):
        net, fs, costs, forecast = _unpack(case9)
        batch = sample_scenarios(forecast, seed=6, count=50_000)
        for sigma in [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]:
            report = evaluate(net, fs, costs, forecast.with_sigma(sigma), [], batch)
            assert report.row(sigma, "oracle").mean_cost == pytest.approx(0.999 * 315.0, rel=0.005)
