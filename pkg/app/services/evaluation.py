"""
Monte Carlo evaluation of day-ahead policies with common random numbers
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app.core.config import settings
from app.core.errors import CholeskyFailure, DimensionMismatch, DomainError, EvaluationAborted
from app.models.dispatch import CostModel, Forecast
from app.models.evaluation import (
    BruteForceResult,
    EvaluationReport,
    EvaluationRow,
    Policy,
    PriceFit,
    ScenarioBatch,
)
from app.models.network import FlowStructure, Network
from app.services.dcopf import OpfBatchSolver, solve_nda_opf
from app.services.network import build_flow_structure, relax_capacities
from app.services.rld import congestion_ignorant_rld, network_rld

logger = logging.getLogger(__name__)

_JITTERS = (0.0, 1e-14, 1e-12, 1e-10)


def _cholesky(corr: np.ndarray) -> np.ndarray:
    eye = np.eye(corr.shape[0])
    for jitter in _JITTERS:
        if jitter > settings.cholesky_max_jitter:
            break
        try:
            return np.linalg.cholesky(corr + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise CholeskyFailure("error correlation matrix is not positive semidefinite")


def sample_scenarios(forecast: Forecast, seed: int, count: int) -> ScenarioBatch:
    """
    Standardized errors z = L eps with L L' = corr.

    Scenario i draws from its own Philox stream keyed by (seed, i), so any
    subset of scenarios can be regenerated independently of the others.
    """
    if count < 1:
        raise DomainError("scenario count must be at least 1")
    chol = _cholesky(forecast.corr)
    n = forecast.n
    eps = np.empty((count, n))
    for idx in range(count):
        key = np.array([seed, idx], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        eps[idx] = rng.standard_normal(n)
    return ScenarioBatch(seed=seed, count=count, z_samples=eps @ chol.T)


def _chunks(count: int) -> List[slice]:
    size = max(1, settings.eval_chunk_size)
    return [slice(start, min(start + size, count)) for start in range(0, count, size)]


def scenario_costs(
    net: Network,
    fs: FlowStructure,
    prices,
    demands: np.ndarray,
    workers: Optional[int] = None,
) -> np.ndarray:
    """
    J(prices, x) per demand row; fixed chunks each with their own LP cache,
    reassembled in scenario order.
    """
    chunks = _chunks(demands.shape[0])

    def run(part: slice) -> np.ndarray:
        return OpfBatchSolver(net, fs, prices).costs(demands[part])

    workers = workers or settings.eval_workers
    if workers <= 1 or len(chunks) == 1:
        parts = [run(part) for part in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    return np.concatenate(parts) if parts else np.empty(0)


def three_sigma_policy(net: Network, fs: FlowStructure, costs: CostModel, forecast: Forecast) -> np.ndarray:
    """Nominal schedule plus three error standard deviations per bus, shared equally by the generating buses"""
    nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
    g = nominal.generation.copy()
    generators = nominal.generating()
    if generators.size:
        reserve = 3.0 * forecast.sigma_e * float(np.sum(np.sqrt(np.diag(forecast.corr))))
        g[generators] += reserve / generators.size
    return np.maximum(g, 0.0)


def _rld_schedule(alpha2_form: Optional[str]):
    def schedule(net, fs, costs, forecast):
        return network_rld(net, fs, costs, forecast, alpha2_form).g_star
    return schedule


def _ignorant_schedule(net, fs, costs, forecast):
    return congestion_ignorant_rld(net, fs, costs, forecast).g_star


def lower_bound_network(net: Network, fs: FlowStructure, costs: CostModel, forecast: Forecast) -> Network:
    """The network with only its nominally congested lines kept finite"""
    nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
    return relax_capacities(net, [line.branch for line in nominal.congested])


def build_policies(
    names: Iterable[str],
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
    alpha2_form: Optional[str] = None,
) -> List[Policy]:
    """Policy objects for the requested names; `oracle` is reported by evaluate itself"""
    policies = []
    for name in names:
        if name == "rld":
            policies.append(Policy(name=name, schedule=_rld_schedule(alpha2_form)))
        elif name == "three_sigma":
            policies.append(Policy(name=name, schedule=three_sigma_policy))
        elif name == "rld_congestion_ignorant":
            policies.append(Policy(name=name, schedule=_ignorant_schedule))
        elif name == "rld_lower_bound":
            relaxed = lower_bound_network(net, fs, costs, forecast)
            policies.append(
                Policy(name=name, schedule=_rld_schedule(alpha2_form), evaluation_network=relaxed)
            )
        elif name != "oracle":
            raise DomainError(f"unknown policy '{name}'")
    return policies


def _mean_and_error(values: np.ndarray) -> Tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    err = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(np.mean(values)), err


def _check_infeasible(policy: str, sigma: float, bad: np.ndarray) -> None:
    if not bad.any():
        return
    fraction = bad.mean()
    first = int(np.flatnonzero(bad)[0])
    if fraction > settings.max_infeasible_fraction:
        raise EvaluationAborted(
            f"{policy} at sigma {sigma:g}: {bad.sum()} infeasible scenarios (first #{first})"
        )
    logger.warning("%s at sigma %g: excluding %d infeasible scenarios (first #%d)", policy, sigma, bad.sum(), first)


def evaluate(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
    policies: Sequence[Policy],
    batch: ScenarioBatch,
    include_oracle: bool = True,
    workers: Optional[int] = None,
) -> EvaluationReport:
    """
    Cost statistics of each policy at forecast.sigma_e.

    Every policy and its paired oracle see the same realized demands.

    Raises:
        EvaluationAborted: if too many scenarios are infeasible
    """
    if not policies and not include_oracle:
        raise DomainError("nothing to evaluate")
    if batch.z_samples.shape[1] != net.n:
        raise DimensionMismatch(f"scenarios have {batch.z_samples.shape[1]} buses, network has {net.n}")
    sigma = forecast.sigma_e
    demands = batch.demands(forecast)
    oracles: Dict[int, np.ndarray] = {}
    structures: Dict[int, FlowStructure] = {id(net): fs}

    def structure_for(target: Network) -> FlowStructure:
        if id(target) not in structures:
            structures[id(target)] = build_flow_structure(target)
        return structures[id(target)]

    def oracle_for(target: Network) -> np.ndarray:
        key = id(target)
        if key not in oracles:
            target_fs = structure_for(target)
            oracles[key] = scenario_costs(target, target_fs, costs.alpha, demands, workers)
        return oracles[key]

    rows = []
    if include_oracle:
        oracle = oracle_for(net)
        bad = np.isnan(oracle)
        _check_infeasible("oracle", sigma, bad)
        mean, err = _mean_and_error(oracle[~bad])
        rows.append(EvaluationRow(
            sigma=sigma, policy="oracle", mean_cost=mean, std_error=err, stage1_cost=0.0,
            stage2_cost=mean, integration_cost=0.0, integration_std_error=0.0,
            scenarios=int((~bad).sum()), infeasible=int(bad.sum()),
        ))

    for policy in policies:
        target = policy.evaluation_network or net
        target_fs = structure_for(target)
        g = np.asarray(policy.schedule(target, target_fs, costs, forecast), dtype=float)
        if g.shape != (net.n,) or not np.all(np.isfinite(g)) or np.any(g < 0):
            raise DomainError(f"policy {policy.name} produced an invalid schedule")
        stage1 = float(costs.alpha @ g)
        recourse = scenario_costs(target, target_fs, costs.beta, demands - g[None, :], workers)
        oracle = oracle_for(target)
        bad = np.isnan(recourse) | np.isnan(oracle)
        _check_infeasible(policy.name, sigma, bad)
        total = stage1 + recourse[~bad]
        mean, err = _mean_and_error(total)
        gap, gap_err = _mean_and_error(total - oracle[~bad])
        rows.append(EvaluationRow(
            sigma=sigma, policy=policy.name, mean_cost=mean, std_error=err, stage1_cost=stage1,
            stage2_cost=float(np.mean(recourse[~bad])), integration_cost=gap,
            integration_std_error=gap_err, scenarios=int((~bad).sum()), infeasible=int(bad.sum()),
        ))
        logger.debug("sigma %g %s: mean cost %.6g", sigma, policy.name, mean)

    logger.info("evaluated %d policies at sigma %g over %d scenarios", len(rows), sigma, batch.count)
    return EvaluationReport(seed=batch.seed, count=batch.count, sigma_grid=[sigma], rows=rows)


def fit_price(policy: str, sigmas: Sequence[float], integration: Sequence[float],
              analytic_price: Optional[float] = None) -> PriceFit:
    """Integration cost against sigma: slope through the origin with a 95% t interval, and a free line"""
    x = np.asarray(sigmas, dtype=float)
    y = np.asarray(integration, dtype=float)
    if x.size < 2:
        raise DomainError("a price fit needs at least two sigma values")
    sxx = float(x @ x)
    slope = float(x @ y) / sxx if sxx > 0 else 0.0
    resid = y - slope * x
    se = np.sqrt(float(resid @ resid) / (x.size - 1) / sxx) if sxx > 0 else 0.0
    half_width = float(stats.t.ppf(0.975, x.size - 1) * se)

    free_slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (free_slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return PriceFit(
        policy=policy, slope=slope, half_width=half_width, free_slope=float(free_slope),
        intercept=float(intercept), r_squared=r_squared, analytic_price=analytic_price,
    )


def _analytic_prices(names: Sequence[str], net, fs, costs, forecast, alpha2_form) -> Dict[str, Optional[float]]:
    prices: Dict[str, Optional[float]] = {"oracle": 0.0}
    if "rld" in names:
        prices["rld"] = network_rld(net, fs, costs, forecast, alpha2_form).price_of_uncertainty
    if "rld_lower_bound" in names:
        relaxed = lower_bound_network(net, fs, costs, forecast)
        prices["rld_lower_bound"] = network_rld(
            relaxed, build_flow_structure(relaxed), costs, forecast, alpha2_form
        ).price_of_uncertainty
    return prices


def price_sweep(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast_base: Forecast,
    sigma_grid: Sequence[float],
    seed: int,
    count: int,
    policy_names: Sequence[str] = ("rld", "three_sigma", "oracle"),
    alpha2_form: Optional[str] = None,
    workers: Optional[int] = None,
) -> EvaluationReport:
    """
    evaluate at every sigma of the grid on one scenario batch, then fit the
    integration cost of each policy against sigma.
    """
    sigma_grid = [float(s) for s in sigma_grid]
    if len(sigma_grid) < 3:
        raise DomainError("a price sweep needs at least three sigma values")
    if any(b <= a for a, b in zip(sigma_grid, sigma_grid[1:])):
        raise DomainError("sigma grid must be ascending")

    batch = sample_scenarios(forecast_base, seed, count)
    policies = build_policies(policy_names, net, fs, costs, forecast_base, alpha2_form)
    include_oracle = "oracle" in policy_names
    rows: List[EvaluationRow] = []
    for sigma in sigma_grid:
        report = evaluate(net, fs, costs, forecast_base.with_sigma(sigma), policies, batch,
                          include_oracle=include_oracle, workers=workers)
        rows.extend(report.rows)

    analytic = _analytic_prices(policy_names, net, fs, costs, forecast_base, alpha2_form)
    fits = []
    for name in policy_names:
        own = [r for r in rows if r.policy == name]
        fits.append(fit_price(name, [r.sigma for r in own], [r.integration_cost for r in own], analytic.get(name)))
    return EvaluationReport(seed=seed, count=count, sigma_grid=sigma_grid, rows=rows, fits=fits)


class _SampleAverage:
    """alpha'g + mean J(beta, d - g) on one fixed batch, one LP cache for every schedule"""

    def __init__(self, net: Network, fs: FlowStructure, costs: CostModel, forecast: Forecast, batch: ScenarioBatch):
        self.costs = costs
        self.demands = batch.demands(forecast)
        self.solver = OpfBatchSolver(net, fs, costs.beta)

    def __call__(self, g: np.ndarray) -> float:
        recourse = self.solver.costs(self.demands - g[None, :])
        return float(self.costs.alpha @ g + np.nanmean(recourse))


def sample_average_cost(net: Network, fs: FlowStructure, costs: CostModel, forecast: Forecast,
                        batch: ScenarioBatch, g) -> float:
    """Sample-average two-stage cost of day-ahead schedule g"""
    return _SampleAverage(net, fs, costs, forecast, batch)(np.asarray(g, dtype=float))


def brute_force_two_stage(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
    batch: ScenarioBatch,
    buses: Optional[Sequence[int]] = None,
    span: float = 2.0,
    steps: Sequence[float] = (0.25, 0.1),
    final_step: Optional[float] = None,
) -> BruteForceResult:
    """
    Grid search of the perturbation of the generating buses minimizing the
    sample-average two-stage cost, refined coarse to fine around the best point.

    Ties go to the smallest perturbation.
    """
    if net.n > 3:
        raise DomainError("grid search is limited to networks of at most three buses")
    final_step = final_step or settings.brute_force_final_step
    nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
    buses = [int(b) for b in (nominal.generating() if buses is None else buses)]
    objective = _SampleAverage(net, fs, costs, forecast, batch)

    def schedule(delta: np.ndarray) -> np.ndarray:
        g = nominal.generation.copy()
        g[buses] += forecast.sigma_e * delta
        return np.maximum(g, 0.0)

    if not buses:
        cost = objective(schedule(np.zeros(0)))
        return BruteForceResult(delta=[], buses=[], cost=cost, final_step=final_step, evaluations=1)

    levels = [s for s in steps if s > final_step] + [final_step]
    center = np.zeros(len(buses))
    half = span
    evaluations = 0
    too_coarse = False
    best_cost = np.inf
    for level, step in enumerate(levels):
        axis = np.arange(-half, half + step / 2, step)
        best_key = None
        for offset in itertools.product(axis, repeat=len(buses)):
            delta = center + np.array(offset)
            cost = objective(schedule(delta))
            evaluations += 1
            key = (round(cost, 12), float(np.abs(delta).sum()))
            if best_key is None or key < best_key:
                best_key, best_delta, best_cost = key, delta, cost
        if level == 0:
            too_coarse = bool(np.any(np.isclose(np.abs(best_delta), half)))
        center = best_delta
        half = 2.0 * step

    if too_coarse:
        logger.warning("grid search optimum lies on the outer grid boundary")
    return BruteForceResult(
        delta=[float(d) for d in center], buses=buses, cost=float(best_cost), final_step=final_step,
        grid_too_coarse=too_coarse, evaluations=evaluations,
    )
