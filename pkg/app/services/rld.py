"""
Risk-limiting dispatch: single-bus thresholds, the congested two-bus
equilibrium with backflow, reduction of a singly congested network to two
buses, and the network dispatch procedure built on them
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from app.core.config import settings
from app.core.errors import (
    DegenerateCovariance,
    DimensionMismatch,
    DomainError,
    MultipleCongestion,
    NoConvergence,
    SingularSystem,
    Unsupported,
    UnsupportedPattern,
)
from app.models.dispatch import (
    AggregateDispatch,
    CongestedLine,
    CostModel,
    EquilibriumSolution,
    Forecast,
    OpfResult,
    ReductionPattern,
    Region,
    RegionClassification,
    RldDispatch,
    TwoBusProblem,
)
from app.models.network import FlowStructure, Network
from app.services.dcopf import solve_nda_opf
from app.services.gaussian import (
    bivariate_orthant,
    orthant_gradient,
    partial_expectation,
    phi,
    q_fn,
    q_inv,
    tail_expectation,
)
from app.services.network import build_flow_structure

logger = logging.getLogger(__name__)

_GAMMA_TOL = 1e-9


def _check_prices(alpha: float, beta: float) -> None:
    if not alpha > 0:
        raise DomainError(f"day-ahead price must be positive, got {alpha:g}")
    if not alpha < beta:
        raise DomainError(f"day-ahead price {alpha:g} must stay below the real-time price {beta:g}")


def _clamped_quantile(p: float) -> Tuple[float, bool]:
    """q_inv(p) limited to [-delta_clamp, delta_clamp]; True when the limit applies"""
    clamp = settings.delta_clamp
    tail = q_fn(clamp)
    if p <= tail:
        return clamp, True
    if p >= 1.0 - tail:
        return -clamp, True
    return q_inv(p), False


# Single bus

def single_bus_rld(alpha: float, beta: float, d_hat: float, sigma_e: float) -> float:
    """Day-ahead purchase max(0, d_hat + sigma_e Q^-1(alpha/beta))"""
    _check_prices(alpha, beta)
    if sigma_e < 0:
        raise DomainError("sigma_e must be nonnegative")
    return max(0.0, d_hat + sigma_e * q_inv(alpha / beta))


def price_of_uncertainty_single(alpha: float, beta: float) -> float:
    """beta phi(Q^-1(alpha/beta)): integration cost per MW of error standard deviation"""
    _check_prices(alpha, beta)
    return beta * phi(q_inv(alpha / beta))


def price_of_uncertainty_curve(ratios: Sequence[float], beta: float = 1.0) -> np.ndarray:
    """Single-bus price over alpha/beta ratios in [0, 1]; the end points price at zero"""
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios < 0) or np.any(ratios > 1):
        raise DomainError("price ratios must lie in [0, 1]")
    inner = (ratios > 0) & (ratios < 1)
    prices = np.zeros_like(ratios)
    prices[inner] = beta * phi(q_inv(ratios[inner]))
    return prices


# Two buses

def classify_two_bus_region(
    d_hat: Sequence[float],
    capacity: float,
    costs: CostModel,
    sigma_e: float = 1.0,
) -> RegionClassification:
    """
    Locate a two-bus forecast in the congestion partition.

    Bus labels follow the prices: the cheaper day-ahead bus plays bus 1, so
    the picture is mirrored when alpha_1 > alpha_2.
    """
    d_hat = np.asarray(d_hat, dtype=float)
    if d_hat.shape != (2,) or costs.n != 2:
        raise DimensionMismatch("region classification needs a two-bus forecast and price pair")
    if costs.alpha[0] > costs.alpha[1]:
        d_hat = d_hat[::-1]

    def label(d: np.ndarray) -> Region:
        d1, d2 = d
        if d2 > capacity:
            return Region.E if d1 > -capacity else Region.A
        if d2 < -capacity and d1 > capacity:
            return Region.C
        return Region.B if d1 + d2 > 0 else Region.D

    region = label(d_hat)
    eps = 1e-6 * sigma_e
    boundary = False
    if eps > 0:
        for k in range(2):
            for sign in (-1.0, 1.0):
                moved = d_hat.copy()
                moved[k] += sign * eps
                boundary |= label(moved) != region
    return RegionClassification(region=region, boundary_case=boundary)


def perturbed_recourse_cost(z1, z2, delta1, delta2, beta1: float, beta2: float) -> np.ndarray:
    """
    Normalized real-time cost of a congested line 1 -> 2 after the day-ahead
    perturbation (delta1, delta2); the line may only back off.
    """
    m = min(beta1, beta2)
    u1 = np.asarray(z1, dtype=float) - delta1
    u2 = np.asarray(z2, dtype=float) - delta2
    return np.where(
        u2 >= 0,
        beta2 * u2 + m * np.maximum(u1, 0.0),
        m * np.maximum(u1 + u2, 0.0),
    )


@dataclass(frozen=True)
class _Scales:
    s1: float
    s2: float
    ss: float
    rho_12: float
    rho_1s: float
    rho_2s: float


def _scales(problem: TwoBusProblem) -> _Scales:
    v1, v2, c12 = problem.cov[0, 0], problem.cov[1, 1], problem.cov[0, 1]
    vs = v1 + v2 + 2.0 * c12
    if min(v1, v2, vs) <= settings.cholesky_max_jitter:
        raise DegenerateCovariance(
            f"aggregated error variances ({v1:.3g}, {v2:.3g}, sum {vs:.3g}) must be positive"
        )
    s1, s2, ss = math.sqrt(v1), math.sqrt(v2), math.sqrt(vs)

    def clip(r: float) -> float:
        return max(-1.0, min(1.0, r))

    return _Scales(
        s1=s1,
        s2=s2,
        ss=ss,
        rho_12=clip(c12 / (s1 * s2)),
        rho_1s=clip((v1 + c12) / (s1 * ss)),
        rho_2s=clip((v2 + c12) / (s2 * ss)),
    )


def _residual(problem: TwoBusProblem, sc: _Scales, delta: np.ndarray) -> np.ndarray:
    """Marginal recourse value minus day-ahead price on each side"""
    m = problem.m
    a1, a2 = delta[0] / sc.s1, delta[1] / sc.s2
    b = (delta[0] + delta[1]) / sc.ss
    f1 = m * bivariate_orthant(a1, b, sc.rho_1s) - problem.alpha1
    f2 = (
        problem.beta2 * q_fn(a2)
        + m * (q_fn(b) - bivariate_orthant(a2, b, sc.rho_2s))
        - problem.alpha2
    )
    return np.array([f1, f2])


def _jacobian(problem: TwoBusProblem, sc: _Scales, delta: np.ndarray) -> np.ndarray:
    m = problem.m
    a1, a2 = delta[0] / sc.s1, delta[1] / sc.s2
    b = (delta[0] + delta[1]) / sc.ss
    ga1, gb1 = orthant_gradient(a1, b, sc.rho_1s)
    ga2, gb2 = orthant_gradient(a2, b, sc.rho_2s)
    pb = phi(b) / sc.ss
    return np.array([
        [m * (ga1 / sc.s1 + gb1 / sc.ss), m * gb1 / sc.ss],
        [m * (-pb - gb2 / sc.ss), -problem.beta2 * phi(a2) / sc.s2 + m * (-pb - ga2 / sc.s2 - gb2 / sc.ss)],
    ])


def two_bus_expected_cost(problem: TwoBusProblem, delta1: float, delta2: float) -> float:
    """
    alpha' delta + E[recourse] of the normalized two-bus problem; at the
    equilibrium this is the price of uncertainty.
    """
    sc = _scales(problem)
    m = problem.m
    a1, a2 = delta1 / sc.s1, delta2 / sc.s2
    b = (delta1 + delta2) / sc.ss
    shortfall_total = sc.ss * (tail_expectation(b) - partial_expectation(b, a2, sc.rho_2s))
    shortfall_source = sc.s1 * partial_expectation(a1, a2, sc.rho_12)
    shortfall_sink = sc.s2 * tail_expectation(a2)
    return (
        problem.alpha1 * delta1
        + problem.alpha2 * delta2
        + m * (shortfall_total + shortfall_source)
        + problem.beta2 * shortfall_sink
    )


def solve_two_bus_equilibrium(problem: TwoBusProblem) -> EquilibriumSolution:
    """
    Damped Newton solve of the two stationarity conditions.

    Each coordinate is held within delta_clamp standard deviations; a solution
    resting on that limit is returned with `saturated` set.

    Raises:
        DegenerateCovariance: if an aggregated error has zero variance
        NoConvergence: if the residual stalls away from the clamp
    """
    sc = _scales(problem)
    tol = settings.equilibrium_tol
    scale = np.array([sc.s1, sc.s2])
    hi = settings.delta_clamp * scale

    start1, _ = _clamped_quantile(problem.alpha1 / problem.m)
    start2, _ = _clamped_quantile(problem.alpha2 / problem.beta2)
    delta = np.clip(np.array([start1, start2]) * scale, -hi, hi)
    res = _residual(problem, sc, delta)
    norm = float(np.max(np.abs(res)))

    iterations = 0
    while norm > tol and iterations < settings.newton_max_iter:
        iterations += 1
        step, *_ = np.linalg.lstsq(_jacobian(problem, sc, delta), -res, rcond=None)
        t = 1.0
        while True:
            cand = np.clip(delta + t * step, -hi, hi)
            cand_res = _residual(problem, sc, cand)
            cand_norm = float(np.max(np.abs(cand_res)))
            if cand_norm < norm or t < 1e-8:
                break
            t /= 2.0
        if cand_norm >= norm:
            break
        delta, res, norm = cand, cand_res, cand_norm

    saturated = bool(np.any(np.abs(delta) >= hi * (1.0 - 1e-12)))
    if norm > tol and not saturated:
        raise NoConvergence(f"two-bus equilibrium stalled after {iterations} iterations", norm)
    if saturated:
        logger.warning("two-bus equilibrium rests on the clamp at delta = (%.4g, %.4g)", *delta)
    logger.debug("two-bus equilibrium: %d Newton iterations, residual %.2e", iterations, norm)

    return EquilibriumSolution(
        delta1=float(delta[0]),
        delta2=float(delta[1]),
        price=float(two_bus_expected_cost(problem, delta[0], delta[1])),
        residual=norm,
        iterations=iterations,
        saturated=saturated,
    )


def isolated_two_bus_price(problem: TwoBusProblem) -> float:
    """Price when the congested line may not back off: two independent single buses"""
    sc = _scales(problem)
    return (
        sc.s1 * price_of_uncertainty_single(problem.alpha1, problem.beta1)
        + sc.s2 * price_of_uncertainty_single(problem.alpha2, problem.beta2)
    )


def backflow_ratio_curve(alpha: Sequence[float], beta, rhos: Sequence[float]) -> np.ndarray:
    """Two-bus price with backflow over the isolated price, one entry per error correlation"""
    alpha1, alpha2 = (float(a) for a in alpha)
    beta1, beta2 = (float(beta), float(beta)) if np.isscalar(beta) else (float(b) for b in beta)
    ratios = []
    for rho in rhos:
        problem = TwoBusProblem(
            alpha1=alpha1,
            alpha2=alpha2,
            beta1=beta1,
            beta2=beta2,
            cov=[[1.0, rho], [rho, 1.0]],
            gamma=[1.0, 0.0],
            source_bus=0,
            sink_bus=1,
            congested_branch=0,
        )
        ratios.append(solve_two_bus_equilibrium(problem).price / isolated_two_bus_price(problem))
    return np.array(ratios)


# Network reduction

def _source_sink(net: Network, line: CongestedLine) -> Tuple[int, int]:
    br = net.branches[line.branch]
    return (br.from_bus, br.to_bus) if line.direction == 1 else (br.to_bus, br.from_bus)


def gamma_weights(net: Network, fs: FlowStructure, line: CongestedLine) -> np.ndarray:
    """
    Share of each bus's demand served from the source side of `line` when
    that line carries no flow change. 1 at the source, 0 at the sink.

    Raises:
        SingularSystem: if the interior balance equations cannot be solved
    """
    if net.n < 2:
        raise DimensionMismatch("aggregation weights need at least two buses")
    if fs.pinned_branch != line.branch:
        fs = build_flow_structure(net, tree_root=fs.root, pinned_branch=line.branch)
    src, sink = _source_sink(net, line)
    gamma = np.zeros(net.n)
    gamma[src] = 1.0
    interior = [bus for bus in range(net.n) if bus not in (src, sink)]
    if not interior:
        return gamma

    a_tilde = np.vstack([np.eye(1, net.n - 1), fs.injection_map[interior, :]])
    if np.linalg.cond(a_tilde) > 1e12:
        raise SingularSystem(f"interior balance system for branch {line.branch} is singular")
    rhs = np.zeros((net.n - 1, len(interior)))
    rhs[1:, :] = -np.eye(len(interior))
    unit_flows = np.linalg.solve(a_tilde, rhs)
    gamma[interior] = fs.injection_map[src, :] @ unit_flows
    if np.any(gamma < -_GAMMA_TOL) or np.any(gamma > 1 + _GAMMA_TOL):
        raise UnsupportedPattern(f"aggregation weights leave [0, 1]: {np.round(gamma, 6).tolist()}")
    return np.clip(gamma, 0.0, 1.0)


def _real_time_pair(costs: CostModel, src: int, sink: int) -> Tuple[float, float]:
    beta = costs.beta
    tol = settings.active_tol
    if np.ptp(beta) > tol:
        others = np.delete(beta, [src, sink])
        if others.size and max(beta[src], beta[sink]) > others.min() + tol:
            raise UnsupportedPattern(
                "real-time prices must be uniform or lowest at the ends of the congested line"
            )
    return float(beta[src]), float(beta[sink])


def reduce_to_two_bus(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
    nominal: OpfResult,
    alpha2_form: Optional[str] = None,
) -> TwoBusProblem:
    """
    Collapse a singly congested nominal dispatch to an equivalent congested
    two-bus problem with correlated aggregated errors.

    Raises:
        MultipleCongestion: if more than one line binds
        UnsupportedPattern: for price or generation patterns outside the reduction
    """
    if len(nominal.congested) > 1:
        raise MultipleCongestion(f"{len(nominal.congested)} congested lines")
    if not nominal.congested:
        raise UnsupportedPattern("no congested line to reduce around")
    line = nominal.congested[0]
    src, sink = _source_sink(net, line)
    beta1, beta2 = _real_time_pair(costs, src, sink)
    gamma = gamma_weights(net, fs, line)

    generators = [int(b) for b in nominal.generating()]
    shedding = nominal.shedding()
    if np.any(gamma[shedding] < 1 - _GAMMA_TOL):
        raise UnsupportedPattern("surplus buses away from the source side of the congested line")

    weights = np.ones(net.n)
    weights[shedding] = 0.0
    w1, w2 = weights * gamma, weights * (1.0 - gamma)
    corr = forecast.corr
    cov = np.array([[w1 @ corr @ w1, w1 @ corr @ w2], [w2 @ corr @ w1, w2 @ corr @ w2]])

    alpha = costs.alpha
    duals = nominal.bus_duals
    if len(generators) == 2 and shedding.size == 0:
        i, k = generators
        if abs(gamma[i] - gamma[k]) < _GAMMA_TOL:
            raise UnsupportedPattern(f"buses {i} and {k} split their errors identically")
        mix = np.array([[gamma[i], gamma[k]], [1 - gamma[i], 1 - gamma[k]]])
        delta_map = np.linalg.inv(mix)
        alpha_prime = delta_map.T @ alpha[generators]
        if (alpha2_form or settings.alpha2_form) == "theorem":
            alpha_prime = _theorem_prices(alpha, gamma, generators, alpha_prime)
        pattern = ReductionPattern.IDENTITY if net.n == 2 else ReductionPattern.TWO_GENERATORS
    elif len(generators) == 1 and shedding.size == 0:
        delta_map = np.array([[1.0, 1.0]])
        alpha_prime = np.array([duals[src], duals[sink]])
        pattern = ReductionPattern.ONE_GENERATOR
    elif len(generators) == 1:
        k = generators[0]
        if gamma[k] > 1 - _GAMMA_TOL:
            raise UnsupportedPattern(f"bus {k} generates on the surplus side of the congested line")
        delta_map = np.array([[0.0, 1.0 / (1.0 - gamma[k])]])
        alpha_prime = np.array([duals[src], alpha[k] / (1.0 - gamma[k])])
        pattern = ReductionPattern.SURPLUS_SOURCE_SIDE
    else:
        raise UnsupportedPattern(
            f"{len(generators)} generating and {shedding.size} surplus buses do not reduce to two buses"
        )

    logger.info(
        "reduced around branch %d (bus %d -> %d): pattern %s, alpha' = (%.6g, %.6g)",
        line.branch, src, sink, pattern.value, alpha_prime[0], alpha_prime[1],
    )
    return TwoBusProblem(
        alpha1=float(alpha_prime[0]),
        alpha2=float(alpha_prime[1]),
        beta1=beta1,
        beta2=beta2,
        cov=cov,
        gamma=gamma,
        source_bus=src,
        sink_bus=sink,
        congested_branch=line.branch,
        pattern=pattern,
        generators=generators,
        delta_map=delta_map,
        error_weights=weights,
    )


def _theorem_prices(alpha: np.ndarray, gamma: np.ndarray, generators: List[int], fallback: np.ndarray) -> np.ndarray:
    """alpha'_2 = alpha_k / gamma_k - gamma_k alpha_1 for a source-side generator paired with bus k"""
    full = [b for b in generators if gamma[b] > 1 - _GAMMA_TOL]
    if not full:
        logger.warning("no generator at the congestion source; using the dual effective prices")
        return fallback
    i = full[0]
    k = generators[1] if generators[0] == i else generators[0]
    if gamma[k] < _GAMMA_TOL:
        return fallback
    return np.array([alpha[i], alpha[k] / gamma[k] - gamma[k] * alpha[i]])


def _solve_one_generator(problem: TwoBusProblem) -> EquilibriumSolution:
    sc = _scales(problem)
    g = float(problem.gamma[problem.generators[0]])
    weights = np.array([g, 1.0 - g])

    def stationarity(dk: float) -> float:
        return float(weights @ _residual(problem, sc, weights * dk))

    limit = 2.0 * settings.delta_clamp * max(sc.s1, sc.s2, sc.ss)
    lo_val, hi_val = stationarity(-limit), stationarity(limit)
    saturated = False
    if lo_val <= 0:
        dk, saturated = -limit, True
    elif hi_val >= 0:
        dk, saturated = limit, True
    else:
        dk = optimize.brentq(stationarity, -limit, limit, xtol=1e-12)
    d1, d2 = weights * dk
    return EquilibriumSolution(
        delta1=float(d1),
        delta2=float(d2),
        price=float(two_bus_expected_cost(problem, d1, d2)),
        residual=abs(stationarity(dk)),
        saturated=saturated,
    )


def _solve_surplus_source(problem: TwoBusProblem) -> EquilibriumSolution:
    v2 = problem.cov[1, 1]
    if v2 <= settings.cholesky_max_jitter:
        raise DegenerateCovariance("sink-side aggregated error has zero variance")
    s2 = math.sqrt(v2)
    q, saturated = _clamped_quantile(problem.alpha2 / problem.beta2)
    d2 = s2 * q
    price = problem.alpha2 * d2 + problem.beta2 * s2 * tail_expectation(q)
    return EquilibriumSolution(delta1=0.0, delta2=float(d2), price=float(price), saturated=saturated)


def solve_reduced(problem: TwoBusProblem, n_buses: int) -> Tuple[np.ndarray, EquilibriumSolution]:
    """Equilibrium of a reduced problem and the per-bus perturbation it implies"""
    if problem.pattern == ReductionPattern.ONE_GENERATOR:
        eq = _solve_one_generator(problem)
    elif problem.pattern == ReductionPattern.SURPLUS_SOURCE_SIDE:
        eq = _solve_surplus_source(problem)
    else:
        eq = solve_two_bus_equilibrium(problem)
    delta = np.zeros(n_buses)
    delta[problem.generators] = problem.delta_map @ np.array([eq.delta1, eq.delta2])
    return delta, eq


# Network dispatch

def aggregate_single_bus(alpha: float, beta: float, corr: np.ndarray, generators: Sequence[int]) -> AggregateDispatch:
    """Copper-plate view: total error scale sqrt(1' corr 1), one threshold for the whole network"""
    std = math.sqrt(max(0.0, float(np.sum(corr))))
    generators = [int(b) for b in generators]
    if not generators or std == 0.0:
        return AggregateDispatch(alpha=alpha, beta=beta, std=std, delta=0.0, price=0.0, generators=generators)
    _check_prices(alpha, beta)
    q = q_inv(alpha / beta)
    return AggregateDispatch(
        alpha=alpha, beta=beta, std=std, delta=std * q, price=std * beta * phi(q), generators=generators
    )


def _spread(aggregate: AggregateDispatch, n: int) -> np.ndarray:
    delta = np.zeros(n)
    if aggregate.generators:
        delta[aggregate.generators] = aggregate.delta / len(aggregate.generators)
    return delta


def _schedule(nominal: OpfResult, delta: np.ndarray, sigma_e: float) -> np.ndarray:
    return np.maximum(0.0, nominal.generation + sigma_e * delta)


def _two_bus_boundary(net: Network, costs: CostModel, forecast: Forecast) -> bool:
    if net.n != 2 or net.m != 1 or not net.branches[0].bounded:
        return False
    verdict = classify_two_bus_region(
        forecast.d_hat, net.branches[0].capacity, costs, sigma_e=forecast.sigma_e
    )
    if verdict.boundary_case:
        logger.warning("forecast sits on a region boundary (%s)", verdict.region.value)
    return verdict.boundary_case


def network_rld(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
    alpha2_form: Optional[str] = None,
) -> RldDispatch:
    """
    Risk-limiting day-ahead schedule of a network.

    Uncongested nominal dispatches use the copper-plate threshold spread over
    the generating buses; a single congested line goes through the two-bus
    reduction.

    Raises:
        Unsupported: for two or more congested lines or patterns the
            reduction does not cover
    """
    nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
    boundary = _two_bus_boundary(net, costs, forecast)

    if not nominal.congested:
        generators = nominal.generating()
        alpha_eff = float(np.mean(nominal.bus_duals))
        aggregate = aggregate_single_bus(alpha_eff, float(costs.beta.min()), forecast.corr, generators)
        delta = _spread(aggregate, net.n)
        logger.info("uncongested dispatch: aggregate delta %.6g over %d buses", aggregate.delta, len(generators))
        return RldDispatch(
            g_star=_schedule(nominal, delta, forecast.sigma_e),
            delta=delta,
            nominal=nominal,
            price_of_uncertainty=aggregate.price,
            sigma_e=forecast.sigma_e,
            path="single_bus",
            boundary_case=boundary,
        )

    if len(nominal.congested) > 1:
        raise Unsupported(
            f"{len(nominal.congested)} congested lines: only single congestion reduces to two buses"
        )
    try:
        problem = reduce_to_two_bus(net, fs, costs, forecast, nominal, alpha2_form)
    except UnsupportedPattern as exc:
        raise Unsupported(f"congestion pattern not covered: {exc}") from exc

    delta, eq = solve_reduced(problem, net.n)
    return RldDispatch(
        g_star=_schedule(nominal, delta, forecast.sigma_e),
        delta=delta,
        nominal=nominal,
        price_of_uncertainty=eq.price,
        sigma_e=forecast.sigma_e,
        path="two_bus",
        pattern=problem.pattern,
        reduction=problem,
        equilibrium=eq,
        saturated=eq.saturated,
        boundary_case=boundary,
    )


def congestion_ignorant_rld(
    net: Network,
    fs: FlowStructure,
    costs: CostModel,
    forecast: Forecast,
) -> RldDispatch:
    """Copper-plate dispatch applied whatever the nominal congestion"""
    nominal = solve_nda_opf(net, fs, costs, forecast.d_hat)
    generators = nominal.generating()
    alpha_eff = float(np.mean(costs.alpha[generators])) if generators.size else 0.0
    aggregate = aggregate_single_bus(alpha_eff, float(costs.beta.min()), forecast.corr, generators)
    delta = _spread(aggregate, net.n)
    return RldDispatch(
        g_star=_schedule(nominal, delta, forecast.sigma_e),
        delta=delta,
        nominal=nominal,
        price_of_uncertainty=aggregate.price,
        sigma_e=forecast.sigma_e,
        path="single_bus",
    )
