"""
Command orchestration shared by the command line and the HTTP surface
"""
import csv
import io
import logging
import math
import time
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import CaseValidationError
from app.models.case import CaseFile, Cell, Command, CommandResult, RunOptions
from app.models.dispatch import CostModel
from app.services.dcopf import solve_nda_opf
from app.services.evaluation import build_policies, evaluate, price_sweep, sample_scenarios
from app.services.network import build_flow_structure
from app.services.rld import network_rld

logger = logging.getLogger(__name__)

DEFAULT_POLICIES = ("rld", "three_sigma", "oracle")


def _bus(i: int) -> str:
    return f"bus{i + 1}"


class DispatchRunner:
    """Runs nda / rld / evaluate / price on a case and returns a table"""

    def _prepare(self, case: CaseFile, options: RunOptions) -> CaseFile:
        """Apply --sigma and --beta-ratio to the case"""
        forecast = case.forecast
        if options.sigma is not None:
            forecast = forecast.with_sigma(options.sigma)
        costs = case.costs
        if options.beta_ratio is not None:
            fs = build_flow_structure(case.network)
            nominal = solve_nda_opf(case.network, fs, costs, forecast.d_hat)
            generators = nominal.generating()
            if not generators.size:
                raise CaseValidationError("--beta-ratio needs at least one generating bus")
            beta = options.beta_ratio * float(np.mean(costs.alpha[generators]))
            try:
                costs = CostModel(alpha=costs.alpha, beta=np.full(case.n, beta), pmax=costs.pmax)
            except ValidationError as exc:
                raise CaseValidationError(exc.errors()[0]["msg"]) from None
        return case.model_copy(update={"forecast": forecast, "costs": costs})

    def _comments(self, case: CaseFile, options: RunOptions) -> List[str]:
        return [
            f"rld-dispatch {settings.app_version} seed={self._seed(case, options)} "
            f"scenarios={self._scenarios(case, options)}"
        ]

    @staticmethod
    def _seed(case: CaseFile, options: RunOptions) -> int:
        return case.defaults.seed if options.seed is None else options.seed

    @staticmethod
    def _scenarios(case: CaseFile, options: RunOptions) -> int:
        return case.defaults.scenarios if options.scenarios is None else options.scenarios

    def run(self, command: Command, case: CaseFile, options: Optional[RunOptions] = None) -> CommandResult:
        """Dispatch on the command name"""
        options = options or RunOptions()
        started = time.perf_counter()
        logger.info("%s on %s started", command, case.name)
        result = getattr(self, command)(case, options)
        logger.info("%s on %s finished in %.2fs", command, case.name, time.perf_counter() - started)
        return result

    def nda(self, case: CaseFile, options: RunOptions) -> CommandResult:
        """Nominal schedule, flows, multipliers and congestion set"""
        case = self._prepare(case, options)
        net = case.network
        fs = build_flow_structure(net)
        result = solve_nda_opf(net, fs, case.costs, case.forecast.d_hat)
        rows: List[List[Cell]] = [["cost", "total", result.cost]]
        rows += [["generation", _bus(i), g] for i, g in enumerate(result.generation)]
        rows += [["bus_dual", _bus(i), lam] for i, lam in enumerate(result.bus_duals)]
        for b, br in enumerate(net.branches):
            label = f"branch{b + 1}:{br.from_bus + 1}-{br.to_bus + 1}"
            rows.append(["flow", label, result.flows[b]])
            rows.append(["capacity_dual", label, result.capacity_duals[b]])
        rows += [["congested", f"branch{c.branch + 1}", c.direction] for c in result.congested]
        return CommandResult(
            command="nda", columns=["section", "element", "value"], rows=rows,
            comments=self._comments(case, options),
        )

    def rld(self, case: CaseFile, options: RunOptions) -> CommandResult:
        """Risk-limiting schedule with the reduction diagnostics"""
        case = self._prepare(case, options)
        net = case.network
        fs = build_flow_structure(net)
        dispatch = network_rld(net, fs, case.costs, case.forecast, options.alpha2_form)
        rows: List[List[Cell]] = [
            ["price_of_uncertainty", "total", dispatch.price_of_uncertainty],
            ["path", "total", dispatch.path],
            ["sigma_e", "total", dispatch.sigma_e],
            ["saturated", "total", int(dispatch.saturated)],
            ["boundary_case", "total", int(dispatch.boundary_case)],
        ]
        rows += [["g_star", _bus(i), g] for i, g in enumerate(dispatch.g_star)]
        rows += [["nominal", _bus(i), g] for i, g in enumerate(dispatch.nominal.generation)]
        rows += [["delta", _bus(i), d] for i, d in enumerate(dispatch.delta)]
        problem = dispatch.reduction
        if problem is not None:
            rows += [
                ["pattern", "total", problem.pattern.value],
                ["congested", f"branch{problem.congested_branch + 1}",
                 f"{problem.source_bus + 1}->{problem.sink_bus + 1}"],
                ["alpha_prime", "1'", problem.alpha1],
                ["alpha_prime", "2'", problem.alpha2],
                ["beta_prime", "1'", problem.beta1],
                ["beta_prime", "2'", problem.beta2],
                ["delta_prime", "1'", dispatch.equilibrium.delta1],
                ["delta_prime", "2'", dispatch.equilibrium.delta2],
                ["cov_prime", "1'1'", problem.cov[0, 0]],
                ["cov_prime", "1'2'", problem.cov[0, 1]],
                ["cov_prime", "2'2'", problem.cov[1, 1]],
            ]
            rows += [["gamma", _bus(i), w] for i, w in enumerate(problem.gamma)]
        return CommandResult(
            command="rld", columns=["section", "element", "value"], rows=rows,
            comments=self._comments(case, options),
        )

    def _policy_names(self, options: RunOptions) -> Sequence[str]:
        return tuple(options.policies) if options.policies else DEFAULT_POLICIES

    def evaluate(self, case: CaseFile, options: RunOptions) -> CommandResult:
        """One row per (sigma, policy); a single sigma with --sigma, otherwise the grid"""
        case = self._prepare(case, options)
        net = case.network
        fs = build_flow_structure(net)
        names = self._policy_names(options)
        sigmas = [case.forecast.sigma_e] if options.sigma is not None else (
            options.sigma_grid or case.defaults.sigma_grid
        )
        batch = sample_scenarios(case.forecast, self._seed(case, options), self._scenarios(case, options))
        policies = build_policies(names, net, fs, case.costs, case.forecast, options.alpha2_form)
        rows: List[List[Cell]] = []
        for sigma in sigmas:
            report = evaluate(
                net, fs, case.costs, case.forecast.with_sigma(sigma), policies, batch,
                include_oracle="oracle" in names, workers=options.workers,
            )
            for r in report.rows:
                rows.append([
                    r.sigma, r.policy, r.mean_cost, r.std_error, r.stage1_cost, r.stage2_cost,
                    r.integration_cost, r.integration_std_error, r.infeasible,
                ])
        return CommandResult(
            command="evaluate",
            columns=[
                "sigma", "policy", "mean_cost", "std_error", "stage1_cost", "stage2_cost",
                "integration_cost", "integration_std_error", "infeasible",
            ],
            rows=rows,
            comments=self._comments(case, options),
        )

    def price(self, case: CaseFile, options: RunOptions) -> CommandResult:
        """Integration cost over the sigma grid with the fitted and analytic prices"""
        case = self._prepare(case, options)
        net = case.network
        fs = build_flow_structure(net)
        report = price_sweep(
            net, fs, case.costs, case.forecast,
            sigma_grid=options.sigma_grid or case.defaults.sigma_grid,
            seed=self._seed(case, options),
            count=self._scenarios(case, options),
            policy_names=self._policy_names(options),
            alpha2_form=options.alpha2_form,
            workers=options.workers,
        )
        rows: List[List[Cell]] = []
        for fit in report.fits:
            analytic = "" if fit.analytic_price is None else fit.analytic_price
            for r in report.rows:
                if r.policy == fit.policy:
                    rows.append([
                        fit.policy, r.sigma, r.integration_cost, fit.slope, fit.half_width,
                        fit.r_squared, analytic,
                    ])
        return CommandResult(
            command="price",
            columns=[
                "policy", "sigma", "integration_cost", "fitted_price", "half_width",
                "r_squared", "analytic_price",
            ],
            rows=rows,
            comments=self._comments(case, options),
        )


def _cell(value: Cell) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if value == 0.0:
            return "0"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".6g")
    return str(value)


def to_csv(result: CommandResult) -> str:
    """Comment lines, header and rows; LF line endings"""
    buffer = io.StringIO()
    for comment in result.comments:
        buffer.write(f"# {comment}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


# Singleton instance
runner = DispatchRunner()
