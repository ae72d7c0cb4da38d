"""
Dispatch API Endpoints
"""
from fastapi import APIRouter
from starlette.concurrency import run_in_threadpool

from app.core.errors import CaseValidationError
from app.models.case import CaseFile, Command, CommandResult, DispatchRequest, ErrorResponse
from app.services.case_io import parse_case_text, resolve_case
from app.services.runner import runner

router = APIRouter(prefix="/dispatch", tags=["Dispatch"])

_RESPONSES = {
    422: {"model": ErrorResponse, "description": "Invalid case, options or unsupported network"},
    500: {"model": ErrorResponse, "description": "Computation failed"},
}


def _case_of(request: DispatchRequest) -> CaseFile:
    if (request.case is None) == (request.case_text is None):
        raise CaseValidationError("give exactly one of 'case' and 'case_text'")
    if request.case_text is not None:
        return parse_case_text(request.case_text, name="inline")
    return resolve_case(request.case)


async def _run(command: Command, request: DispatchRequest) -> CommandResult:
    case = _case_of(request)
    return await run_in_threadpool(runner.run, command, case, request)


@router.post(
    "/nda",
    response_model=CommandResult,
    responses=_RESPONSES,
    summary="Nominal day-ahead OPF",
    description="Nominal schedule, branch flows, multipliers and the congested lines.",
)
async def nominal_dispatch(request: DispatchRequest):
    """
    Solve the nominal day-ahead OPF of a case.

    - **case**: bundled case name, or
    - **case_text**: full case file contents
    """
    return await _run("nda", request)


@router.post(
    "/rld",
    response_model=CommandResult,
    responses=_RESPONSES,
    summary="Risk-limiting dispatch",
    description="Day-ahead schedule under forecast uncertainty with its analytic price of uncertainty.",
)
async def risk_limiting_dispatch(request: DispatchRequest):
    """
    Risk-limiting schedule g*, perturbation and reduction diagnostics.

    Networks with more than one congested line are rejected with code UNSUPPORTED.
    """
    return await _run("rld", request)


@router.post(
    "/evaluate",
    response_model=CommandResult,
    responses=_RESPONSES,
    summary="Monte Carlo policy comparison",
    description="Mean cost, stage split and integration cost per sigma and policy.",
)
async def evaluate_policies(request: DispatchRequest):
    """Evaluate policies on common random scenarios"""
    return await _run("evaluate", request)


@router.post(
    "/price",
    response_model=CommandResult,
    responses=_RESPONSES,
    summary="Price of uncertainty",
    description="Integration cost over a sigma sweep with fitted and analytic prices.",
)
async def price_of_uncertainty(request: DispatchRequest):
    """Fit integration cost against sigma for each policy"""
    return await _run("price", request)
