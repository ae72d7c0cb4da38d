"""
Case API Endpoints
"""
from typing import List

from fastapi import APIRouter, File, UploadFile

from app.core.errors import CaseValidationError
from app.models.case import CaseSummary, ErrorResponse
from app.services.case_io import BUNDLED_CASES, parse_case_text, resolve_case

router = APIRouter(prefix="/cases", tags=["Cases"])


@router.get(
    "",
    response_model=List[CaseSummary],
    summary="List bundled cases",
)
async def list_cases():
    """Summaries of the cases shipped with the service"""
    return [CaseSummary.of(resolve_case(name)) for name in BUNDLED_CASES]


@router.post(
    "/parse",
    response_model=CaseSummary,
    responses={422: {"model": ErrorResponse, "description": "Parse or validation error"}},
    summary="Validate a case file",
    description="Upload a .grid case file; returns its summary or the first error with line and column.",
)
async def parse_uploaded_case(file: UploadFile = File(...)):
    """Parse an uploaded case file"""
    raw = await file.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise CaseValidationError("case files must be UTF-8 text") from None
    name = (file.filename or "upload").rsplit("/", 1)[-1]
    if name.endswith(".grid"):
        name = name[: -len(".grid")]
    return CaseSummary.of(parse_case_text(text, name=name))
