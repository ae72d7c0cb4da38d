"""
Reading and writing sectioned .grid case files
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.errors import CaseValidationError, ParseError
from app.models.case import CaseFile, ExperimentDefaults
from app.models.dispatch import CostModel, Forecast
from app.models.network import Branch, Network

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
BUNDLED_CASES = ("case9", "case9_congested", "two_bus", "three_bus_ring", "single_bus")
FORMAT_VERSION = "1"

_Token = Tuple[str, int]


def _tokens(line: str) -> List[_Token]:
    """Whitespace-separated words with their 1-based columns, comments removed"""
    body = line.split("#", 1)[0]
    out, col = [], 0
    for word in body.split():
        col = body.index(word, col)
        out.append((word, col + 1))
        col += len(word)
    return out


def _number(token: _Token, lineno: int, allow_inf: bool = False) -> float:
    word, col = token
    try:
        value = float(word)
    except ValueError:
        raise ParseError(f"expected a number, got '{word}'", lineno, col) from None
    if math.isnan(value) or (math.isinf(value) and not (allow_inf and value > 0)):
        raise ParseError(f"'{word}' is not allowed here", lineno, col)
    return value


def _integer(token: _Token, lineno: int) -> int:
    word, col = token
    try:
        return int(word)
    except ValueError:
        raise ParseError(f"expected an integer, got '{word}'", lineno, col) from None


def _arity(tokens: List[_Token], count: int, lineno: int) -> None:
    if len(tokens) != count:
        col = tokens[min(len(tokens), count) - 1][1] if tokens else 1
        raise ParseError(
            f"{tokens[0][0]} takes {count - 1} fields, got {len(tokens) - 1}", lineno, col
        )


def _sigma_grid(token: _Token, lineno: int) -> List[float]:
    word, col = token
    try:
        if ":" in word:
            start, stop, step = (float(part) for part in word.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            return [float(x) for x in np.arange(start, stop + step / 2, step)]
        return [float(part) for part in word.split(",")]
    except ValueError:
        raise ParseError(f"sigma grid must be a:b:step or a comma list, got '{word}'", lineno, col) from None


def parse_case_text(text: str, name: str = "case") -> CaseFile:
    """
    Parse case file contents.

    Raises:
        ParseError: on a syntax error, with its line and column
        CaseValidationError: when the case violates a model invariant
    """
    buses: Dict[int, Tuple[float, float, float]] = {}
    branches: List[Branch] = []
    pmax: Dict[int, float] = {}
    sigma: Optional[float] = None
    cov_rows: List[List[float]] = []
    cov_expected = 0
    defaults: Dict[str, object] = {}
    seen_header = False

    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = _tokens(line)
        if not tokens:
            continue
        if cov_expected:
            if len(tokens) != cov_expected:
                raise ParseError(f"COV rows need {cov_expected} entries", lineno, tokens[0][1])
            cov_rows.append([_number(t, lineno) for t in tokens])
            if len(cov_rows) == cov_expected:
                cov_expected = 0
            continue

        keyword, col = tokens[0]
        if not seen_header:
            if keyword != "GRID" or len(tokens) != 2 or tokens[1][0] != FORMAT_VERSION:
                raise ParseError(f"file must start with 'GRID {FORMAT_VERSION}'", lineno, col)
            seen_header = True
            continue

        if keyword == "BUS":
            _arity(tokens, 5, lineno)
            bus = _integer(tokens[1], lineno)
            if bus in buses:
                raise ParseError(f"bus {bus} defined twice", lineno, tokens[1][1])
            if cov_rows:
                raise ParseError("BUS lines must precede COV", lineno, col)
            buses[bus] = tuple(_number(t, lineno) for t in tokens[2:5])
        elif keyword == "BRANCH":
            _arity(tokens, 5, lineno)
            frm, to = _integer(tokens[1], lineno), _integer(tokens[2], lineno)
            try:
                branches.append(Branch(
                    from_bus=frm - 1,
                    to_bus=to - 1,
                    susceptance=_number(tokens[3], lineno),
                    capacity=_number(tokens[4], lineno, allow_inf=True),
                ))
            except ValidationError as exc:
                raise ParseError(exc.errors()[0]["msg"], lineno, col) from None
        elif keyword == "PMAX":
            _arity(tokens, 3, lineno)
            pmax[_integer(tokens[1], lineno)] = _number(tokens[2], lineno, allow_inf=True)
        elif keyword == "SIGMA":
            _arity(tokens, 2, lineno)
            sigma = _number(tokens[1], lineno)
        elif keyword == "COV":
            _arity(tokens, 1, lineno)
            if not buses:
                raise ParseError("COV needs the BUS lines first", lineno, col)
            cov_expected = len(buses)
        elif keyword == "SEED":
            _arity(tokens, 2, lineno)
            defaults["seed"] = _integer(tokens[1], lineno)
        elif keyword == "SCENARIOS":
            _arity(tokens, 2, lineno)
            defaults["scenarios"] = _integer(tokens[1], lineno)
        elif keyword == "SIGMAGRID":
            _arity(tokens, 2, lineno)
            defaults["sigma_grid"] = _sigma_grid(tokens[1], lineno)
        else:
            raise ParseError(f"unknown keyword '{keyword}'", lineno, col)

    last = len(text.splitlines())
    if not seen_header:
        raise ParseError(f"file must start with 'GRID {FORMAT_VERSION}'", max(last, 1), 1)
    if cov_expected:
        raise ParseError(f"COV block ended after {len(cov_rows)} of {cov_expected} rows", last, 1)
    if sigma is None:
        raise CaseValidationError("SIGMA is required")
    return _assemble(name, buses, branches, pmax, sigma, cov_rows, defaults)


def _assemble(name, buses, branches, pmax, sigma, cov_rows, defaults) -> CaseFile:
    n = len(buses)
    if n == 0:
        raise CaseValidationError("a case needs at least one BUS")
    if sorted(buses) != list(range(1, n + 1)):
        raise CaseValidationError(f"bus ids must be 1..{n}, got {sorted(buses)}")
    for bus in pmax:
        if bus not in buses:
            raise CaseValidationError(f"PMAX refers to unknown bus {bus}")
    alpha, beta, d_hat = (np.array([buses[b][k] for b in range(1, n + 1)]) for k in range(3))
    limits = None
    if pmax:
        limits = np.array([pmax.get(b, math.inf) for b in range(1, n + 1)])
    try:
        return CaseFile(
            name=name,
            network=Network(n_buses=n, branches=branches),
            costs=CostModel(alpha=alpha, beta=beta, pmax=limits),
            forecast=Forecast(d_hat=d_hat, sigma_e=sigma, corr=np.array(cov_rows) if cov_rows else None),
            defaults=ExperimentDefaults(**defaults),
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise CaseValidationError(f"{where}: {first['msg']}" if where else first["msg"]) from None


def parse_case(path) -> CaseFile:
    """Parse a UTF-8 case file; the case is named after the file stem"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CaseValidationError(f"cannot read {path}: {exc}", code="CASE_NOT_FOUND") from None
    name = path.name[: -len(".grid")] if path.name.endswith(".grid") else path.stem
    case = parse_case_text(text, name=name)
    logger.debug("parsed %s: %d buses, %d branches", path, case.network.n, case.network.m)
    return case


def resolve_case(name_or_path: str) -> CaseFile:
    """A bundled case by name, or a case file by path"""
    if name_or_path in BUNDLED_CASES:
        return parse_case(DATA_DIR / f"{name_or_path}.grid")
    path = Path(name_or_path)
    if not path.exists():
        raise CaseValidationError(
            f"'{name_or_path}' is neither a bundled case ({', '.join(BUNDLED_CASES)}) nor a file",
            code="CASE_NOT_FOUND",
        )
    return parse_case(path)


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_case(case: CaseFile) -> str:
    """Case file text that parses back to an equal case"""
    lines = [f"GRID {FORMAT_VERSION}", f"# {case.name}"]
    for i in range(case.n):
        lines.append(
            f"BUS {i + 1} {_fmt(case.costs.alpha[i])} {_fmt(case.costs.beta[i])} {_fmt(case.forecast.d_hat[i])}"
        )
    for br in case.network.branches:
        lines.append(f"BRANCH {br.from_bus + 1} {br.to_bus + 1} {_fmt(br.susceptance)} {_fmt(br.capacity)}")
    if case.costs.pmax is not None:
        for i, limit in enumerate(case.costs.pmax):
            if math.isfinite(limit):
                lines.append(f"PMAX {i + 1} {_fmt(limit)}")
    lines.append(f"SIGMA {_fmt(case.forecast.sigma_e)}")
    if not np.array_equal(case.forecast.corr, np.eye(case.n)):
        lines.append("COV")
        lines.extend(" ".join(_fmt(x) for x in row) for row in case.forecast.corr)
    lines.append(f"SEED {case.defaults.seed}")
    lines.append(f"SCENARIOS {case.defaults.scenarios}")
    lines.append("SIGMAGRID " + ",".join(_fmt(s) for s in case.defaults.sigma_grid))
    return "\n".join(lines) + "\n"
