"""
rld-dispatch command line: nda | rld | evaluate | price on a case file
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import DispatchError
from app.models.case import POLICY_NAMES, RunOptions
from app.services.case_io import BUNDLED_CASES, resolve_case
from app.services.runner import runner, to_csv

logger = logging.getLogger("app.cli")


def _sigma_grid(text: str) -> List[float]:
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got '{text}'") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("sigma grid needs step > 0 and b >= a")
    grid, k = [], 0
    while start + k * step <= stop + step * 1e-9:
        grid.append(round(start + k * step, 12))
        k += 1
    return grid


def _policies(text: str) -> List[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    unknown = [p for p in names if p not in POLICY_NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown policies: {', '.join(unknown)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rld-dispatch",
        description="Risk-limiting day-ahead dispatch on DC networks",
    )
    parser.add_argument("command", choices=["nda", "rld", "evaluate", "price"])
    parser.add_argument("case", help=f"case file or bundled case ({', '.join(BUNDLED_CASES)})")
    parser.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    parser.add_argument("--scenarios", type=int, help="Monte Carlo scenarios per sigma")
    parser.add_argument("--sigma", type=float, help="forecast error scale in MW")
    parser.add_argument("--sigma-grid", type=_sigma_grid, help="sigma sweep as a:b:step")
    parser.add_argument("--beta-ratio", type=float, help="set every real-time price to F times the mean nominal day-ahead price")
    parser.add_argument("--out", type=Path, help="write the CSV here instead of stdout")
    parser.add_argument("--policies", type=_policies, help=f"comma list of {', '.join(POLICY_NAMES)}")
    parser.add_argument("--workers", type=int, help="evaluation threads")
    parser.add_argument("--alpha2-form", choices=["dual", "theorem"], help="effective sink-side price form")
    parser.add_argument("--log-level", default=settings.log_level, help="logging level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the exit status"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    try:
        options = RunOptions(
            seed=args.seed,
            scenarios=args.scenarios,
            sigma=args.sigma,
            sigma_grid=args.sigma_grid,
            beta_ratio=args.beta_ratio,
            policies=args.policies,
            workers=args.workers,
            alpha2_form=args.alpha2_form,
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        print(f"ERROR VALIDATION_ERROR: {field}: {first['msg']}", file=sys.stderr)
        return 2

    try:
        case = resolve_case(args.case)
        result = runner.run(args.command, case, options)
    except DispatchError as exc:
        print(f"ERROR {exc.code}: {exc.message}", file=sys.stderr)
        return 2

    text = to_csv(result)
    if args.out:
        args.out.write_text(text, encoding="utf-8", newline="\n")
        logger.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
