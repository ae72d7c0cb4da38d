"""
Error hierarchy - every failure the toolkit reports carries a machine-readable code
"""
from typing import Optional


class DispatchError(Exception):
    """Base class for all toolkit errors"""

    code: str = "DISPATCH_ERROR"

    def __init__(self, message: str, code: Optional[str] = None):
        self.message = message
        if code is not None:
            self.code = code
        super().__init__(message)

    def __str__(self) -> str:
        return self.message


# Network topology

class DisconnectedNetwork(DispatchError):
    code = "DISCONNECTED_NETWORK"


class DimensionMismatch(DispatchError):
    code = "DIMENSION_MISMATCH"


# Linear programming / OPF

class NumericalFailure(DispatchError):
    code = "NUMERICAL_FAILURE"


class InfeasibleNetwork(DispatchError):
    code = "INFEASIBLE_NETWORK"


# Risk-limiting dispatch

class DomainError(DispatchError):
    code = "DOMAIN_ERROR"


class NoConvergence(DispatchError):
    code = "NO_CONVERGENCE"

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class DegenerateCovariance(DispatchError):
    code = "DEGENERATE_COVARIANCE"


class SingularSystem(DispatchError):
    code = "SINGULAR_SYSTEM"


class UnsupportedPattern(DispatchError):
    code = "UNSUPPORTED_PATTERN"


class MultipleCongestion(UnsupportedPattern):
    code = "MULTIPLE_CONGESTION"


class Unsupported(DispatchError):
    code = "UNSUPPORTED"


# Evaluation

class CholeskyFailure(DispatchError):
    code = "CHOLESKY_FAILURE"


class EvaluationAborted(DispatchError):
    code = "EVALUATION_ABORTED"


# Case files

class ParseError(DispatchError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class CaseValidationError(DispatchError):
    code = "VALIDATION_ERROR"
