"""
Dense revised simplex (Bland's rule) with multipliers, plus basis reuse across right-hand sides
"""
import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from app.core.config import settings
from app.core.errors import NumericalFailure
from app.models.lp import LinearProgram, LpSolution, LpStatus

logger = logging.getLogger(__name__)

# Column kinds of the internal standard form
_LOWER, _UPPER, _FREE_POS, _FREE_NEG, _SLACK = range(5)


@dataclass(frozen=True)
class _StandardForm:
    """min c'xi  s.t.  a xi = b,  xi >= 0, with x = shift + transform(xi)"""

    a: np.ndarray
    c: np.ndarray
    var_of_col: np.ndarray
    kind: np.ndarray
    shift: np.ndarray
    n_eq: int
    n_ub: int
    n_bound: int
    bound_vars: np.ndarray
    a_eq_shifted: np.ndarray
    a_ub_shifted: np.ndarray
    bound_rhs: np.ndarray
    const: float

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    def rhs(self, b_eq: np.ndarray, b_ub: np.ndarray) -> np.ndarray:
        """Standard-form rhs; accepts a single rhs or one per row of a batch"""
        b_eq = np.asarray(b_eq, dtype=float)
        b_ub = np.asarray(b_ub, dtype=float)
        eq = b_eq - self.a_eq_shifted
        ub = b_ub - self.a_ub_shifted
        bound = np.broadcast_to(self.bound_rhs, ub.shape[:-1] + self.bound_rhs.shape)
        return np.concatenate([eq, ub, bound], axis=-1)

    def is_free(self, cols: np.ndarray) -> np.ndarray:
        kinds = self.kind[cols]
        return (kinds == _FREE_POS) | (kinds == _FREE_NEG)


def _standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    lower, upper = lp.lower, lp.upper
    cols_a: List[np.ndarray] = []
    var_of_col: List[int] = []
    kind: List[int] = []
    signs: List[float] = []
    shift = np.zeros(n)
    bound_vars: List[int] = []

    a_rows = np.vstack([lp.a_eq, lp.a_ub]) if n else np.zeros((lp.a_eq.shape[0] + lp.a_ub.shape[0], 0))
    for j in range(n):
        if np.isfinite(lower[j]):
            shift[j] = lower[j]
            var_of_col.append(j); kind.append(_LOWER); signs.append(1.0)
            if np.isfinite(upper[j]):
                bound_vars.append(j)
        elif np.isfinite(upper[j]):
            shift[j] = upper[j]
            var_of_col.append(j); kind.append(_UPPER); signs.append(-1.0)
        else:
            var_of_col.append(j); kind.append(_FREE_POS); signs.append(1.0)
            var_of_col.append(j); kind.append(_FREE_NEG); signs.append(-1.0)

    n_eq, n_ub, n_bound = lp.a_eq.shape[0], lp.a_ub.shape[0], len(bound_vars)
    n_rows = n_eq + n_ub + n_bound
    n_struct = len(var_of_col)
    a = np.zeros((n_rows, n_struct + n_ub + n_bound))
    c = np.zeros(a.shape[1])
    for col, (j, sign) in enumerate(zip(var_of_col, signs)):
        a[: n_eq + n_ub, col] = sign * a_rows[:, j]
        c[col] = sign * lp.c[j]
    for r, j in enumerate(bound_vars):
        col = var_of_col.index(j)
        a[n_eq + n_ub + r, col] = 1.0
    a[n_eq: n_eq + n_ub + n_bound, n_struct:] = np.eye(n_ub + n_bound)

    return _StandardForm(
        a=a,
        c=c,
        var_of_col=np.array(var_of_col + [-1] * (n_ub + n_bound), dtype=int),
        kind=np.array(kind + [_SLACK] * (n_ub + n_bound), dtype=int),
        shift=shift,
        n_eq=n_eq,
        n_ub=n_ub,
        n_bound=n_bound,
        bound_vars=np.array(bound_vars, dtype=int),
        a_eq_shifted=lp.a_eq @ shift,
        a_ub_shifted=lp.a_ub @ shift,
        bound_rhs=np.array([upper[j] - lower[j] for j in bound_vars]),
        const=float(lp.c @ shift),
    )


def _factor(basis_matrix: np.ndarray):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu = linalg.lu_factor(basis_matrix, check_finite=False)
    if basis_matrix.size and np.min(np.abs(np.diag(lu[0]))) < settings.lp_pivot_tol:
        raise NumericalFailure("basis matrix became singular")
    return lu


@dataclass
class _SimplexRun:
    status: LpStatus
    basis: np.ndarray
    x_b: np.ndarray
    y: np.ndarray
    iterations: int


def _simplex(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    basis: np.ndarray,
    allowed: np.ndarray,
    max_iter: int,
) -> _SimplexRun:
    """Primal revised simplex from a feasible basis; Bland's rule for both pivots"""
    basis = basis.copy()
    opt_tol = settings.feasibility_tol
    for it in range(max_iter):
        lu = _factor(a[:, basis])
        x_b = linalg.lu_solve(lu, b, check_finite=False)
        y = linalg.lu_solve(lu, c[basis], trans=1, check_finite=False)
        reduced = c - a.T @ y
        candidates = allowed.copy()
        candidates[basis] = False
        entering = np.flatnonzero(candidates & (reduced < -opt_tol))
        if entering.size == 0:
            return _SimplexRun(LpStatus.OPTIMAL, basis, x_b, y, it)

        j = entering[0]
        d = linalg.lu_solve(lu, a[:, j], check_finite=False)
        threshold = settings.lp_pivot_tol * max(1.0, np.abs(d).max())
        rows = np.flatnonzero(d > threshold)
        if rows.size == 0:
            return _SimplexRun(LpStatus.UNBOUNDED, basis, x_b, y, it)
        ratios = np.maximum(x_b[rows], 0.0) / d[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
        leave = ties[np.argmin(basis[ties])]
        basis[leave] = j
    raise NumericalFailure(f"simplex did not terminate within {max_iter} iterations")


@dataclass
class _StandardSolution:
    status: LpStatus
    xi: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    iterations: int = 0


def _solve_standard(form: _StandardForm, b: np.ndarray) -> _StandardSolution:
    """Two-phase simplex on the standard form with rhs b"""
    a, n_rows = form.a, form.n_rows
    n_cols = a.shape[1]
    max_iter = settings.lp_max_iterations
    if n_rows == 0:
        if np.any(form.c < -settings.feasibility_tol):
            return _StandardSolution(LpStatus.UNBOUNDED)
        empty = np.zeros(0, dtype=int)
        return _StandardSolution(LpStatus.OPTIMAL, np.zeros(n_cols), np.zeros(0), empty, empty)
    slack_row_start = form.n_eq
    slack_col_start = n_cols - (form.n_ub + form.n_bound)

    # Phase I: slacks where the rhs allows it, signed artificials elsewhere
    basis = np.empty(n_rows, dtype=int)
    art_cols = []
    art_rows = []
    for i in range(n_rows):
        if i >= slack_row_start and b[i] >= 0:
            basis[i] = slack_col_start + (i - slack_row_start)
        else:
            art_rows.append(i)
            art_cols.append(n_cols + len(art_cols))
            basis[i] = art_cols[-1]
    art = np.zeros((n_rows, len(art_rows)))
    for k, i in enumerate(art_rows):
        art[i, k] = 1.0 if b[i] >= 0 else -1.0
    a1 = np.hstack([a, art])
    c1 = np.concatenate([np.zeros(n_cols), np.ones(len(art_rows))])
    allowed = np.ones(a1.shape[1], dtype=bool)
    rows = np.arange(n_rows)
    iterations = 0

    if art_rows:
        run = _simplex(a1, b, c1, basis, allowed, max_iter)
        iterations += run.iterations
        infeasibility = float(c1[run.basis] @ run.x_b)
        if infeasibility > settings.feasibility_tol * (1.0 + np.abs(b).max()):
            return _StandardSolution(LpStatus.INFEASIBLE, iterations=iterations)
        basis = run.basis

        # Pivot zero-level artificials out; an artificial that cannot leave marks a redundant row
        keep_rows = np.ones(n_rows, dtype=bool)
        keep_pos = np.ones(n_rows, dtype=bool)
        for pos in range(n_rows):
            if basis[pos] < n_cols:
                continue
            lu = _factor(a1[:, basis])
            row = linalg.lu_solve(lu, np.eye(n_rows)[pos], trans=1, check_finite=False) @ a
            row[basis[basis < n_cols]] = 0.0
            candidates = np.flatnonzero(np.abs(row) > 1e-9)
            if candidates.size:
                basis[pos] = candidates[0]
            else:
                keep_rows[art_rows[basis[pos] - n_cols]] = False
                keep_pos[pos] = False
        if not keep_rows.all():
            logger.debug("dropping %d redundant rows", int((~keep_rows).sum()))
        rows = np.flatnonzero(keep_rows)
        basis = basis[keep_pos]

    a2 = a[rows, :]
    b2 = b[rows]
    allowed = np.ones(n_cols, dtype=bool)
    run = _simplex(a2, b2, form.c, basis, allowed, max_iter)
    iterations += run.iterations
    if run.status != LpStatus.OPTIMAL:
        return _StandardSolution(run.status, iterations=iterations)

    xi = np.zeros(n_cols)
    xi[run.basis] = run.x_b
    y = np.zeros(n_rows)
    y[rows] = run.y
    return _StandardSolution(LpStatus.OPTIMAL, xi, y, run.basis, rows, iterations)


def _recover(lp: LinearProgram, form: _StandardForm, sol: _StandardSolution) -> LpSolution:
    n = lp.n_vars
    x = form.shift.copy()
    n_struct = int(np.sum(form.kind != _SLACK))
    for col in range(n_struct):
        j = form.var_of_col[col]
        sign = -1.0 if form.kind[col] in (_UPPER, _FREE_NEG) else 1.0
        x[j] += sign * sol.xi[col]

    lam = sol.y[: form.n_eq]
    mu = -sol.y[form.n_eq: form.n_eq + form.n_ub]
    mu = np.where(np.abs(mu) < settings.feasibility_tol, 0.0, mu)
    grad = lp.c - lp.a_eq.T @ lam + lp.a_ub.T @ mu
    nu_lower = np.where(np.isfinite(lp.lower), np.maximum(grad, 0.0), 0.0)
    nu_upper = np.where(np.isfinite(lp.upper), np.maximum(-grad, 0.0), 0.0)

    return LpSolution(
        status=LpStatus.OPTIMAL,
        primal=x if n else np.zeros(0),
        dual_eq=lam,
        dual_ineq=mu,
        dual_lower=nu_lower,
        dual_upper=nu_upper,
        objective_value=float(lp.c @ x) if n else 0.0,
        iterations=sol.iterations,
        basis=[int(k) for k in sol.basis],
    )


def solve_lp(lp: LinearProgram) -> LpSolution:
    """
    Solve a dense LP with the two-phase revised simplex.

    Deterministic for identical input. Multipliers follow the sign convention
    documented on LpSolution.

    Raises:
        NumericalFailure: if a basis turns singular or the iteration limit is hit
    """
    form = _standard_form(lp)
    b = form.rhs(lp.b_eq, lp.b_ub)
    sol = _solve_standard(form, b)
    logger.debug("LP %d vars x %d rows: %s after %d iterations", lp.n_vars, form.n_rows, sol.status.value, sol.iterations)
    if sol.status != LpStatus.OPTIMAL:
        return LpSolution(status=sol.status, iterations=sol.iterations)
    return _recover(lp, form, sol)


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    """Value of the Lagrangian dual at the returned multipliers"""
    lower = np.where(np.isfinite(lp.lower), lp.lower, 0.0)
    upper = np.where(np.isfinite(lp.upper), lp.upper, 0.0)
    return float(
        lp.b_eq @ sol.dual_eq - lp.b_ub @ sol.dual_ineq + lower @ sol.dual_lower - upper @ sol.dual_upper
    )


@dataclass
class _CachedBasis:
    basis: np.ndarray
    lu: Tuple[np.ndarray, np.ndarray]
    c_b: np.ndarray
    sign_checked: np.ndarray


class ParametricRhsSolver:
    """
    Optimal values of LPs sharing objective, matrices and bounds, differing
    only in b_eq / b_ub.

    Every optimal basis found is kept. A new rhs is first tried against the
    cached bases (dual feasibility does not depend on the rhs, so a basis whose
    primal values stay nonnegative is optimal); the simplex runs only for right
    hand sides no cached basis covers. Not thread-safe: use one instance per
    worker.
    """

    def __init__(self, structure: LinearProgram):
        self._form = _standard_form(structure)
        self._bases: List[_CachedBasis] = []
        self.cache_hits = 0
        self.full_solves = 0

    @property
    def cached_bases(self) -> int:
        return len(self._bases)

    def _remember(self, sol: _StandardSolution) -> None:
        if sol.rows.size != self._form.n_rows or np.any(sol.basis >= self._form.a.shape[1]):
            return
        lu = _factor(self._form.a[:, sol.basis])
        self._bases.append(
            _CachedBasis(
                basis=sol.basis,
                lu=lu,
                c_b=self._form.c[sol.basis],
                sign_checked=~self._form.is_free(sol.basis),
            )
        )

    def objectives(self, b_eq=None, b_ub=None) -> np.ndarray:
        """
        Optimal objective per right-hand side (rows of b_eq / b_ub).

        Infeasible right-hand sides yield nan.
        """
        form = self._form
        count = None
        for block in (b_eq, b_ub):
            if block is not None:
                count = np.atleast_2d(block).shape[0]
        if count is None:
            raise ValueError("at least one right-hand side block is required")
        b_eq = np.zeros((count, form.n_eq)) if b_eq is None else np.atleast_2d(np.asarray(b_eq, dtype=float))
        b_ub = np.zeros((count, form.n_ub)) if b_ub is None else np.atleast_2d(np.asarray(b_ub, dtype=float))
        rhs = form.rhs(b_eq, b_ub)
        out = np.full(count, np.nan)
        if form.n_rows == 0:
            out[:] = form.const
            return out

        pending = np.arange(count)
        tried = 0
        while pending.size:
            while tried < len(self._bases) and pending.size:
                cached = self._bases[tried]
                tried += 1
                block = rhs[pending]
                x_b = linalg.lu_solve(cached.lu, block.T, check_finite=False)
                scale = 1.0 + np.abs(block).max(axis=1)
                ok = np.all(x_b[cached.sign_checked] >= -settings.feasibility_tol * scale, axis=0)
                if ok.any():
                    out[pending[ok]] = cached.c_b @ x_b[:, ok] + form.const
                    self.cache_hits += int(ok.sum())
                    pending = pending[~ok]
            if not pending.size:
                break
            idx = pending[0]
            pending = pending[1:]
            sol = _solve_standard(form, rhs[idx])
            self.full_solves += 1
            if sol.status == LpStatus.OPTIMAL:
                out[idx] = float(form.c @ sol.xi) + form.const
                self._remember(sol)
            elif sol.status == LpStatus.UNBOUNDED:
                out[idx] = -np.inf
        logger.debug(
            "parametric LP: %d rhs, %d cached bases, %d full solves", count, len(self._bases), self.full_solves
        )
        return out
