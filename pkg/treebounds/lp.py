"""
Sparse linear programs and the solver contract used by every LP-building
module.

Dual values are reported as sensitivities of the optimal objective to the
right-hand side of each row, in the problem's own sense.
"""

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse
from scipy.optimize import linprog

from . import settings
from .exceptions import NumericalFailure, SolverFailure

logger = logging.getLogger(__name__)


class Sense(str, Enum):
    MIN = "min"
    MAX = "max"


class Relation(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    INFEASIBLE_OR_UNBOUNDED = "InfeasibleOrUnbounded"


@dataclass(frozen=True)
class SolverConfig:
    method: str = settings.LP_METHOD
    feasibility_tol: float = settings.FEASIBILITY_TOL
    pivot_tol: float = settings.PIVOT_TOL
    max_iterations: int = settings.MAX_ITERATIONS

    @classmethod
    def from_settings(cls, **overrides):
        return dataclasses.replace(
            cls(
                method=settings.LP_METHOD,
                feasibility_tol=settings.FEASIBILITY_TOL,
                pivot_tol=settings.PIVOT_TOL,
                max_iterations=settings.MAX_ITERATIONS,
            ),
            **overrides,
        )


@dataclass(frozen=True, eq=False)
class LPProblem:
    sense: Sense
    c: np.ndarray
    A: scipy.sparse.csr_matrix
    relations: tuple
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    var_names: tuple = field(default=(), repr=False)
    row_names: tuple = field(default=(), repr=False)

    def __post_init__(self):
        m, n = self.A.shape
        if len(self.c) != n or len(self.lower) != n or len(self.upper) != n:
            raise ValueError("objective and bounds must have one entry per variable")
        if len(self.b) != m or len(self.relations) != m:
            raise ValueError("rhs and relations must have one entry per row")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))):
            raise ValueError("objective and rhs must be finite")
        if not np.all(np.isfinite(self.A.data)):
            raise ValueError("constraint coefficients must be finite")
        for array in (self.c, self.b, self.lower, self.upper):
            array.setflags(write=False)

    @property
    def n_vars(self):
        return self.A.shape[1]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def var_name(self, j):
        return self.var_names[j] if self.var_names else f"v{j}"

    def row_name(self, r):
        return self.row_names[r] if self.row_names else f"r{r}"


class LPBuilder:
    """Incremental construction of an LPProblem with named variables and rows."""

    def __init__(self, sense=Sense.MIN):
        self.sense = Sense(sense)
        self._names = []
        self._index = {}
        self._lower = []
        self._upper = []
        self._objective = {}
        self._rows = []
        self._cols = []
        self._vals = []
        self._relations = []
        self._rhs = []
        self._row_names = []

    def variable(self, name, lower=-np.inf, upper=np.inf):
        if name in self._index:
            raise KeyError(f"variable {name!r} already declared")
        self._index[name] = len(self._names)
        self._names.append(name)
        self._lower.append(lower)
        self._upper.append(upper)
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    def index(self, name):
        return self._index[name]

    def objective(self, coeffs):
        for j, value in coeffs.items():
            self._objective[j] = self._objective.get(j, 0.0) + value

    def add_row(self, coeffs, relation, rhs, name=None):
        r = len(self._rhs)
        for j, value in coeffs.items():
            if not 0 <= j < len(self._names):
                raise KeyError(f"row {name or r} references undeclared variable {j}")
            if value != 0.0:
                self._rows.append(r)
                self._cols.append(j)
                self._vals.append(float(value))
        self._relations.append(Relation(relation))
        self._rhs.append(float(rhs))
        self._row_names.append(name or f"r{r}")
        return r

    def build(self):
        n = len(self._names)
        c = np.zeros(n)
        for j, value in self._objective.items():
            c[j] = value
        A = scipy.sparse.csr_matrix(
            (self._vals, (self._rows, self._cols)), shape=(len(self._rhs), n)
        )
        A.sum_duplicates()
        return LPProblem(
            sense=self.sense,
            c=c,
            A=A,
            relations=tuple(self._relations),
            b=np.array(self._rhs, dtype=float),
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            var_names=tuple(self._names),
            row_names=tuple(self._row_names),
        )


@dataclass(frozen=True, eq=False)
class LPSolution:
    status: Status
    objective: float = np.nan
    x: np.ndarray = None
    duals: np.ndarray = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    method: str = ""

    @property
    def optimal(self):
        return self.status is Status.OPTIMAL

    def values_by_name(self, problem):
        return dict(zip(problem.var_names, self.x))


def _relation_masks(problem):
    relations = np.array([r.value for r in problem.relations], dtype=object)
    return relations == "<=", relations == ">=", relations == "="


def _presolve(problem, tol):
    """Drop fixed variables and empty rows.

    Returns the reduced problem, the kept variable and row indices, the fixed
    values, and whether an empty row was found infeasible.
    """
    fixed = np.isfinite(problem.lower) & (problem.lower == problem.upper)
    keep_vars = np.flatnonzero(~fixed)
    fixed_values = np.where(fixed, problem.lower, 0.0)
    b = problem.b - problem.A @ fixed_values
    A = problem.A[:, keep_vars].tocsr()
    row_nnz = np.diff(A.indptr)
    empty = row_nnz == 0
    le, ge, eq = _relation_masks(problem)
    infeasible = bool(
        np.any(empty & le & (b < -tol))
        or np.any(empty & ge & (b > tol))
        or np.any(empty & eq & (np.abs(b) > tol))
    )
    keep_rows = np.flatnonzero(~empty)
    if fixed.any() or empty.any():
        logger.debug(f"presolve removed {int(fixed.sum())} fixed variables, {int(empty.sum())} empty rows")
    reduced = LPProblem(
        sense=problem.sense,
        c=problem.c[keep_vars].copy(),
        A=A[keep_rows].tocsr(),
        relations=tuple(problem.relations[r] for r in keep_rows),
        b=b[keep_rows].copy(),
        lower=problem.lower[keep_vars].copy(),
        upper=problem.upper[keep_vars].copy(),
    )
    return reduced, keep_vars, keep_rows, fixed_values, infeasible


def _solve_highs(problem, config):
    sign = 1.0 if problem.sense is Sense.MIN else -1.0
    le, ge, eq = _relation_masks(problem)
    ub_rows = np.flatnonzero(le | ge)
    eq_rows = np.flatnonzero(eq)
    flip = np.where(ge, -1.0, 1.0)
    A_ub = scipy.sparse.diags(flip[ub_rows]) @ problem.A[ub_rows] if len(ub_rows) else None
    b_ub = flip[ub_rows] * problem.b[ub_rows] if len(ub_rows) else None
    A_eq = problem.A[eq_rows] if len(eq_rows) else None
    b_eq = problem.b[eq_rows] if len(eq_rows) else None
    bounds = [
        (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
        for lo, hi in zip(problem.lower, problem.upper)
    ]
    tol = min(1e-9, config.feasibility_tol)

    def run(presolve):
        return linprog(
            sign * problem.c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
            options={
                "presolve": presolve,
                "primal_feasibility_tolerance": tol,
                "dual_feasibility_tolerance": tol,
            },
        )

    res = run(presolve=True)
    if res.status in (2, 3, 4):
        # presolve reductions can misclassify a degenerate LP; only a plain
        # simplex run is trusted to declare it infeasible or unbounded
        logger.debug(
            f"HiGHS with presolve ended with status {res.status} ({res.message}); retrying without presolve"
        )
        res = run(presolve=False)
    iterations = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return Status.INFEASIBLE, None, None, iterations
    if res.status == 3:
        return Status.UNBOUNDED, None, None, iterations
    if res.status == 4:
        message = str(res.message).lower()
        if "infeasible" in message and "unbounded" in message:
            return Status.INFEASIBLE_OR_UNBOUNDED, None, None, iterations
        raise NumericalFailure(f"HiGHS reported numerical difficulties: {res.message}")
    if res.status != 0:
        raise SolverFailure(f"HiGHS stopped with status {res.status}: {res.message}")

    duals = np.zeros(problem.n_rows)
    if len(ub_rows):
        duals[ub_rows] = sign * flip[ub_rows] * res.ineqlin.marginals
    if len(eq_rows):
        duals[eq_rows] = sign * res.eqlin.marginals
    return Status.OPTIMAL, np.asarray(res.x, dtype=float), duals, iterations


def check_solution(problem, x, duals):
    """Primal feasibility, dual feasibility and complementary slackness residuals."""
    sign = 1.0 if problem.sense is Sense.MIN else -1.0
    le, ge, eq = _relation_masks(problem)
    activity = problem.A @ x

    row_norm = np.ones(problem.n_rows)
    if problem.n_rows:
        row_norm += abs(problem.A).max(axis=1).toarray().ravel()
    violation = np.zeros(problem.n_rows)
    violation[le] = np.maximum(activity[le] - problem.b[le], 0.0)
    violation[ge] = np.maximum(problem.b[ge] - activity[ge], 0.0)
    violation[eq] = np.abs(activity[eq] - problem.b[eq])
    lower_gap = x - problem.lower
    upper_gap = problem.upper - x
    bound_violation = np.maximum(np.maximum(-lower_gap, -upper_gap), 0.0)
    bound_scale = 1.0 + np.nan_to_num(
        np.maximum(np.abs(problem.lower), np.abs(problem.upper)), posinf=0.0
    )
    primal = max(
        float(np.max(violation / row_norm, initial=0.0)),
        float(np.max(bound_violation / bound_scale, initial=0.0)),
    )

    y = sign * duals
    reduced = sign * problem.c - problem.A.T @ y
    has_lower = np.isfinite(problem.lower)
    has_upper = np.isfinite(problem.upper)
    var_dual = np.zeros(problem.n_vars)
    var_dual = np.where(has_lower & ~has_upper, np.maximum(-reduced, 0.0), var_dual)
    var_dual = np.where(~has_lower & has_upper, np.maximum(reduced, 0.0), var_dual)
    var_dual = np.where(~has_lower & ~has_upper, np.abs(reduced), var_dual)
    row_dual = np.zeros(problem.n_rows)
    row_dual[le] = np.maximum(y[le], 0.0)
    row_dual[ge] = np.maximum(-y[ge], 0.0)
    dual_scale = max(1.0, float(np.max(np.abs(problem.c), initial=0.0)))
    dual = max(float(np.max(var_dual, initial=0.0)), float(np.max(row_dual, initial=0.0))) / dual_scale

    slack = np.zeros(problem.n_rows)
    slack[le] = np.maximum(problem.b[le] - activity[le], 0.0)
    slack[ge] = np.maximum(activity[ge] - problem.b[ge], 0.0)
    row_comp = np.abs(y) * slack
    finite_lower_gap = np.where(has_lower, np.maximum(lower_gap, 0.0), 0.0)
    finite_upper_gap = np.where(has_upper, np.maximum(upper_gap, 0.0), 0.0)
    var_comp = np.maximum(reduced, 0.0) * finite_lower_gap + np.maximum(-reduced, 0.0) * finite_upper_gap
    objective = float(problem.c @ x)
    comp_scale = max(1.0, abs(objective), float(np.max(np.abs(problem.b), initial=0.0)))
    complementarity = max(
        float(np.max(row_comp, initial=0.0)), float(np.max(var_comp, initial=0.0))
    ) / comp_scale
    return {"primal": primal, "dual": dual, "complementarity": complementarity}


def dual_objective(problem, solution):
    """Objective of the dual solution: b.y plus the active bound terms."""
    sign = 1.0 if problem.sense is Sense.MIN else -1.0
    y = sign * solution.duals
    reduced = sign * problem.c - problem.A.T @ y
    bound_term = np.where(
        reduced > 0,
        np.where(np.isfinite(problem.lower), problem.lower, 0.0) * reduced,
        np.where(np.isfinite(problem.upper), problem.upper, 0.0) * reduced,
    )
    return sign * float(problem.b @ y + bound_term.sum())


def solve(problem, config=None):
    """Solve ``problem``; raise NumericalFailure if an optimum fails its residual checks."""
    from .simplex import solve_simplex

    config = config or SolverConfig.from_settings()
    reduced, keep_vars, keep_rows, fixed_values, infeasible = _presolve(problem, config.feasibility_tol)
    if infeasible:
        return LPSolution(Status.INFEASIBLE, method=config.method)

    if config.method == "highs":
        status, x_red, duals_red, iterations = _solve_highs(reduced, config)
    elif config.method == "simplex":
        status, x_red, duals_red, iterations = solve_simplex(reduced, config)
    else:
        raise SolverFailure(f"unknown LP method {config.method!r}")

    logger.info(
        f"{config.method}: {problem.n_vars} variables, {problem.n_rows} rows -> {status.value} "
        f"after {iterations} iterations"
    )
    if status is not Status.OPTIMAL:
        return LPSolution(status, iterations=iterations, method=config.method)

    x = fixed_values.copy()
    x[keep_vars] = x_red
    duals = np.zeros(problem.n_rows)
    duals[keep_rows] = duals_red
    residuals = check_solution(problem, x, duals)
    worst = max(residuals.values())
    if worst > config.feasibility_tol:
        raise NumericalFailure(
            f"{config.method} returned an optimum with residuals {residuals} "
            f"above tolerance {config.feasibility_tol}"
        )
    x.setflags(write=False)
    duals.setflags(write=False)
    return LPSolution(
        status=Status.OPTIMAL,
        objective=float(problem.c @ x),
        x=x,
        duals=duals,
        iterations=iterations,
        residuals=residuals,
        method=config.method,
    )


def _lp_name(name):
    return re.sub(r"[^A-Za-z0-9_.]", "_", str(name))


def _lp_terms(pairs):
    text = " ".join(f"{'-' if v < 0 else '+'} {abs(v):.17g} {name}" for name, v in pairs)
    return text.removeprefix("+ ") if text else "0"


def write_lp(problem, f):
    """Write ``problem`` to the open text file ``f`` in LP format, one row per line."""
    names = [_lp_name(problem.var_name(j)) for j in range(problem.n_vars)]
    f.write("Minimize\n" if problem.sense is Sense.MIN else "Maximize\n")
    objective = [(names[j], v) for j, v in enumerate(problem.c) if v != 0.0]
    f.write(f" obj: {_lp_terms(objective)}\n")
    f.write("Subject To\n")
    A = problem.A.tocsr()
    for r in range(problem.n_rows):
        start, stop = A.indptr[r], A.indptr[r + 1]
        terms = [(names[j], v) for j, v in zip(A.indices[start:stop], A.data[start:stop])]
        f.write(
            f" {_lp_name(problem.row_name(r))}: {_lp_terms(terms)} "
            f"{problem.relations[r].value} {problem.b[r]:.17g}\n"
        )
    f.write("Bounds\n")
    for j in range(problem.n_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            f.write(f" {names[j]} free\n")
        elif lo == hi:
            f.write(f" {names[j]} = {lo:.17g}\n")
        else:
            lo_text = f"{lo:.17g}" if np.isfinite(lo) else "-inf"
            hi_text = f"{hi:.17g}" if np.isfinite(hi) else "+inf"
            f.write(f" {lo_text} <= {names[j]} <= {hi_text}\n")
    f.write("End\n")
