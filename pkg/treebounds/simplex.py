"""
Embedded two-phase revised simplex with Bland's anti-cycling rule.

Dense, and meant for the desk-scale problems of the test suite; large
problems go through HiGHS.
"""

import logging

import numpy as np
import scipy.linalg

from .exceptions import NumericalFailure, SolverFailure
from .lp import Sense, Status

logger = logging.getLogger(__name__)


class _StandardForm:
    """min cost.x  s.t.  M x = rhs,  x >= 0,  rhs >= 0, built from an LPProblem."""

    def __init__(self, problem):
        m, n = problem.A.shape
        A = problem.A.toarray()
        sign = 1.0 if problem.sense is Sense.MIN else -1.0
        c = sign * problem.c

        columns, costs = [], []
        self.recover = []
        self.shift = np.zeros(n)
        bound_rows = []
        for j in range(n):
            lo, hi = problem.lower[j], problem.upper[j]
            if np.isfinite(lo):
                self.shift[j] = lo
                self.recover.append((j, 1.0, len(columns)))
                columns.append(A[:, j])
                costs.append(c[j])
                if np.isfinite(hi):
                    bound_rows.append((len(columns) - 1, hi - lo))
            elif np.isfinite(hi):
                self.shift[j] = hi
                self.recover.append((j, -1.0, len(columns)))
                columns.append(-A[:, j])
                costs.append(-c[j])
            else:
                self.recover.append((j, 1.0, len(columns)))
                columns.append(A[:, j])
                costs.append(c[j])
                self.recover.append((j, -1.0, len(columns)))
                columns.append(-A[:, j])
                costs.append(-c[j])

        n_struct = len(columns)
        n_rows = m + len(bound_rows)
        relations = [r.value for r in problem.relations] + ["<="] * len(bound_rows)
        n_slack = sum(1 for r in relations if r != "=")
        M = np.zeros((n_rows, n_struct + n_slack))
        if n_struct:
            M[:m, :n_struct] = np.column_stack(columns)
        rhs = np.concatenate([problem.b - A @ self.shift, [w for _, w in bound_rows]])
        for r, (k, _) in enumerate(bound_rows):
            M[m + r, k] = 1.0
        slack = n_struct
        for r, relation in enumerate(relations):
            if relation == "<=":
                M[r, slack] = 1.0
                slack += 1
            elif relation == ">=":
                M[r, slack] = -1.0
                slack += 1

        self.row_sign = np.where(rhs < 0, -1.0, 1.0)
        self.M = M * self.row_sign[:, None]
        self.rhs = rhs * self.row_sign
        self.cost = np.concatenate([costs, np.zeros(n_slack)])
        self.n_original = n
        self.m_original = m
        self.sign = sign

    def original_x(self, x_std):
        x = self.shift.copy()
        for j, coef, k in self.recover:
            x[j] += coef * x_std[k]
        return x


def _iterate(M, rhs, cost, basis, config, iterations):
    """Run primal simplex from a feasible ``basis``; Bland's rule for both choices."""
    while True:
        if iterations >= config.max_iterations:
            raise SolverFailure(f"simplex hit the iteration limit ({config.max_iterations})")
        lu, piv = scipy.linalg.lu_factor(M[:, basis], check_finite=False)
        if np.min(np.abs(np.diag(lu)), initial=np.inf) < config.pivot_tol:
            raise NumericalFailure("simplex basis became singular")
        x_basic = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
        y = scipy.linalg.lu_solve((lu, piv), cost[basis], trans=1, check_finite=False)
        reduced = cost - M.T @ y
        reduced[basis] = 0.0
        entering = np.flatnonzero(reduced < -config.pivot_tol)
        if not len(entering):
            return "optimal", np.maximum(x_basic, 0.0), y, iterations
        j = entering[0]
        direction = scipy.linalg.lu_solve((lu, piv), M[:, j], check_finite=False)
        rows = np.flatnonzero(direction > config.pivot_tol)
        if not len(rows):
            return "unbounded", None, None, iterations
        ratios = np.maximum(x_basic[rows], 0.0) / direction[rows]
        ties = rows[ratios <= ratios.min() + config.pivot_tol]
        leave = ties[np.argmin(np.asarray(basis)[ties])]
        basis[leave] = j
        iterations += 1


def solve_simplex(problem, config):
    """Returns (status, x, duals, iterations) in the LPProblem's own terms."""
    form = _StandardForm(problem)
    M, rhs = form.M, form.rhs
    m, n_cols = M.shape
    if m == 0:
        if np.any(form.cost < -config.pivot_tol):
            return Status.UNBOUNDED, None, None, 0
        return Status.OPTIMAL, form.original_x(np.zeros(n_cols)), np.zeros(problem.n_rows), 0

    # phase 1 on M | I
    M1 = np.hstack([M, np.eye(m)])
    cost1 = np.concatenate([np.zeros(n_cols), np.ones(m)])
    basis = list(range(n_cols, n_cols + m))
    _, x_basic, _, iterations = _iterate(M1, rhs, cost1, basis, config, 0)
    infeasibility = float(sum(v for b, v in zip(basis, x_basic) if b >= n_cols))
    if infeasibility > config.feasibility_tol * max(1.0, float(np.max(np.abs(rhs)))):
        logger.debug(f"phase 1 ended with infeasibility {infeasibility:.3g}")
        return Status.INFEASIBLE, None, None, iterations

    # pivot zero-level artificials out, dropping the rows they certify redundant
    kept_rows = list(range(m))
    position = 0
    while position < len(basis):
        if basis[position] < n_cols:
            position += 1
            continue
        B = M1[np.ix_(kept_rows, basis)]
        row = np.linalg.solve(B.T, np.eye(len(basis))[position]) @ M1[kept_rows, :n_cols]
        candidates = [
            j for j in np.flatnonzero(np.abs(row) > config.pivot_tol) if j not in basis
        ]
        if candidates:
            basis[position] = int(candidates[0])
            position += 1
        else:
            del kept_rows[position]
            del basis[position]

    M2 = M[kept_rows]
    status, x_basic, y, iterations = _iterate(M2, rhs[kept_rows], form.cost, basis, config, iterations)
    if status == "unbounded":
        return Status.UNBOUNDED, None, None, iterations

    x_std = np.zeros(n_cols)
    x_std[basis] = x_basic
    y_std = np.zeros(m)
    y_std[kept_rows] = y
    duals = form.sign * form.row_sign[: form.m_original] * y_std[: form.m_original]
    return Status.OPTIMAL, form.original_x(x_std), duals, iterations
