"""
Tight bounds on P(sum c_i >= k) over every joint distribution matching the
tree's node marginals and edge joints.

Each bound is the optimum of a polynomial-size dual LP: a separation block
forcing lambda + alpha.c + beta.(c c) >= 0 on every 0/1 vector c (exact on
trees through the Boolean quadric polytope), and the knapsack block from
``knapsack.emit_knapsack_block`` forcing the same expression above 1 on the
vectors with at least k ones.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from .condind import ci_pmf
from .exceptions import InvariantBreach, NegativeWeight, NumericalFailure, SolverFailure
from .knapsack import (
    BlockRow,
    ConstraintBlock,
    alpha_key,
    beta_key,
    build_dp_table,
    emit_knapsack_block,
    KnapsackInstance,
)
from .lp import LPBuilder, Relation, Sense, SolverConfig, solve
from .models import complement

logger = logging.getLogger(__name__)

EDGE_MULTIPLIERS = ("delta", "eta", "gamma", "chi")


class Direction(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """
    Dual LP solution proving a bound.

    ``tree`` is the model the LP was solved on (the complemented model for a
    lower bound), ``k`` and ``rhs`` the cardinality and right-hand side of
    that LP. The reported bound is ``offset + scale * objective``.
    """

    tree: object
    k: Optional[int]
    rhs: object
    values: dict = field(repr=False)
    offset: float = 0.0
    scale: float = 1.0

    @property
    def lam(self):
        return self.values[("lambda",)]

    @property
    def alpha(self):
        return {self.tree.ids[i]: self.values[alpha_key(i)] for i in range(self.tree.n)}

    @property
    def beta(self):
        ids = self.tree.ids
        return {(ids[i], ids[j]): self.values[beta_key(j)] for i, j in self.tree.edges}

    def edge_multiplier(self, name):
        ids = self.tree.ids
        return {(ids[i], ids[j]): self.values[(name, j)] for i, j in self.tree.edges}

    @property
    def tau(self):
        return {self.tree.ids[i]: self.values[("tau", i)] for i in range(self.tree.n)}

    @property
    def z(self):
        if ("z",) in self.values:
            return self.values[("z",)]
        return np.array([self.values[("z", t)] for t in range(self.tree.n + 1)])

    @property
    def x(self):
        ids = self.tree.ids
        return {
            (ids[key[1]],) + key[2:]: value for key, value in self.values.items() if key[0] == "x"
        }

    def objective(self):
        tree = self.tree
        value = self.lam + sum(self.values[alpha_key(i)] * tree.p[i] for i in range(tree.n))
        value += sum(self.values[beta_key(j)] * tree.p11[j] for _, j in tree.edges)
        return float(value)

    def reported(self):
        return self.offset + self.scale * self.objective()

    def separation_weights(self):
        """Right-hand side per cardinality 0..n that the certificate must cover."""
        n = self.tree.n
        if np.isscalar(self.rhs):
            return np.array([0.0] * self.k + [float(self.rhs)] * (n - self.k + 1))
        return np.asarray(self.rhs, dtype=float)


@dataclass(frozen=True, eq=False)
class BoundResult:
    value: float
    direction: Direction
    k: Optional[int]
    certificate: Optional[DualCertificate] = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    method: str = ""

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class CertificateReport:
    worst_slack: float
    worst_row: str
    cardinality_gap: float
    unconstrained_gap: float
    objective_gap: float
    tol: float

    @property
    def ok(self):
        return (
            self.worst_slack >= -self.tol
            and self.cardinality_gap >= -self.tol
            and self.unconstrained_gap >= -self.tol
            and self.objective_gap <= self.tol
        )

    def __str__(self):
        return (
            f"worst row {self.worst_row} slack {self.worst_slack:.3g}, "
            f"separation gaps {self.cardinality_gap:.3g}/{self.unconstrained_gap:.3g}, "
            f"objective gap {self.objective_gap:.3g}"
        )


def emit_separation_block(tree, const_rhs=0.0):
    """Rows certifying lambda + alpha.c + beta.(c c) >= const_rhs for every 0/1 vector c."""
    rows = []
    const = {("lambda",): 1.0}
    for i in range(tree.n):
        const[("tau", i)] = -1.0
    for _, j in tree.edges:
        const[("delta", j)] = -1.0
        const[("chi", j)] = -1.0
    rows.append(BlockRow(const, Relation.GE, float(const_rhs), "sep_const"))

    for i in range(tree.n):
        coeffs = {alpha_key(i): 1.0, ("tau", i): 1.0}
        for j in tree.children[i]:
            coeffs[("delta", j)] = 1.0
            coeffs[("eta", j)] = -1.0
        if i != tree.root:
            coeffs[("delta", i)] = 1.0
            coeffs[("gamma", i)] = -1.0
        rows.append(BlockRow(coeffs, Relation.GE, 0.0, f"sep_node[{tree.ids[i]}]"))

    for i, j in tree.edges:
        coeffs = {
            ("eta", j): 1.0,
            ("gamma", j): 1.0,
            ("delta", j): -1.0,
            ("chi", j): 1.0,
            beta_key(j): 1.0,
        }
        rows.append(BlockRow(coeffs, Relation.GE, 0.0, f"sep_edge[{tree.ids[i]}-{tree.ids[j]}]"))

    variables = [("lambda",)] + [("tau", i) for i in range(tree.n)]
    variables += [(name, j) for _, j in tree.edges for name in EDGE_MULTIPLIERS]
    return ConstraintBlock(tuple(rows), tuple(variables))


def build_dual_problem(tree, k, rhs, const_rhs=0.0):
    """
    The minimization whose optimum is max P(sum c >= k) (``rhs`` scalar) or
    max sum_t rhs[t] P(sum c = t) (``rhs`` a weight vector).
    """
    builder = LPBuilder(Sense.MIN)
    lam = builder.variable(("lambda",))
    objective = {lam: 1.0}
    for i in range(tree.n):
        objective[builder.variable(alpha_key(i))] = float(tree.p[i])
    for _, j in tree.edges:
        objective[builder.variable(beta_key(j))] = float(tree.p11[j])
    for _, j in tree.edges:
        for name in EDGE_MULTIPLIERS:
            builder.variable((name, j), lower=0.0)
    for i in range(tree.n):
        builder.variable(("tau", i), lower=0.0)
    builder.objective(objective)

    separation = emit_separation_block(tree, const_rhs)
    knapsack = emit_knapsack_block(tree, k if np.isscalar(rhs) else 0, rhs)
    separation.add_to(builder)
    knapsack.add_to(builder)
    combined = ConstraintBlock(
        separation.rows + knapsack.rows, separation.variables + knapsack.variables
    )
    return builder.build(), combined


def _solve_bounded(problem, config, tree):
    """
    Solve a dual bound LP, which is feasible and bounded for every valid tree.

    Args:
        problem: the LP from ``build_dual_problem``
        config: solver settings; a HiGHS run that fails falls back to the
            embedded simplex
        tree: only used in messages
    """
    try:
        solution = solve(problem, config)
    except NumericalFailure as e:
        if config.method != "highs":
            raise
        logger.warning(f"HiGHS failed on the bound LP for {tree} ({e}); retrying with the embedded simplex")
        solution = None
    if solution is not None and solution.optimal:
        return solution
    if solution is not None and config.method == "highs":
        logger.warning(
            f"HiGHS ended {solution.status.value} on the bound LP for {tree}; retrying with the embedded simplex"
        )
    if config.method == "highs":
        solution = solve(problem, dataclasses.replace(config, method="simplex"))
    if not solution.optimal:
        raise SolverFailure(f"bound LP on {tree} ended {solution.status.value}")
    return solution


def _solve_dual(tree, k, rhs, const_rhs, config, direction, offset=0.0, scale=1.0):
    config = config or SolverConfig.from_settings()
    problem, _ = build_dual_problem(tree, k, rhs, const_rhs)
    solution = _solve_bounded(problem, config, tree)
    certificate = DualCertificate(
        tree=tree,
        k=k if np.isscalar(rhs) else None,
        rhs=rhs,
        values=solution.values_by_name(problem),
        offset=offset,
        scale=scale,
    )
    value = offset + scale * solution.objective
    return BoundResult(
        value=float(value),
        direction=direction,
        k=k,
        certificate=certificate,
        iterations=solution.iterations,
        residuals=solution.residuals,
        method=solution.method,
    )


def _check_probability_range(result, tol):
    if not -tol <= result.value <= 1.0 + tol:
        raise InvariantBreach(f"{result.direction.value} bound {result.value!r} lies outside [0, 1]")
    return min(1.0, max(0.0, result.value))


def _checked(result, tree, k, config, probability=True):
    config = config or SolverConfig.from_settings()
    report = verify_certificate(tree, k, result.certificate, result.value, tol=config.feasibility_tol)
    if not report.ok:
        raise NumericalFailure(f"certificate for {result.direction.value} bound at k={k} failed: {report}")
    if not probability:
        return result
    return dataclasses.replace(result, value=_check_probability_range(result, config.feasibility_tol))


def upper_bound(tree, k, config=None):
    """U(k): the largest P(sum c_i >= k) over all distributions matching ``tree``."""
    if k <= 0:
        return BoundResult(1.0, Direction.UPPER, k)
    if k > tree.n:
        return BoundResult(0.0, Direction.UPPER, k)
    result = _solve_dual(tree, k, 1.0, 0.0, config, Direction.UPPER)
    logger.info(f"U({k}) = {result.value:.6g} on {tree}")
    return _checked(result, tree, k, config)


def lower_bound(tree, k, config=None):
    """L(k) = 1 - U'(n - k + 1), U' computed on the complemented model."""
    if k <= 0:
        return BoundResult(1.0, Direction.LOWER, k)
    if k > tree.n:
        return BoundResult(0.0, Direction.LOWER, k)
    flipped = complement(tree)
    result = _solve_dual(
        flipped, tree.n - k + 1, 1.0, 0.0, config, Direction.LOWER, offset=1.0, scale=-1.0
    )
    result = dataclasses.replace(result, k=k)
    logger.info(f"L({k}) = {result.value:.6g} on {tree}")
    return _checked(result, tree, k, config)


def bound(tree, k, direction, config=None):
    if Direction(direction) is Direction.UPPER:
        return upper_bound(tree, k, config)
    return lower_bound(tree, k, config)


def univariate_upper(p, k):
    """Best bound on P(sum c_i >= k) knowing only the marginals ``p``."""
    p = np.sort(np.asarray(p, dtype=float))
    n = len(p)
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    best = min(p[: n - t].sum() / (k - t) for t in range(k))
    return float(min(1.0, best))


def univariate_lower(p, k):
    p = np.asarray(p, dtype=float)
    n = len(p)
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return float(1.0 - univariate_upper(1.0 - p, n - k + 1))


def hunter_worsley_bound(tree):
    """Closed-form P(sum c_i >= 1) upper bound: sum of marginals minus the tree's edge joints."""
    total = float(np.sum(tree.p)) - sum(float(tree.p11[j]) for _, j in tree.edges)
    return min(1.0, total)


def poisson_binomial_pmf(p):
    pmf = np.ones(1)
    for pi in np.asarray(p, dtype=float):
        pmf = np.convolve(pmf, [1.0 - pi, pi])
    return pmf


def poisson_binomial_tail(p, m):
    """P(sum of independent Bernoulli(p_i) >= m)."""
    n = len(p)
    if m <= 0:
        return 1.0
    if m > n:
        return 0.0
    return float(poisson_binomial_pmf(p)[m:].sum())


def weighted_bound(tree, w, direction=Direction.UPPER, config=None):
    """
    Max (or min) over matching distributions of sum_s w[s] P(sum c_i = s).

    The minimum is taken as max(w) minus the maximum under the weights
    max(w) - w, which keeps every weight nonnegative.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (tree.n + 1,):
        raise ValueError(f"weights must have {tree.n + 1} entries, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise NegativeWeight(f"weight {float(w.min())!r} at s={int(w.argmin())} is negative")
    direction = Direction(direction)
    if direction is Direction.UPPER:
        result = _solve_dual(tree, None, w, float(w.min()), config, direction)
    else:
        top = float(w.max())
        flipped = top - w
        result = _solve_dual(tree, None, flipped, float(flipped.min()), config, direction, offset=top, scale=-1.0)
    logger.info(f"weighted {direction.value} bound {result.value:.6g} on {tree}")
    return _checked(result, tree, None, config, probability=False)


def partition_bound(a_probs, tree_b, k, direction=Direction.UPPER, config=None):
    """
    Bound on P(sum over A + sum over B >= k) when the A variables are
    independent of each other and of B, and B follows ``tree_b``.
    """
    w = np.array([poisson_binomial_tail(a_probs, k - s) for s in range(tree_b.n + 1)])
    return dataclasses.replace(weighted_bound(tree_b, w, direction, config), k=k)


def verify_certificate(tree, k, certificate, value, tol=1e-7):
    """
    Check a certificate without trusting the solver: evaluate every LP row on
    its values, re-solve the separation problems with the numeric tree DP,
    and compare its objective with ``value``.
    """
    inner = certificate.tree
    if inner.ids != tree.ids or inner.parent != tree.parent:
        raise ValueError("certificate was computed on a different tree")
    if k is not None and certificate.k is not None:
        expected = k if certificate.scale > 0 else tree.n - k + 1
        if certificate.k != expected:
            raise ValueError(f"certificate is for k={certificate.k}, expected {expected}")

    values = certificate.values
    weights = certificate.separation_weights()
    blocks = [
        emit_separation_block(inner, float(weights.min()) if certificate.k is None else 0.0),
        emit_knapsack_block(inner, certificate.k or 0, certificate.rhs),
    ]
    worst_slack, worst_row = np.inf, ""
    for block in blocks:
        slack, name = block.worst_row(values)
        if slack < worst_slack:
            worst_slack, worst_row = slack, name
    for key, v in values.items():
        if key[0] in EDGE_MULTIPLIERS + ("tau",) and v < worst_slack:
            worst_slack, worst_row = v, f"{key[0]}>=0"

    n = inner.n
    instance = KnapsackInstance(
        inner,
        np.array([values[alpha_key(i)] for i in range(n)]),
        np.array([values[beta_key(j)] if j != inner.root else 0.0 for j in range(n)]),
        0,
    )
    root = build_dp_table(instance).values[(inner.root, inner.index.degree[inner.root])]
    per_t = np.minimum(root[0], root[1])
    covered = certificate.lam + per_t - weights
    cardinality_gap = float(covered[certificate.k or 0 :].min())
    unconstrained_gap = float((certificate.lam + per_t).min() - weights.min())
    objective_gap = abs(certificate.reported() - value)
    return CertificateReport(
        worst_slack=float(worst_slack),
        worst_row=worst_row,
        cardinality_gap=cardinality_gap,
        unconstrained_gap=unconstrained_gap,
        objective_gap=float(objective_gap),
        tol=tol,
    )


def bound_table(tree, ks=None, config=None):
    """(k, U, L, P_ci, U_uv, L_uv) for every k in ``ks`` (default 1..n)."""
    ks = list(range(1, tree.n + 1)) if ks is None else list(ks)
    pmf = ci_pmf(tree)
    records = []
    for k in ks:
        ci = 1.0 if k <= 0 else (0.0 if k > tree.n else float(pmf[k:].sum()))
        records.append(
            (
                k,
                upper_bound(tree, k, config).value,
                lower_bound(tree, k, config).value,
                ci,
                univariate_upper(tree.p, k),
                univariate_lower(tree.p, k),
            )
        )
    return pd.DataFrame(records, columns=["k", "U", "L", "P_ci", "U_uv", "L_uv"])


def check_band_nesting(frame, tol=1e-7, key="k"):
    """Raise InvariantBreach unless L_uv <= L <= P_ci <= U <= U_uv on every row."""
    chain = [c for c in ("L_uv", "L", "P_ci", "U", "U_uv") if c in frame.columns]
    for _, row in frame.iterrows():
        for low, high in zip(chain, chain[1:]):
            if row[low] > row[high] + tol:
                raise InvariantBreach(
                    f"{key}={row[key]}: {low}={row[low]!r} exceeds {high}={row[high]!r}"
                )
    return frame
