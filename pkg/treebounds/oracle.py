"""
Exponential-size exact references over all 2^n outcomes.

Outcome c is encoded as the integer sum_i c_i 2^i, bit i standing for dense
node i. Everything here is capped at ``settings.ORACLE_MAX_N`` variables.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse

from . import settings
from .bounds import Direction
from .exceptions import (
    DegenerateConditioning,
    DuplicateEdge,
    DuplicateNode,
    FrechetViolation,
    InfeasibleCardinality,
    InvalidInput,
    ProbabilityOutOfRange,
    SizeCap,
    UnknownNode,
)
from .lp import LPProblem, Relation, Sense, SolverConfig, Status, solve
from .models import EdgeBivariate
from .progress import progress
from .schemas import GeneralModelSchema, read_json

logger = logging.getLogger(__name__)

BATCH_BITS = 16


def _check_size(n):
    if n > settings.ORACLE_MAX_N:
        raise SizeCap(f"{n} variables exceed the enumeration cap of {settings.ORACLE_MAX_N}")


def _outcome_batches(n, desc):
    """Yield (codes, bits) blocks covering 0..2^n - 1 in order."""
    total = 1 << n
    step = 1 << min(n, BATCH_BITS)
    shifts = np.arange(n)
    for start in progress(range(0, total, step), desc=desc, total=-(-total // step)):
        codes = np.arange(start, min(start + step, total), dtype=np.int64)
        yield codes, ((codes[:, None] >> shifts) & 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class GeneralMarginalModel:
    """Node marginals and pairwise joints on any simple graph, cycles allowed."""

    ids: tuple
    p: np.ndarray = field(repr=False)
    edges: tuple = ()
    p11: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.ids)

    @classmethod
    def build(cls, nodes, edges):
        marginals = {}
        for node_id, p in nodes:
            if node_id in marginals:
                raise DuplicateNode(f"node {node_id} listed twice")
            p = float(p)
            if not 0.0 <= p <= 1.0:
                raise ProbabilityOutOfRange(f"p[{node_id}] = {p!r} is outside [0, 1]")
            marginals[node_id] = p
        ids = tuple(sorted(marginals))
        position = {node_id: i for i, node_id in enumerate(ids)}
        pairs, joints, seen = [], [], set()
        for a, b, p11 in edges:
            if a not in position or b not in position:
                raise UnknownNode(f"edge {a}-{b} references an unknown node")
            key = frozenset((a, b))
            if key in seen or a == b:
                raise DuplicateEdge(f"edge {a}-{b} listed twice or is a loop")
            seen.add(key)
            pi, pj, pij = marginals[a], marginals[b], float(p11)
            if pij > min(pi, pj) + settings.FRECHET_TOL:
                raise FrechetViolation((a, b), "p11 <= min(p_i, p_j)")
            if pij < max(0.0, pi + pj - 1.0) - settings.FRECHET_TOL:
                raise FrechetViolation((a, b), "p11 >= p_i + p_j - 1")
            pairs.append((position[a], position[b]))
            joints.append(pij)
        return cls(ids, np.array([marginals[i] for i in ids]), tuple(pairs), np.array(joints))

    @classmethod
    def from_tree(cls, tree):
        return cls(
            ids=tree.ids,
            p=np.array(tree.p),
            edges=tuple(tree.edges),
            p11=np.array([tree.p11[j] for _, j in tree.edges]),
        )


def load_general_model(path):
    doc = GeneralModelSchema.model_validate(read_json(path))
    return GeneralMarginalModel.build(
        [(node.id, node.p) for node in doc.nodes],
        [(edge.parent, edge.child, edge.p11) for edge in doc.edges],
    )


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """theta[c] for every outcome code c of ``ids``."""

    ids: tuple
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.theta) != 1 << len(self.ids):
            raise ValueError("theta must have one entry per outcome")
        if np.any(self.theta < -1e-9) or abs(math.fsum(self.theta) - 1.0) > 1e-9:
            raise ValueError("theta is not a probability distribution")

    def _bits(self):
        codes = np.arange(len(self.theta), dtype=np.int64)
        return (codes[:, None] >> np.arange(len(self.ids))) & 1

    def marginal(self, node_id):
        i = self.ids.index(node_id)
        return math.fsum(self.theta[self._bits()[:, i] == 1])

    def joint(self, a, b):
        bits = self._bits()
        i, j = self.ids.index(a), self.ids.index(b)
        return math.fsum(self.theta[(bits[:, i] == 1) & (bits[:, j] == 1)])

    def count_pmf(self):
        counts = self._bits().sum(axis=1)
        return np.array(
            [math.fsum(self.theta[counts == s]) for s in range(len(self.ids) + 1)]
        )


@dataclass(frozen=True, eq=False)
class OracleResult:
    status: Status
    value: float = np.nan
    witness: Optional[JointDistribution] = None
    iterations: int = 0

    @property
    def feasible(self):
        return self.status is Status.OPTIMAL


def oracle_problem(model, weights, sense):
    """max/min sum_c weights[|c|] theta(c) subject to the model's marginal rows."""
    n = model.n
    _check_size(n)
    # total mass row
    rows = [scipy.sparse.csr_matrix(np.ones((1, 1 << n)))]
    b = [1.0]
    objective = np.empty(1 << n)
    node_rows = [[] for _ in range(n)]
    edge_rows = [[] for _ in model.edges]

    # Collect, per marginal, the outcome columns where it is switched on
    for codes, bits in _outcome_batches(n, "oracle rows"):
        objective[codes] = weights[bits.sum(axis=1)]
        for i in range(n):
            node_rows[i].append(codes[bits[:, i] == 1])
        for e, (i, j) in enumerate(model.edges):
            edge_rows[e].append(codes[(bits[:, i] & bits[:, j]) == 1])

    # one equality row per node marginal, then per edge joint
    for cols, rhs in zip(node_rows + edge_rows, list(model.p) + list(model.p11)):
        cols = np.concatenate(cols)
        rows.append(
            scipy.sparse.csr_matrix(
                (np.ones(len(cols)), (np.zeros(len(cols), dtype=int), cols)), shape=(1, 1 << n)
            )
        )
        b.append(float(rhs))
    A = scipy.sparse.vstack(rows).tocsr()
    return LPProblem(
        sense=sense,
        c=objective,
        A=A,
        relations=(Relation.EQ,) * A.shape[0],
        b=np.array(b),
        lower=np.zeros(1 << n),
        upper=np.full(1 << n, np.inf),
    )


def oracle_bound(model, k=None, direction=Direction.UPPER, weights=None, config=None):
    """
    Exact max (upper) or min (lower) over all distributions matching ``model``
    of P(sum c >= k), or of sum_s weights[s] P(sum c = s) when ``weights``
    is given.

    Args:
        model: marginals on any graph, cycles allowed
        k: cardinality threshold; ignored when ``weights`` is given
        direction: Direction.UPPER or Direction.LOWER
        weights: one weight per count 0..n
        config: solver settings

    Raises InvalidInput when neither ``k`` nor ``weights`` is given or the
    weights have the wrong length, and SizeCap beyond ORACLE_MAX_N variables.
    """
    n = model.n
    _check_size(n)

    # Indicator weights turn the tail query into a weighted one
    if weights is None:
        if k is None:
            raise InvalidInput("oracle_bound needs either k or weights")
        weights = np.array([1.0 if s >= k else 0.0 for s in range(n + 1)])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n + 1,):
        raise InvalidInput(f"expected {n + 1} weights for {n} variables, got shape {weights.shape}")

    # One LP column per outcome in {0,1}^n
    sense = Sense.MAX if Direction(direction) is Direction.UPPER else Sense.MIN
    problem = oracle_problem(model, weights, sense)
    solution = solve(problem, config or SolverConfig.from_settings())
    logger.info(f"oracle on {n} variables: {solution.status.value}")
    if not solution.optimal:
        return OracleResult(solution.status, iterations=solution.iterations)

    # Clip solver noise so the witness is a distribution
    theta = np.maximum(np.asarray(solution.x), 0.0)
    theta = theta / math.fsum(theta)
    return OracleResult(
        status=Status.OPTIMAL,
        value=solution.objective,
        witness=JointDistribution(model.ids, theta),
        iterations=solution.iterations,
    )


def qkp_enumerate(inst):
    """Brute-force minimum of the cardinality-constrained tree knapsack."""
    tree = inst.tree
    n = tree.n
    _check_size(n)
    if inst.k > n:
        raise InfeasibleCardinality(f"cannot select {inst.k} of {n} nodes")
    best = np.inf
    # outcomes below the cardinality are skipped batch by batch
    for _, bits in _outcome_batches(n, "knapsack enumeration"):
        chosen = bits[bits.sum(axis=1) >= inst.k].astype(float)
        if not len(chosen):
            continue
        values = chosen @ inst.alpha
        for i, j in tree.edges:
            values = values + inst.beta[j] * chosen[:, i] * chosen[:, j]
        best = min(best, float(values.min()))
    return best


def ci_probabilities(tree, tol=1e-12):
    """Product-form probability of every outcome under the conditionally independent model."""
    n = tree.n
    _check_size(n)
    out = np.empty(1 << n)
    for codes, bits in _outcome_batches(n, "ci enumeration"):
        root = tree.root
        prob = np.where(bits[:, root] == 1, tree.p[root], 1.0 - tree.p[root])
        # multiply in P(child | parent) along every edge
        for i, j in tree.edges:
            table = EdgeBivariate.from_marginals(tree.p[i], tree.p[j], tree.p11[j])
            parent_mass = (1.0 - tree.p[i], tree.p[i])
            factor = np.zeros((2, 2))
            for y in (0, 1):
                for y_child in (0, 1):
                    cell = table.cell(y, y_child)
                    if parent_mass[y] > 0.0:
                        factor[y, y_child] = cell / parent_mass[y]
                    elif cell > tol:
                        raise DegenerateConditioning(
                            f"edge {tree.ids[i]}-{tree.ids[j]} conditions on a zero-mass event"
                        )
            prob = prob * factor[bits[:, i], bits[:, j]]
        out[codes] = prob
    return out


def ci_enumerate(tree, k):
    probabilities = ci_probabilities(tree)
    codes = np.arange(len(probabilities), dtype=np.int64)
    counts = ((codes[:, None] >> np.arange(tree.n)) & 1).sum(axis=1)
    return math.fsum(probabilities[counts >= k])
