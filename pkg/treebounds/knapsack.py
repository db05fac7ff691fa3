"""
Cardinality-constrained quadratic knapsack on a tree.

Two independent routes to the same quantity

    min  sum_i alpha_i c_i + sum_(i,j) beta_ij c_i c_j   over c in {0,1}^n, sum c >= k

are provided: ``solve_qkp`` runs the min-plus tree DP numerically, and
``emit_knapsack_block`` writes the DP recursions as linear inequalities over
symbolic variables x[i, s, y, t] so they can sit inside a larger LP.

State (i, s, y, t) is the best cost over the subtree made of node ``i`` and
its first ``s`` child subtrees, with ``c_i = y`` and exactly ``t`` nodes
selected. It is admissible only for t in [y, N(i, s) - 1 + y].
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import InfeasibleCardinality
from .lp import Relation

logger = logging.getLogger(__name__)

CASES = {1: (0, 0), 2: (0, 1), 3: (1, 0), 4: (1, 1)}


@dataclass(frozen=True, eq=False)
class KnapsackInstance:
    """
    ``alpha`` is indexed densely like ``tree.ids``; ``beta[j]`` is the cost of
    the edge above dense node ``j`` (the root entry is ignored).
    """

    tree: object
    alpha: np.ndarray
    beta: np.ndarray
    k: int

    def __post_init__(self):
        n = self.tree.n
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float).copy()
        if alpha.shape != (n,) or beta.shape != (n,):
            raise ValueError(f"alpha and beta must have {n} entries")
        beta[self.tree.root] = 0.0
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise ValueError("knapsack costs must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_mappings(cls, tree, alpha, beta, k):
        """Build from {node id: alpha} and {(a, b): beta} keyed by tree edges."""
        dense_alpha = np.array([alpha[node_id] for node_id in tree.ids], dtype=float)
        dense_beta = np.zeros(tree.n)
        seen = set()
        for (a, b), value in beta.items():
            j = tree.edge_key(tree.position[a], tree.position[b])
            if j in seen:
                raise ValueError(f"edge {a}-{b} given twice")
            seen.add(j)
            dense_beta[j] = value
        if len(seen) != tree.n - 1:
            raise ValueError("beta must give one value per tree edge")
        return cls(tree, dense_alpha, dense_beta, k)

    def objective(self, selection):
        """Cost of a 0/1 selection ordered like ``tree.ids``."""
        c = np.asarray(selection, dtype=float)
        value = float(self.alpha @ c)
        for i, j in self.tree.edges:
            value += self.beta[j] * c[i] * c[j]
        return value


def _split_range(n_prev, n_child, t, case):
    if case == 1:
        return max(0, t - (n_prev - 1)), min(n_child - 1, t)
    if case == 2:
        return max(1, t - (n_prev - 1)), min(n_child, t)
    if case == 3:
        return max(0, t - n_prev), min(n_child - 1, t - 1)
    if case == 4:
        return max(1, t - n_prev), min(n_child, t - 1)
    raise ValueError(f"case must be 1..4, got {case!r}")


def admissible_ranges(tree, node_id, s, t, case):
    """
    Range (a_min, a_max) of the number ``a`` of nodes selected inside the
    s-th child subtree when (i, s, y, t) is split into (i, s-1, y, t-a) and
    that child's full subtree. ``case`` 1..4 stands for (c_i, c_child) in
    00, 01, 10, 11. An empty range has a_min > a_max.
    """
    i = tree.position[node_id]
    if not 1 <= s <= tree.index.degree[i]:
        raise ValueError(f"node {node_id} has no child number {s}")
    child = tree.children[i][s - 1]
    return _split_range(tree.index.counts[i][s - 1], tree.index.size(child), t, case)


@dataclass(frozen=True, eq=False)
class DpTable:
    """
    ``values[(i, s)]`` is a (2, N(i, s) + 1) array over (y, t) with +inf at
    inadmissible entries; ``choices[(i, s)]`` holds the (y_child, a) argmin
    used to reach each entry from (i, s - 1).
    """

    instance: KnapsackInstance
    values: dict = field(repr=False)
    choices: dict = field(repr=False)

    def value(self, node_id, s, y, t):
        tree = self.instance.tree
        row = self.values[(tree.position[node_id], s)][y]
        return float(row[t]) if 0 <= t < len(row) else np.inf

    def backtrack(self, y, t):
        tree = self.instance.tree
        degree = tree.index.degree
        selection = np.zeros(tree.n, dtype=int)
        stack = [(tree.root, degree[tree.root], y, t)]
        while stack:
            i, s, y, t = stack.pop()
            if s == 0:
                selection[i] = y
                continue
            child = tree.children[i][s - 1]
            y_child, a = self.choices[(i, s)][y, t]
            stack.append((child, degree[child], int(y_child), int(a)))
            stack.append((i, s - 1, y, t - int(a)))
        return selection

    def to_frame(self):
        tree = self.instance.tree
        records = []
        for (i, s), table in sorted(self.values.items()):
            for y in (0, 1):
                for t in range(y, tree.index.counts[i][s] + y):
                    records.append((tree.ids[i], s, y, t, float(table[y, t])))
        return pd.DataFrame(records, columns=["i", "s", "y", "t", "value"])

    def to_csv(self, path_or_buf):
        self.to_frame().to_csv(path_or_buf, index=False)


def _merge_child(f, g, beta):
    """Min-plus convolution of a partial table ``f`` with a child's full table ``g``."""
    n_f, n_g = f.shape[1], g.shape[1]
    out = np.full((2, n_f + n_g - 1), np.inf)
    choice = np.full((2, n_f + n_g - 1, 2), -1, dtype=int)
    for y in (0, 1):
        for y_child in (0, 1):
            extra = beta if y == 1 and y_child == 1 else 0.0
            for a in range(n_g):
                if not np.isfinite(g[y_child, a]):
                    continue
                candidate = f[y] + (g[y_child, a] + extra)
                window = out[y, a : a + n_f]
                better = candidate < window
                window[better] = candidate[better]
                choice[y, a : a + n_f][better] = (y_child, a)
    return out, choice


def build_dp_table(inst):
    tree = inst.tree
    values, choices, full = {}, {}, {}
    for i in tree.index.postorder:
        f = np.full((2, 2), np.inf)
        f[0, 0] = 0.0
        f[1, 1] = inst.alpha[i]
        values[(i, 0)] = f
        for s, child in enumerate(tree.children[i], start=1):
            f, choice = _merge_child(f, full[child], inst.beta[child])
            values[(i, s)] = f
            choices[(i, s)] = choice
        full[i] = f
    return DpTable(inst, values, choices)


def solve_qkp(inst):
    """Optimal value and one optimal 0/1 selection (ordered like ``tree.ids``)."""
    tree = inst.tree
    n = tree.n
    if inst.k > n:
        raise InfeasibleCardinality(f"cannot select {inst.k} of {n} nodes")
    table = build_dp_table(inst)
    root = table.values[(tree.root, tree.index.degree[tree.root])]
    best, state = np.inf, None
    for t in range(max(inst.k, 0), n + 1):
        for y in (0, 1):
            if root[y, t] < best:
                best, state = float(root[y, t]), (y, t)
    return best, table.backtrack(*state)


# Symbolic block


@dataclass(frozen=True)
class BlockRow:
    coeffs: dict
    relation: Relation
    rhs: float
    name: str

    def slack(self, values):
        """Signed slack at ``values``; negative means violated."""
        activity = sum(v * values[key] for key, v in self.coeffs.items())
        if self.relation is Relation.GE:
            return activity - self.rhs
        if self.relation is Relation.LE:
            return self.rhs - activity
        return -abs(activity - self.rhs)


@dataclass(frozen=True)
class ConstraintBlock:
    """Rows over symbolic keys; every key in ``variables`` is a free variable."""

    rows: tuple
    variables: tuple

    def add_to(self, builder):
        for key in self.variables:
            if key not in builder:
                builder.variable(key)
        for row in self.rows:
            builder.add_row(
                {builder.index(key): v for key, v in row.coeffs.items()},
                row.relation,
                row.rhs,
                row.name,
            )

    def worst_row(self, values):
        """(slack, row name) of the most violated row."""
        return min(((row.slack(values), row.name) for row in self.rows), default=(np.inf, ""))


def x_key(i, s, y, t):
    return ("x", i, s, y, t)


def alpha_key(i):
    return ("alpha", i)


def beta_key(j):
    return ("beta", j)


def emit_knapsack_block(tree, k, rhs_per_t=None):
    """
    Emit the DP recursions as constraints over x, alpha, beta and the root
    linking variables.

    ``rhs_per_t`` selects the linking form:

    - None: a single ``z`` with x[root, d, y, t] - z >= 0 for t >= k, so that
      maximizing z over fixed alpha, beta gives the knapsack optimum;
    - a scalar r: the same rows plus lambda + z >= r;
    - a vector w of length n + 1: one z_t per cardinality t in [0, n], rows
      x[root, d, y, t] - z_t >= 0 and lambda + z_t >= w[t].
    """
    n = tree.n
    counts = tree.index.counts
    degree = tree.index.degree
    names = tree.ids
    rows = []
    variables = {}

    def declare(key):
        variables.setdefault(key, None)
        return key

    def row(coeffs, relation, rhs, name):
        for key in coeffs:
            declare(key)
        rows.append(BlockRow(dict(coeffs), Relation(relation), float(rhs), name))

    for i in range(n):
        declare(alpha_key(i))
    for _, j in tree.edges:
        declare(beta_key(j))

    for i in range(n):
        for s in range(degree[i] + 1):
            row({x_key(i, s, 0, 0): 1.0}, "=", 0.0, f"base0[{names[i]},{s}]")
            row({x_key(i, s, 1, 1): 1.0, alpha_key(i): -1.0}, "=", 0.0, f"base1[{names[i]},{s}]")
            for y in (0, 1):
                for t in range(y, counts[i][s] + y):
                    declare(x_key(i, s, y, t))

    for i in range(n):
        if not degree[i]:
            continue
        child = tree.children[i][0]
        dc = degree[child]
        size = counts[i][1]
        label = f"{names[i]},1"
        for t in range(0, size - 1):
            row({x_key(child, dc, 0, t): 1.0, x_key(i, 1, 0, t): -1.0}, ">=", 0.0, f"first00[{label},{t}]")
        for t in range(1, size):
            row({x_key(child, dc, 1, t): 1.0, x_key(i, 1, 0, t): -1.0}, ">=", 0.0, f"first01[{label},{t}]")
        for t in range(1, size):
            row(
                {x_key(child, dc, 0, t - 1): 1.0, x_key(i, 1, 1, t): -1.0, alpha_key(i): 1.0},
                ">=",
                0.0,
                f"first10[{label},{t}]",
            )
        for t in range(2, size + 1):
            row(
                {
                    x_key(child, dc, 1, t - 1): 1.0,
                    x_key(i, 1, 1, t): -1.0,
                    alpha_key(i): 1.0,
                    beta_key(child): 1.0,
                },
                ">=",
                0.0,
                f"first11[{label},{t}]",
            )

        for s in range(2, degree[i] + 1):
            child = tree.children[i][s - 1]
            dc = degree[child]
            n_prev, n_child, size = counts[i][s - 1], counts[child][dc], counts[i][s]
            t_ranges = {1: (0, size - 2), 2: (1, size - 1), 3: (1, size - 1), 4: (2, size)}
            for case, (y, y_child) in CASES.items():
                t_lo, t_hi = t_ranges[case]
                for t in range(t_lo, t_hi + 1):
                    a_lo, a_hi = _split_range(n_prev, n_child, t, case)
                    for a in range(a_lo, a_hi + 1):
                        coeffs = {
                            x_key(i, s - 1, y, t - a): 1.0,
                            x_key(child, dc, y_child, a): 1.0,
                            x_key(i, s, y, t): -1.0,
                        }
                        if case == 4:
                            coeffs[beta_key(child)] = 1.0
                        row(coeffs, ">=", 0.0, f"split{y}{y_child}[{names[i]},{s},{t},{a}]")

    root, d_root = tree.root, degree[tree.root]
    if rhs_per_t is None or np.isscalar(rhs_per_t):
        z = declare(("z",))
        for t in range(max(k, 0), n + 1):
            for y in (0, 1):
                if y <= t <= n - 1 + y:
                    row({x_key(root, d_root, y, t): 1.0, z: -1.0}, ">=", 0.0, f"link{y}[{t}]")
        if rhs_per_t is not None:
            row({("lambda",): 1.0, z: 1.0}, ">=", float(rhs_per_t), "cover")
    else:
        w = np.asarray(rhs_per_t, dtype=float)
        if w.shape != (n + 1,):
            raise ValueError(f"per-cardinality rhs must have {n + 1} entries")
        for t in range(n + 1):
            z = declare(("z", t))
            for y in (0, 1):
                if y <= t <= n - 1 + y:
                    row({x_key(root, d_root, y, t): 1.0, z: -1.0}, ">=", 0.0, f"link{y}[{t}]")
            row({("lambda",): 1.0, z: 1.0}, ">=", w[t], f"cover[{t}]")

    logger.debug(f"knapsack block for {tree}: {len(variables)} variables, {len(rows)} rows")
    return ConstraintBlock(tuple(rows), tuple(variables))
