"""
Distribution of the number of successes under the conditionally independent
tree model: the root marginal times one child-given-parent conditional per
edge.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateConditioning
from .models import EdgeBivariate

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CiTable:
    """
    ``values[(i, s)][y, t]`` is P(sum over T(i, s) = t, c_i = y), on dense
    node indices, for t in [0, N(i, s)].
    """

    tree: object
    values: dict = field(repr=False)

    def value(self, node_id, s, y, t):
        row = self.values[(self.tree.position[node_id], s)][y]
        return float(row[t]) if 0 <= t < len(row) else 0.0

    def pmf(self):
        root = self.values[(self.tree.root, self.tree.index.degree[self.tree.root])]
        return root[0] + root[1]


def _transition(tree, i, child, tol):
    """Factors P(c_i = y, c_child = y') / (P(c_i = y) P(c_child = y')) as a 2x2 array."""
    pi, pc = float(tree.p[i]), float(tree.p[child])
    table = EdgeBivariate.from_marginals(pi, pc, float(tree.p11[child]))
    parent_mass = (1.0 - pi, pi)
    child_mass = (1.0 - pc, pc)
    factors = np.zeros((2, 2))
    for y in (0, 1):
        for y_child in (0, 1):
            cell = table.cell(y, y_child)
            mass = parent_mass[y] * child_mass[y_child]
            if mass > 0.0:
                factors[y, y_child] = cell / mass
            elif cell > tol:
                raise DegenerateConditioning(
                    f"edge {tree.ids[i]}-{tree.ids[child]} puts mass {cell!r} on "
                    f"({y}, {y_child}) although a marginal of that event is zero"
                )
            else:
                logger.debug(
                    f"edge {tree.ids[i]}-{tree.ids[child]}: zero-mass conditioning on ({y}, {y_child})"
                )
    return factors


def ci_table(tree, tol=1e-12):
    values, full = {}, {}
    for i in tree.index.postorder:
        pi = float(tree.p[i])
        w = np.array([[1.0 - pi, 0.0], [0.0, pi]])
        values[(i, 0)] = w
        for s, child in enumerate(tree.children[i], start=1):
            g = full[child]
            factors = _transition(tree, i, child, tol)
            merged = np.zeros((2, w.shape[1] + g.shape[1] - 1))
            for y in (0, 1):
                for y_child in (0, 1):
                    if factors[y, y_child]:
                        merged[y] += factors[y, y_child] * np.convolve(w[y], g[y_child])
            w = merged
            values[(i, s)] = w
        full[i] = w
    return CiTable(tree, values)


def ci_pmf(tree):
    """pmf of the number of successes, indexed 0..n."""
    return ci_table(tree).pmf()


def ci_tail(tree, k):
    if k <= 0:
        return 1.0
    if k > tree.n:
        return 0.0
    return float(ci_pmf(tree)[k:].sum())
