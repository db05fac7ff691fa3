import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np
import pandas as pd

from . import settings
from .exceptions import (
    CycleDetected,
    Disconnected,
    DuplicateEdge,
    DuplicateNode,
    FrechetViolation,
    ProbabilityOutOfRange,
    TreeStructureError,
    UnknownNode,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EdgeBivariate:
    """The four cells of one edge's bivariate Bernoulli table."""

    p11: float
    p10: float
    p01: float
    p00: float

    @classmethod
    def from_marginals(cls, pi, pj, pij):
        return cls(
            p11=pij,
            p10=pi - pij,
            p01=pj - pij,
            p00=1.0 - pi - pj + pij,
        )

    def cell(self, yi, yj):
        return (self.p00, self.p01, self.p10, self.p11)[2 * yi + yj]

    def __str__(self):
        return f"EdgeBivariate(11={self.p11}, 10={self.p10}, 01={self.p01}, 00={self.p00})"


@dataclass(frozen=True)
class SubtreeIndex:
    """
    Subtree bookkeeping for a rooted ordered tree, on dense node indices.

    ``counts[i][s]`` is N(i, s), the size of the subtree rooted at ``i`` made
    of ``i`` and its first ``s`` child subtrees; ``vertices[i][s]`` is V(i, s).
    """

    degree: tuple
    counts: tuple
    vertices: tuple
    postorder: tuple

    @classmethod
    def build(cls, root, children):
        n = len(children)
        # Iterative DFS; a node is emitted after all of its children
        postorder = []
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                postorder.append(node)
                continue
            stack.append((node, True))
            for child in reversed(children[node]):
                stack.append((child, False))

        counts = [None] * n
        vertices = [None] * n
        # N(i, s) = N(i, s - 1) + N(child_s, full), likewise for V
        for node in postorder:
            node_counts = [1]
            node_vertices = [frozenset((node,))]
            for child in children[node]:
                node_counts.append(node_counts[-1] + counts[child][-1])
                node_vertices.append(node_vertices[-1] | vertices[child][-1])
            counts[node] = tuple(node_counts)
            vertices[node] = tuple(node_vertices)

        return cls(
            degree=tuple(len(c) for c in children),
            counts=tuple(counts),
            vertices=tuple(vertices),
            postorder=tuple(postorder),
        )

    def size(self, i, s=None):
        """N(i, s); ``s`` defaults to the full out-degree."""
        return self.counts[i][self.degree[i] if s is None else s]


@dataclass(frozen=True, eq=False)
class TreeModel:
    """
    Rooted ordered tree carrying node marginals P(c_i = 1) and, for every
    edge, the joint P(c_parent = 1, c_child = 1).

    Nodes are held on dense indices ``0..n-1``; ``ids`` maps them back to the
    caller's node ids. The joint of the edge above node ``j`` is stored at
    ``base_p11[j]`` (NaN at the root).

    A complemented model (q_i = 1 - p_i, q_ij = P(c_i = 0, c_j = 0)) keeps the
    original arrays and flips ``complemented``, so complementing twice gives
    back the original values exactly.
    """

    ids: tuple
    root: int
    parent: tuple
    children: tuple
    base_p: np.ndarray = field(repr=False)
    base_p11: np.ndarray = field(repr=False)
    index: SubtreeIndex = field(repr=False)
    complemented: bool = False

    @property
    def n(self):
        return len(self.ids)

    @property
    def root_id(self):
        return self.ids[self.root]

    @cached_property
    def position(self):
        return {node_id: i for i, node_id in enumerate(self.ids)}

    @cached_property
    def p(self):
        values = 1.0 - self.base_p if self.complemented else self.base_p.copy()
        values.setflags(write=False)
        return values

    @cached_property
    def p11(self):
        if not self.complemented:
            values = self.base_p11.copy()
        else:
            values = np.full(self.n, np.nan)
            for i, j in self.edges:
                values[j] = 1.0 - self.base_p[i] - self.base_p[j] + self.base_p11[j]
        values.setflags(write=False)
        return values

    @cached_property
    def edges(self):
        """(parent, child) dense pairs, ordered by child index."""
        return tuple((self.parent[j], j) for j in range(self.n) if j != self.root)

    def edge_key(self, i, j):
        """Dense child index of the edge joining dense nodes ``i`` and ``j``."""
        if self.parent[j] == i:
            return j
        if self.parent[i] == j:
            return i
        raise KeyError(f"no edge between {self.ids[i]} and {self.ids[j]}")

    def marginal(self, node_id):
        return float(self.p[self.position[node_id]])

    def joint(self, a, b):
        """P(c_a = 1, c_b = 1) for the edge {a, b}, in either orientation."""
        return float(self.p11[self.edge_key(self.position[a], self.position[b])])

    def bivariate(self, a, b):
        i, j = self.position[a], self.position[b]
        key = self.edge_key(i, j)
        return EdgeBivariate.from_marginals(self.p[i], self.p[j], self.p11[key])

    def children_of(self, node_id):
        return [self.ids[c] for c in self.children[self.position[node_id]]]

    def degree(self, node_id):
        return self.index.degree[self.position[node_id]]

    def subtree_size(self, node_id, s):
        return self.index.counts[self.position[node_id]][s]

    def subtree_vertices(self, node_id, s):
        return {self.ids[v] for v in self.index.vertices[self.position[node_id]][s]}

    def to_dict(self):
        return {
            "root": self.root_id,
            "nodes": [{"id": self.ids[i], "p": float(self.p[i])} for i in range(self.n)],
            "edges": [
                {"parent": self.ids[i], "child": self.ids[j], "p11": float(self.p11[j])}
                for i, j in self.edges
            ],
            "ordering": {
                str(self.ids[i]): [self.ids[c] for c in self.children[i]]
                for i in range(self.n)
                if self.children[i]
            },
        }

    def __str__(self):
        kind = "complemented tree" if self.complemented else "tree"
        return f"{kind} on {self.n} nodes rooted at {self.root_id}"


@dataclass(frozen=True)
class EdgeSlack:
    parent: int
    child: int
    lower_slack: float
    upper_slack: float

    @property
    def ok(self):
        tol = settings.FRECHET_TOL
        return self.lower_slack >= -tol and self.upper_slack >= -tol

    def describe(self):
        if self.upper_slack < -settings.FRECHET_TOL:
            return f"edge {self.parent}-{self.child}: p11 > min(p_i, p_j) by {-self.upper_slack:.3g}"
        if self.lower_slack < -settings.FRECHET_TOL:
            return f"edge {self.parent}-{self.child}: p11 < p_i + p_j - 1 by {-self.lower_slack:.3g}"
        return f"edge {self.parent}-{self.child}: ok"


@dataclass(frozen=True)
class ConsistencyReport:
    edges: tuple

    @property
    def ok(self):
        return all(e.ok for e in self.edges)

    def violations(self):
        return [e for e in self.edges if not e.ok]

    def to_frame(self):
        return pd.DataFrame(
            [(e.parent, e.child, e.lower_slack, e.upper_slack, e.ok) for e in self.edges],
            columns=["parent", "child", "lower_slack", "upper_slack", "ok"],
        )

    def __str__(self):
        lines = [e.describe() for e in self.edges]
        lines.append("consistent" if self.ok else f"{len(self.violations())} violation(s)")
        return "\n".join(lines)


def _frechet_slacks(pi, pj, pij):
    return pij - max(0.0, pi + pj - 1.0), min(pi, pj) - pij


def _check_probability(value, what):
    if not math.isfinite(value):
        raise ProbabilityOutOfRange(f"{what} is not finite: {value!r}")
    tol = settings.FRECHET_TOL
    if value < -tol or value > 1.0 + tol:
        raise ProbabilityOutOfRange(f"{what} = {value!r} is outside [0, 1]")
    return min(1.0, max(0.0, value))


def build_tree(nodes, edges, root, ordering=None, validate=True):
    """
    Build a validated TreeModel.

    Args:
        nodes: iterable of (id, p)
        edges: iterable of (parent, child, p11); an edge given against the
            root orientation is flipped, the joint being symmetric
        root: id of the root node
        ordering: optional {parent id: [child ids]} fixing the child order;
            children default to ascending id
        validate: check Frechet bounds on every edge
    """
    marginals = {}
    for node_id, p in nodes:
        if node_id in marginals:
            raise DuplicateNode(f"node {node_id} listed twice")
        marginals[node_id] = _check_probability(float(p), f"p[{node_id}]")
    if root not in marginals:
        raise UnknownNode(f"root {root} is not a node")

    # Undirected structure first; orientation comes from the root
    graph = nx.Graph()
    graph.add_nodes_from(marginals)
    joints = {}
    for a, b, p11 in edges:
        for end in (a, b):
            if end not in marginals:
                raise UnknownNode(f"edge {a}-{b} references unknown node {end}")
        if a == b:
            raise CycleDetected(f"self-loop on node {a}")
        if graph.has_edge(a, b):
            raise DuplicateEdge(f"edge {a}-{b} listed twice")
        graph.add_edge(a, b)
        joints[frozenset((a, b))] = _check_probability(float(p11), f"p11[{a}-{b}]")

    cycles = nx.cycle_basis(graph)
    if cycles:
        raise CycleDetected(f"cycle through nodes {sorted(cycles[0])}")
    if not nx.is_connected(graph):
        reached = nx.node_connected_component(graph, root)
        missing = sorted(set(marginals) - reached)
        raise Disconnected(f"nodes {missing} are not reachable from root {root}")

    # Orient every edge away from the root
    parent_of = dict(nx.bfs_predecessors(graph, root))
    for a, b, _ in edges:
        if parent_of.get(b) != a:
            logger.debug(f"edge {a}-{b} re-oriented away from root {root}")

    ids = tuple(sorted(marginals))
    position = {node_id: i for i, node_id in enumerate(ids)}
    n = len(ids)

    # Children in ascending id unless an explicit ordering overrides it
    child_ids = {node_id: [] for node_id in ids}
    for child, par in parent_of.items():
        child_ids[par].append(child)
    for par in child_ids:
        child_ids[par].sort()
    for par, order in (ordering or {}).items():
        par = int(par)
        if par not in child_ids:
            raise UnknownNode(f"ordering given for unknown node {par}")
        if sorted(order) != child_ids[par] or len(set(order)) != len(order):
            raise TreeStructureError(
                f"ordering for node {par} must list exactly its children {child_ids[par]}"
            )
        child_ids[par] = list(order)

    # Dense arrays; p11 is stored on the child, NaN at the root
    parent = [-1] * n
    children = [()] * n
    base_p = np.empty(n)
    base_p11 = np.full(n, np.nan)
    for node_id in ids:
        i = position[node_id]
        base_p[i] = marginals[node_id]
        children[i] = tuple(position[c] for c in child_ids[node_id])
        for c in children[i]:
            parent[c] = i
            base_p11[c] = joints[frozenset((node_id, ids[c]))]

    if validate:
        for j in range(n):
            if parent[j] < 0:
                continue
            i = parent[j]
            lower, upper = _frechet_slacks(base_p[i], base_p[j], base_p11[j])
            if upper < -settings.FRECHET_TOL:
                raise FrechetViolation((ids[i], ids[j]), "p11 <= min(p_i, p_j)")
            if lower < -settings.FRECHET_TOL:
                raise FrechetViolation((ids[i], ids[j]), "p11 >= p_i + p_j - 1")

    base_p.setflags(write=False)
    base_p11.setflags(write=False)
    root_index = position[root]
    tree = TreeModel(
        ids=ids,
        root=root_index,
        parent=tuple(parent),
        children=tuple(children),
        base_p=base_p,
        base_p11=base_p11,
        index=SubtreeIndex.build(root_index, children),
    )
    logger.debug(f"built {tree}")
    return tree


def validate_marginals(tree):
    """Per-edge Frechet slack report; never raises."""
    slacks = []
    for i, j in tree.edges:
        lower, upper = _frechet_slacks(tree.p[i], tree.p[j], tree.p11[j])
        slacks.append(EdgeSlack(tree.ids[i], tree.ids[j], float(lower), float(upper)))
    return ConsistencyReport(tuple(slacks))


def complement(tree):
    """The model of the flipped variables 1 - c_i on the same topology."""
    return TreeModel(
        ids=tree.ids,
        root=tree.root,
        parent=tree.parent,
        children=tree.children,
        base_p=tree.base_p,
        base_p11=tree.base_p11,
        index=tree.index,
        complemented=not tree.complemented,
    )


def with_probabilities(tree, p, p11, x=None):
    """Same topology as ``tree`` with new marginals and edge joints.

    ``p`` is indexed densely; ``p11[j]`` is the joint on the edge above ``j``.
    """
    nodes = [(tree.ids[i], float(p[i])) for i in range(tree.n)]
    edges = [(tree.ids[i], tree.ids[j], float(p11[j])) for i, j in tree.edges]
    ordering = {tree.ids[i]: [tree.ids[c] for c in tree.children[i]] for i in range(tree.n)}
    try:
        return build_tree(nodes, edges, tree.root_id, ordering=ordering)
    except FrechetViolation as e:
        if x is None:
            raise
        raise FrechetViolation(e.edge, e.inequality, x=x) from e


def series_tree(p, p11):
    """Series graph 1-2-...-n; ``p11[i]`` is the joint of nodes i+1 and i+2."""
    nodes = [(i + 1, pi) for i, pi in enumerate(p)]
    edges = [(i + 1, i + 2, q) for i, q in enumerate(p11)]
    return build_tree(nodes, edges, root=1)


def star_tree(p, p11):
    """Star graph centred at node 1; ``p11[i]`` is the joint of nodes 1 and i+2."""
    nodes = [(i + 1, pi) for i, pi in enumerate(p)]
    edges = [(1, i + 2, q) for i, q in enumerate(p11)]
    return build_tree(nodes, edges, root=1)
