import io

import numpy as np
import pandas as pd
import pytest

from treebounds.exceptions import InfeasibleCardinality
from treebounds.experiments import random_recursive_tree
from treebounds.knapsack import (
    KnapsackInstance,
    admissible_ranges,
    build_dp_table,
    emit_knapsack_block,
    solve_qkp,
)
from treebounds.lp import LPBuilder, Relation, Sense, solve
from treebounds.models import build_tree, series_tree, star_tree
from treebounds.oracle import qkp_enumerate


def topology(edges, n):
    return build_tree([(i, 0.5) for i in range(1, n + 1)], [(a, b, 0.25) for a, b in edges], root=1)


def random_instance(rng, n=None, integer=True):
    n = n or int(rng.integers(1, 11))
    tree = topology(random_recursive_tree(n, rng), n)
    draw = (lambda size: rng.integers(-5, 6, size).astype(float)) if integer else (
        lambda size: rng.normal(size=size)
    )
    k = int(rng.integers(0, n + 1))
    return KnapsackInstance(tree, draw(n), draw(n), k)


def series_reference(alpha, beta, k):
    """Chain DP: best[t][y] over prefixes of a series graph."""
    n = len(alpha)
    best = {(0, 0): 0.0, (1, 1): alpha[0]}
    for i in range(1, n):
        step = {}
        for (t, y), value in best.items():
            for y_next in (0, 1):
                cost = value + y_next * alpha[i] + (beta[i - 1] if y and y_next else 0.0)
                key = (t + y_next, y_next)
                step[key] = min(step.get(key, np.inf), cost)
        best = step
    return min(value for (t, _), value in best.items() if t >= k)


def star_reference(alpha, beta, k):
    """With the centre fixed, leaves are taken cheapest first."""
    centre, leaves = alpha[0], np.asarray(alpha[1:], dtype=float)
    best = np.inf
    for y in (0, 1):
        costs = np.sort(leaves + (np.asarray(beta) if y else 0.0))
        for t in range(max(k - y, 0), len(costs) + 1):
            best = min(best, y * centre + costs[:t].sum())
    return best


class TestAdmissibleRanges:
    def test_star_examples(self):
        star = topology([(1, 2), (1, 3)], 3)
        assert admissible_ranges(star, 1, 2, 1, 1) == (0, 0)
        assert admissible_ranges(star, 1, 2, 1, 2) == (1, 1)
        a_min, a_max = admissible_ranges(star, 1, 2, 0, 4)
        assert a_min > a_max

    def test_child_number_out_of_range(self):
        star = topology([(1, 2), (1, 3)], 3)
        with pytest.raises(ValueError):
            admissible_ranges(star, 1, 0, 1, 1)
        with pytest.raises(ValueError):
            admissible_ranges(star, 2, 1, 1, 1)

    def test_ranges_stay_inside_subtrees(self, rng):
        for _ in range(30):
            n = int(rng.integers(3, 12))
            tree = topology(random_recursive_tree(n, rng), n)
            for node_id in tree.ids:
                i = tree.position[node_id]
                for s in range(2, tree.index.degree[i] + 1):
                    child = tree.children[i][s - 1]
                    n_child = tree.index.size(child)
                    for t in range(tree.index.counts[i][s] + 2):
                        for case in (1, 2, 3, 4):
                            a_min, a_max = admissible_ranges(tree, node_id, s, t, case)
                            if a_min <= a_max:
                                assert 0 <= a_min and a_max <= n_child


class TestSolveQkp:
    def test_two_node_examples(self):
        tree = topology([(1, 2)], 2)
        value, selection = solve_qkp(KnapsackInstance(tree, [1.0, 2.0], [0.0, -4.0], 2))
        assert value == -1.0
        assert list(selection) == [1, 1]
        value, selection = solve_qkp(KnapsackInstance(tree, [1.0, 2.0], [0.0, -4.0], 1))
        assert value == -1.0
        value, selection = solve_qkp(KnapsackInstance(tree, [1.0, 2.0], [0.0, 5.0], 1))
        assert value == 1.0
        assert list(selection) == [1, 0]

    def test_zero_cardinality_allows_empty(self):
        tree = topology([(1, 2)], 2)
        value, selection = solve_qkp(KnapsackInstance(tree, [1.0, 2.0], [0.0, 0.0], 0))
        assert value == 0.0
        assert list(selection) == [0, 0]

    def test_infeasible_cardinality(self):
        tree = topology([(1, 2)], 2)
        with pytest.raises(InfeasibleCardinality):
            solve_qkp(KnapsackInstance(tree, [1.0, 2.0], [0.0, 0.0], 3))

    def test_matches_enumeration(self, rng):
        for _ in range(200):
            inst = random_instance(rng)
            value, selection = solve_qkp(inst)
            assert value == qkp_enumerate(inst)
            assert selection.sum() >= inst.k
            assert inst.objective(selection) == value

    def test_matches_enumeration_real_costs(self, rng):
        for _ in range(50):
            inst = random_instance(rng, integer=False)
            value, selection = solve_qkp(inst)
            assert value == pytest.approx(qkp_enumerate(inst), abs=1e-12)
            assert inst.objective(selection) == pytest.approx(value, abs=1e-12)

    def test_monotone_in_k(self, rng):
        for _ in range(30):
            inst = random_instance(rng, n=8)
            values = [
                solve_qkp(KnapsackInstance(inst.tree, inst.alpha, inst.beta, k))[0]
                for k in range(inst.tree.n + 1)
            ]
            assert all(a <= b for a, b in zip(values, values[1:]))

    def test_series_reference(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 10))
            alpha = rng.integers(-4, 5, n).astype(float)
            beta = rng.integers(-4, 5, n - 1).astype(float)
            tree = series_tree([0.5] * n, [0.25] * (n - 1))
            k = int(rng.integers(0, n + 1))
            dense_beta = np.concatenate([[0.0], beta])
            value, _ = solve_qkp(KnapsackInstance(tree, alpha, dense_beta, k))
            assert value == series_reference(alpha, beta, k)

    def test_star_reference(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 10))
            alpha = rng.integers(-4, 5, n).astype(float)
            beta = rng.integers(-4, 5, n - 1).astype(float)
            tree = star_tree([0.5] * n, [0.25] * (n - 1))
            k = int(rng.integers(0, n + 1))
            dense_beta = np.concatenate([[0.0], beta])
            value, _ = solve_qkp(KnapsackInstance(tree, alpha, dense_beta, k))
            assert value == star_reference(alpha, beta, k)

    def test_from_mappings(self):
        tree = topology([(1, 2), (1, 3)], 3)
        inst = KnapsackInstance.from_mappings(tree, {1: 1.0, 2: -1.0, 3: -1.0}, {(2, 1): 3.0, (1, 3): -3.0}, 3)
        assert inst.objective([1, 1, 1]) == pytest.approx(-1.0)
        with pytest.raises(ValueError):
            KnapsackInstance.from_mappings(tree, {1: 0.0, 2: 0.0, 3: 0.0}, {(1, 2): 1.0}, 1)


class TestDpTable:
    def test_entries_and_export(self):
        tree = topology([(1, 2), (1, 3)], 3)
        table = build_dp_table(KnapsackInstance(tree, [1.0, 2.0, 3.0], [0.0, 0.0, 0.0], 0))
        assert table.value(1, 2, 1, 3) == 6.0
        assert table.value(1, 2, 0, 1) == 2.0
        assert table.value(1, 0, 0, 3) == np.inf
        buffer = io.StringIO()
        table.to_csv(buffer)
        frame = pd.read_csv(io.StringIO(buffer.getvalue()))
        assert list(frame.columns) == ["i", "s", "y", "t", "value"]
        assert len(frame) == len(table.to_frame())


class TestConstraintBlock:
    def test_series_two_nodes_first_child_rows(self):
        block = emit_knapsack_block(series_tree([0.5, 0.5], [0.25]), k=1)
        first = [row.name for row in block.rows if row.name.startswith("first")]
        assert sorted(first) == ["first00[1,1,0]", "first01[1,1,1]", "first10[1,1,1]", "first11[1,1,2]"]

    def test_star_has_split_rows(self):
        block = emit_knapsack_block(topology([(1, 2), (1, 3)], 3), k=1)
        assert any(row.name.startswith("split11[1,2") for row in block.rows)
        assert all(not row.name.startswith("split") for row in emit_knapsack_block(
            series_tree([0.5] * 3, [0.25] * 2), k=1
        ).rows)

    def test_full_cardinality_links_only_selected_root(self):
        tree = topology([(1, 2), (1, 3), (2, 4)], 4)
        links = [row.name for row in emit_knapsack_block(tree, k=4).rows if row.name.startswith("link")]
        assert links == ["link1[4]"]

    def test_scalar_and_vector_linking(self):
        tree = topology([(1, 2)], 2)
        scalar = emit_knapsack_block(tree, k=1, rhs_per_t=1.0)
        assert [row.name for row in scalar.rows if row.name == "cover"] == ["cover"]
        vector = emit_knapsack_block(tree, k=0, rhs_per_t=[0.0, 0.5, 1.0])
        covers = [row for row in vector.rows if row.name.startswith("cover")]
        assert [row.rhs for row in covers] == [0.0, 0.5, 1.0]
        assert ("z", 2) in vector.variables
        with pytest.raises(ValueError):
            emit_knapsack_block(tree, k=0, rhs_per_t=[0.0, 1.0])

    def test_lp_reproduces_dp(self, rng, solver_config):
        for _ in range(15):
            inst = random_instance(rng, n=int(rng.integers(1, 8)))
            if inst.k == 0:
                inst = KnapsackInstance(inst.tree, inst.alpha, inst.beta, 1)
            block = emit_knapsack_block(inst.tree, inst.k)
            builder = LPBuilder(Sense.MAX)
            for i in range(inst.tree.n):
                builder.variable(("alpha", i), lower=inst.alpha[i], upper=inst.alpha[i])
            for _, j in inst.tree.edges:
                builder.variable(("beta", j), lower=inst.beta[j], upper=inst.beta[j])
            block.add_to(builder)
            builder.objective({builder.index(("z",)): 1.0})
            solution = solve(builder.build(), solver_config)
            assert solution.objective == pytest.approx(solve_qkp(inst)[0], abs=1e-7)

    def test_worst_row_at_dp_values(self):
        tree = topology([(1, 2), (1, 3)], 3)
        inst = KnapsackInstance(tree, [1.0, -2.0, 3.0], [0.0, 1.0, -1.0], 2)
        table = build_dp_table(inst)
        block = emit_knapsack_block(tree, inst.k)
        values = {("alpha", i): inst.alpha[i] for i in range(3)}
        values.update({("beta", j): inst.beta[j] for _, j in tree.edges})
        for key in block.variables:
            if key[0] == "x":
                _, i, s, y, t = key
                values[key] = table.values[(i, s)][y, t]
        values[("z",)] = solve_qkp(inst)[0]
        slack, _ = block.worst_row(values)
        assert slack == pytest.approx(0.0, abs=1e-12)
        assert all(row.relation in (Relation.GE, Relation.EQ) for row in block.rows)
