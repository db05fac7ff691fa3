import dataclasses
import itertools

import numpy as np
import pandas as pd
import pytest

from treebounds.bounds import (
    Direction,
    bound,
    bound_table,
    check_band_nesting,
    hunter_worsley_bound,
    lower_bound,
    partition_bound,
    poisson_binomial_pmf,
    poisson_binomial_tail,
    univariate_lower,
    univariate_upper,
    upper_bound,
    verify_certificate,
    weighted_bound,
)
from treebounds import lp
from treebounds.exceptions import InvariantBreach, NegativeWeight, NumericalFailure
from treebounds.lp import SolverConfig, Status
from treebounds.models import build_tree
from treebounds.oracle import GeneralMarginalModel, oracle_bound

from .conftest import degenerate_models, random_models

GOLDEN = {
    "tree1": {"U": [1.0, 0.8, 0.65, 0.3], "L": [0.75, 0.45, 0.30, 0.05]},
    "tree2": {"U": [1.0, 0.8, 0.65, 0.25], "L": [0.8, 0.475, 0.3, 0.0]},
    "tree3": {"U": [1.0, 0.8, 0.65, 0.25], "L": [0.8, 0.5, 0.30, 0.0]},
}


def two_node_tree():
    return build_tree([(1, 0.5), (2, 0.5)], [(1, 2, 0.25)], root=1)


class TestGoldenValues:
    @pytest.mark.parametrize("name", sorted(GOLDEN))
    def test_upper(self, name, chow_liu_trees, solver_config):
        tree = chow_liu_trees[name]
        values = [upper_bound(tree, k, solver_config).value for k in range(1, 5)]
        np.testing.assert_allclose(values, GOLDEN[name]["U"], atol=1e-6)

    @pytest.mark.parametrize("name", sorted(GOLDEN))
    def test_lower(self, name, chow_liu_trees, solver_config):
        tree = chow_liu_trees[name]
        values = [lower_bound(tree, k, solver_config).value for k in range(1, 5)]
        np.testing.assert_allclose(values, GOLDEN[name]["L"], atol=1e-6)

    def test_two_node(self, solver_config):
        tree = two_node_tree()
        assert upper_bound(tree, 1, solver_config).value == pytest.approx(0.75, abs=1e-7)
        assert upper_bound(tree, 2, solver_config).value == pytest.approx(0.25, abs=1e-7)
        assert lower_bound(tree, 1, solver_config).value == pytest.approx(0.75, abs=1e-7)
        assert lower_bound(tree, 2, solver_config).value == pytest.approx(0.25, abs=1e-7)

    def test_single_node(self):
        tree = build_tree([(1, 0.3)], [], root=1)
        assert upper_bound(tree, 1).value == pytest.approx(0.3, abs=1e-7)
        assert lower_bound(tree, 1).value == pytest.approx(0.3, abs=1e-7)

    def test_trivial_cardinalities(self, tree1):
        assert upper_bound(tree1, 0).value == 1.0
        assert lower_bound(tree1, -2).value == 1.0
        assert upper_bound(tree1, 5).value == 0.0
        assert lower_bound(tree1, 5).value == 0.0
        assert upper_bound(tree1, 0).certificate is None

    def test_bound_dispatch(self, tree1):
        assert bound(tree1, 3, "upper").value == pytest.approx(0.65, abs=1e-6)
        assert bound(tree1, 3, Direction.LOWER).value == pytest.approx(0.30, abs=1e-6)


class TestUnivariate:
    def test_chow_liu_marginals(self, tree1):
        upper = [univariate_upper(tree1.p, k) for k in range(1, 5)]
        lower = [univariate_lower(tree1.p, k) for k in range(1, 5)]
        np.testing.assert_allclose(upper, [1.0, 1.0, 2.15 / 3, 0.5], atol=1e-12)
        np.testing.assert_allclose(lower, [0.55, 1.15 / 3, 0.075, 0.0], atol=1e-12)

    def test_third_lower_value_is_attained(self, tree1):
        # only marginals known: S in {2, 4} with P(S = 4) = 0.075 matches them
        model = GeneralMarginalModel.build([(i + 1, p) for i, p in enumerate(tree1.p)], [])
        exact = oracle_bound(model, k=3, direction=Direction.LOWER).value
        assert exact == pytest.approx(0.075, abs=1e-7)

    def test_against_oracle_without_edges(self, rng):
        for _ in range(10):
            p = rng.random(int(rng.integers(2, 8)))
            model = GeneralMarginalModel.build([(i, v) for i, v in enumerate(p)], [])
            for k in range(1, len(p) + 1):
                upper = oracle_bound(model, k=k, direction=Direction.UPPER).value
                lower = oracle_bound(model, k=k, direction=Direction.LOWER).value
                assert univariate_upper(p, k) == pytest.approx(upper, abs=1e-7)
                assert univariate_lower(p, k) == pytest.approx(lower, abs=1e-7)

    def test_out_of_range_k(self):
        assert univariate_upper([0.2, 0.3], 0) == 1.0
        assert univariate_upper([0.2, 0.3], 3) == 0.0
        assert univariate_lower([0.2, 0.3], 3) == 0.0

    def test_tree_bounds_inside_univariate(self):
        for tree in random_models(10):
            table = bound_table(tree)
            check_band_nesting(table)


class TestHunterWorsley:
    def test_matches_single_success_bound(self):
        for tree in random_models(15, seed=5):
            expected = hunter_worsley_bound(tree)
            assert upper_bound(tree, 1).value == pytest.approx(expected, abs=1e-6)

    def test_chow_liu(self, tree1):
        assert hunter_worsley_bound(tree1) == 1.0


class TestBandTable:
    def test_columns_and_nesting(self, tree2):
        table = bound_table(tree2)
        assert list(table.columns) == ["k", "U", "L", "P_ci", "U_uv", "L_uv"]
        assert list(table["k"]) == [1, 2, 3, 4]
        check_band_nesting(table)

    def test_monotone_in_k(self):
        for tree in random_models(8, seed=17):
            table = bound_table(tree, range(0, tree.n + 2))
            for column in ("U", "L", "P_ci"):
                assert np.all(np.diff(table[column]) <= 1e-7)

    def test_nesting_violation(self):
        frame = pd.DataFrame({"k": [1], "L": [0.6], "U": [0.5]})
        with pytest.raises(InvariantBreach):
            check_band_nesting(frame)


class TestCertificates:
    def test_upper_certificate(self, tree1):
        result = upper_bound(tree1, 2)
        report = verify_certificate(tree1, 2, result.certificate, result.value)
        assert report.ok
        assert result.certificate.reported() == pytest.approx(result.value, abs=1e-7)
        assert set(result.certificate.alpha) == {1, 2, 3, 4}
        assert set(result.certificate.beta) == {(1, 2), (1, 4), (2, 3)}

    def test_lower_certificate(self, tree3):
        result = lower_bound(tree3, 3)
        assert result.certificate.k == 2
        assert result.certificate.tree.complemented
        assert verify_certificate(tree3, 3, result.certificate, result.value).ok

    def test_tampered_certificate_fails(self, tree1):
        result = upper_bound(tree1, 3)
        values = dict(result.certificate.values)
        values[("lambda",)] -= 0.1
        tampered = dataclasses.replace(result.certificate, values=values)
        report = verify_certificate(tree1, 3, tampered, result.value)
        assert not report.ok
        assert report.objective_gap == pytest.approx(0.1, abs=1e-7)

    def test_separation_gap_uses_raw_tolerance(self, tree1):
        result = upper_bound(tree1, 3)
        values = dict(result.certificate.values)
        values[("lambda",)] -= 5e-7
        tampered = dataclasses.replace(result.certificate, values=values)
        report = verify_certificate(tree1, 3, tampered, tampered.reported())
        assert report.objective_gap == pytest.approx(0.0, abs=1e-12)
        # one of the two separation problems is tight at the optimum
        assert min(report.cardinality_gap, report.unconstrained_gap) == pytest.approx(-5e-7, abs=5e-8)
        assert not report.ok

    def test_wrong_cardinality_rejected(self, tree1):
        result = upper_bound(tree1, 3)
        with pytest.raises(ValueError):
            verify_certificate(tree1, 2, result.certificate, result.value)

    def test_multipliers_nonnegative(self, tree2):
        certificate = upper_bound(tree2, 2).certificate
        for name in ("delta", "eta", "gamma", "chi"):
            assert min(certificate.edge_multiplier(name).values()) >= -1e-9
        assert min(certificate.tau.values()) >= -1e-9


class TestAgainstOracle:
    def test_all_k_both_directions(self):
        for tree in random_models(50):
            model = GeneralMarginalModel.from_tree(tree)
            for k in range(1, tree.n + 1):
                for direction in Direction:
                    exact = oracle_bound(model, k=k, direction=direction).value
                    assert bound(tree, k, direction).value == pytest.approx(exact, abs=1e-6)

    def test_simplex_path(self, solver_config):
        for tree in random_models(4, n_min=3, n_max=6, seed=99):
            model = GeneralMarginalModel.from_tree(tree)
            for k in range(1, tree.n + 1):
                exact = oracle_bound(model, k=k).value
                assert upper_bound(tree, k, solver_config).value == pytest.approx(exact, abs=1e-6)


NEAR_CERTAIN_TREE = (
    [(1, 0.999999), (2, 0.3), (3, 0.5), (4, 1e-9), (5, 0.5)],
    [(1, 2, 0.2999989999999999), (2, 3, 0.15), (3, 4, 0.0), (4, 5, 5e-10)],
)


class TestDegenerateMarginals:
    @pytest.mark.parametrize("direction", list(Direction))
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_near_certain_tree(self, k, direction, solver_config):
        nodes, edges = NEAR_CERTAIN_TREE
        tree = build_tree(nodes, edges, root=1)
        exact = oracle_bound(GeneralMarginalModel.from_tree(tree), k=k, direction=direction).value
        assert bound(tree, k, direction, solver_config).value == pytest.approx(exact, abs=1e-6)

    def test_near_certain_lower_tail(self):
        nodes, edges = NEAR_CERTAIN_TREE
        tree = build_tree(nodes, edges, root=1)
        assert lower_bound(tree, 2).value == pytest.approx(0.649999, abs=1e-6)

    def test_random_trees(self, solver_config):
        for tree in degenerate_models(12):
            model = GeneralMarginalModel.from_tree(tree)
            for k in range(1, tree.n + 1):
                for direction in Direction:
                    exact = oracle_bound(model, k=k, direction=direction).value
                    value = bound(tree, k, direction, solver_config).value
                    assert value == pytest.approx(exact, abs=1e-6)


class TestHighsFallback:
    def test_non_optimal_verdict_goes_to_simplex(self, tree1, monkeypatch):
        monkeypatch.setattr(lp, "_solve_highs", lambda problem, config: (Status.UNBOUNDED, None, None, 0))
        result = upper_bound(tree1, 2, SolverConfig.from_settings(method="highs"))
        assert result.method == "simplex"
        assert result.value == pytest.approx(0.8, abs=1e-7)

    def test_numerical_failure_goes_to_simplex(self, tree1, monkeypatch):
        def failing(problem, config):
            raise NumericalFailure("HiGHS reported numerical difficulties")

        monkeypatch.setattr(lp, "_solve_highs", failing)
        result = lower_bound(tree1, 4, SolverConfig.from_settings(method="highs"))
        assert result.method == "simplex"
        assert result.value == pytest.approx(0.05, abs=1e-7)


class TestWeighted:
    def test_indicator_weights(self, tree1):
        for k in range(1, 5):
            w = [1.0 if s >= k else 0.0 for s in range(5)]
            upper = weighted_bound(tree1, w, Direction.UPPER).value
            lower = weighted_bound(tree1, w, Direction.LOWER).value
            assert upper == pytest.approx(GOLDEN["tree1"]["U"][k - 1], abs=1e-6)
            assert lower == pytest.approx(GOLDEN["tree1"]["L"][k - 1], abs=1e-6)

    def test_constant_weights(self, tree2):
        for direction in Direction:
            assert weighted_bound(tree2, np.full(5, 2.5), direction).value == pytest.approx(2.5, abs=1e-6)

    def test_random_weights_against_oracle(self, rng):
        for tree in random_models(15, n_max=9, seed=31):
            model = GeneralMarginalModel.from_tree(tree)
            w = rng.uniform(0.0, 3.0, tree.n + 1)
            for direction in Direction:
                exact = oracle_bound(model, weights=w, direction=direction).value
                assert weighted_bound(tree, w, direction).value == pytest.approx(exact, abs=1e-6)

    def test_expected_count_is_fixed(self, tree3):
        w = np.arange(5, dtype=float)
        expected = float(np.sum(tree3.p))
        for direction in Direction:
            assert weighted_bound(tree3, w, direction).value == pytest.approx(expected, abs=1e-6)

    def test_rejections(self, tree1):
        with pytest.raises(NegativeWeight):
            weighted_bound(tree1, [0.0, -1.0, 0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            weighted_bound(tree1, [0.0, 1.0])

    def test_certificate_verifies(self, tree2):
        result = weighted_bound(tree2, [0.0, 0.5, 1.0, 3.0, 2.0], Direction.LOWER)
        assert verify_certificate(tree2, None, result.certificate, result.value).ok


class TestPoissonBinomial:
    def test_examples(self):
        np.testing.assert_allclose(poisson_binomial_pmf([0.5, 0.5]), [0.25, 0.5, 0.25])
        np.testing.assert_allclose(poisson_binomial_pmf([0.2, 0.3, 0.5]), [0.28, 0.47, 0.22, 0.03])
        assert poisson_binomial_tail([0.2, 0.3, 0.5], 2) == pytest.approx(0.25)
        assert poisson_binomial_tail([0.2, 0.3, 0.5], 1) == pytest.approx(0.72)
        assert poisson_binomial_tail([0.2, 0.3, 0.5], 0) == 1.0
        assert poisson_binomial_tail([0.2, 0.3, 0.5], 4) == 0.0
        assert poisson_binomial_tail([], 1) == 0.0


class TestPartition:
    def test_certain_variable_shifts_k(self, tree1):
        for k in range(2, 5):
            value = partition_bound([1.0], tree1, k).value
            assert value == pytest.approx(GOLDEN["tree1"]["U"][k - 2], abs=1e-6)

    def test_empty_partition(self, tree2):
        for k in range(1, 5):
            assert partition_bound([], tree2, k, Direction.LOWER).value == pytest.approx(
                GOLDEN["tree2"]["L"][k - 1], abs=1e-6
            )

    def test_against_oracle(self, rng):
        for tree in random_models(10, n_max=8, seed=41):
            a_probs = rng.random(3)
            model = GeneralMarginalModel.from_tree(tree)
            for k in range(1, tree.n + 4):
                w = np.zeros(tree.n + 1)
                for outcome in itertools.product((0, 1), repeat=len(a_probs)):
                    mass = np.prod([p if a else 1.0 - p for p, a in zip(a_probs, outcome)])
                    for s in range(tree.n + 1):
                        if sum(outcome) + s >= k:
                            w[s] += mass
                for direction in Direction:
                    exact = oracle_bound(model, weights=w, direction=direction).value
                    result = partition_bound(a_probs, tree, k, direction)
                    assert result.k == k
                    assert result.value == pytest.approx(exact, abs=1e-6)
