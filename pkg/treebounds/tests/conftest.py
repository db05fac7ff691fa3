from pathlib import Path

import numpy as np
import pytest

from treebounds.experiments import random_recursive_tree, random_tree_model
from treebounds.lp import SolverConfig
from treebounds.models import build_tree
from treebounds.schemas import load_tree

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def data_path(name):
    return DATA_DIR / name


def random_models(count, n_min=4, n_max=12, seed=2024, copula=None):
    """Seeded random Frechet-consistent tree models with n cycling through [n_min, n_max]."""
    rng = np.random.default_rng(seed)
    span = n_max - n_min + 1
    return [random_tree_model(n_min + r % span, rng, copula=copula) for r in range(count)]


DEGENERATE_P = (0.0, 1.0, 1e-9, 1.0 - 1e-6)


def degenerate_models(count, n_min=3, n_max=8, seed=31):
    """Random trees with marginals at or next to 0 and 1, edge joints at a Frechet bound or midway."""
    rng = np.random.default_rng(seed)
    span = n_max - n_min + 1
    models = []
    for r in range(count):
        n = n_min + r % span
        p = [
            DEGENERATE_P[int(rng.integers(len(DEGENERATE_P)))] if rng.random() < 0.6 else float(rng.random())
            for _ in range(n)
        ]
        joints = []
        for parent, child in random_recursive_tree(n, rng):
            pi, pj = p[parent - 1], p[child - 1]
            lo, hi = max(0.0, pi + pj - 1.0), min(pi, pj)
            joints.append((parent, child, (lo, hi, 0.5 * (lo + hi))[int(rng.integers(3))]))
        models.append(build_tree([(i + 1, p[i]) for i in range(n)], joints, root=1))
    return models


@pytest.fixture
def tree1():
    return load_tree(data_path("chow_liu_tree1.json"))


@pytest.fixture
def tree2():
    return load_tree(data_path("chow_liu_tree2.json"))


@pytest.fixture
def tree3():
    return load_tree(data_path("chow_liu_tree3.json"))


@pytest.fixture
def chow_liu_trees(tree1, tree2, tree3):
    return {"tree1": tree1, "tree2": tree2, "tree3": tree3}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["highs", "simplex"])
def solver_config(request):
    return SolverConfig.from_settings(method=request.param)
