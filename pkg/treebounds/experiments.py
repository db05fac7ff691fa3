"""Random tree models and the tree-versus-univariate band experiment."""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from .bounds import univariate_upper, upper_bound
from .condind import ci_pmf
from .models import build_tree
from .orderstats import copula_bivariate
from .progress import progress

logger = logging.getLogger(__name__)

BAND_COLUMNS = ["run", "k", "U", "U_uv", "P_ci"]


def run_generators(seed, runs):
    """One PCG64 generator per run; run r does not depend on how many runs there are."""
    children = np.random.SeedSequence(seed).spawn(runs)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def random_recursive_tree(n, rng):
    """Edges (parent, child) on nodes 1..n, node i joining a uniform node of 1..i-1."""
    return [(int(rng.integers(1, i)), i) for i in range(2, n + 1)]


def random_tree_model(n, rng, copula=None, p_max=1.0):
    """
    Random recursive tree with p_i uniform in (0, p_max]. Edge joints follow
    ``copula`` or, when it is None, are uniform in their Frechet interval.
    """
    edges = random_recursive_tree(n, rng)
    p = p_max * (1.0 - rng.random(n))
    # 1 - U[0, 1) keeps every marginal strictly positive
    joints = []
    for parent, child in edges:
        pi, pj = p[parent - 1], p[child - 1]
        if copula is None:
            lo, hi = max(0.0, pi + pj - 1.0), min(pi, pj)
            joints.append((parent, child, lo + (hi - lo) * rng.random()))
        else:
            joints.append((parent, child, float(copula_bivariate(copula, pi, pj))))
    return build_tree([(i + 1, float(p[i])) for i in range(n)], joints, root=1)


def _band_run(args):
    run, n, rng, copula, config = args
    tree = random_tree_model(n, rng, copula=copula, p_max=0.1)
    pmf = ci_pmf(tree)
    return [
        (run, k, upper_bound(tree, k, config).value, univariate_upper(tree.p, k), float(pmf[k:].sum()))
        for k in range(1, n + 1)
    ]


def experiment_bands(n, runs, seed, copula, jobs=1, config=None):
    """Per run and k: U(k), U_uv(k) and the CI probability on a random tree with p_i in (0, 0.1]."""
    if n < 2 or runs < 1:
        raise ValueError("need n >= 2 and at least one run")
    # Each run carries its own generator, so serial and pooled runs agree
    tasks = [(run, n, rng, copula, config) for run, rng in enumerate(run_generators(seed, runs))]
    logger.info(f"bands experiment: {runs} runs, n={n}, {copula} copula, seed {seed}")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(progress(pool.map(_band_run, tasks), desc="runs", total=runs))
    else:
        results = [_band_run(task) for task in progress(tasks, desc="runs")]
    # flatten to one row per (run, k)
    return pd.DataFrame([row for rows in results for row in rows], columns=BAND_COLUMNS)
