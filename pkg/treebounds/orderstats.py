"""
Order-statistic CDF bands.

P(X_(k) <= x) is P(at least k of the indicators 1{X_i <= x} are one), so
each grid point x gives a Bernoulli tree model with p_i = P(X_i <= x) and
p_ij = P(X_i <= x, X_j <= x), bounded independently of the other points.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .bounds import check_band_nesting, lower_bound, univariate_lower, univariate_upper, upper_bound
from .condind import ci_tail
from .exceptions import GridError
from .models import with_probabilities
from .progress import progress
from .schemas import GaussianSchema, GridSchema, parse_edge_key, read_json

logger = logging.getLogger(__name__)

COPULAS = ("independence", "comonotone", "anti-comonotone")


def copula_bivariate(kind, pi, pj):
    """P(both indicators one) under the named copula; works elementwise on arrays."""
    if kind == "independence":
        return pi * pj
    if kind == "comonotone":
        return np.minimum(pi, pj)
    if kind == "anti-comonotone":
        return np.maximum(pi + pj - 1.0, 0.0)
    raise GridError(f"unknown copula {kind!r}, expected one of {', '.join(COPULAS)}")


def gaussian_marginal_cdf(mu, sigma, x):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    return ndtr((np.asarray(x, dtype=float) - mu) / sigma)


def _edge_pairs(topology):
    return [(topology.ids[i], topology.ids[j]) for i, j in topology.edges]


@dataclass(frozen=True, eq=False)
class CdfGrid:
    """
    ``marginals[i]`` holds P(X_i <= x) and ``bivariates[(i, j)]`` holds
    P(X_i <= x, X_j <= x) at every point of ``x``; keys are external node ids.
    """

    x: np.ndarray
    marginals: dict = field(repr=False)
    bivariates: dict = field(repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not len(x):
            raise GridError("x grid must be a non-empty list")
        if not np.all(np.isfinite(x)) or np.any(np.diff(x) <= 0):
            raise GridError("x grid must be finite and strictly increasing")
        for node_id, values in self.marginals.items():
            values = np.asarray(values, dtype=float)
            if values.shape != x.shape:
                raise GridError(f"marginal of node {node_id} has {len(values)} points, expected {len(x)}")
            if np.any(values < 0) or np.any(values > 1):
                raise GridError(f"marginal of node {node_id} leaves [0, 1]")
            if np.any(np.diff(values) < 0):
                raise GridError(f"marginal of node {node_id} is not nondecreasing")
        for key, values in self.bivariates.items():
            if np.shape(values) != x.shape:
                raise GridError(f"bivariate {key[0]}-{key[1]} has the wrong number of points")
        object.__setattr__(self, "x", x)

    @classmethod
    def from_copula(cls, topology, x, marginals, kind):
        marginals = {node_id: np.asarray(v, dtype=float) for node_id, v in marginals.items()}
        for node_id in topology.ids:
            if node_id not in marginals:
                raise GridError(f"no marginal for node {node_id}")
        bivariates = {
            (a, b): copula_bivariate(kind, marginals[a], marginals[b]) for a, b in _edge_pairs(topology)
        }
        return cls(np.asarray(x, dtype=float), marginals, bivariates)

    @classmethod
    def from_gaussian(cls, topology, means, x, sigmas=None, kind="independence"):
        """Gaussian marginals for the nodes of ``topology`` in ``ids`` order."""
        if len(means) != topology.n:
            raise GridError(f"{len(means)} means for {topology.n} nodes")
        sigmas = np.ones(topology.n) if sigmas is None else np.asarray(sigmas, dtype=float)
        marginals = {
            node_id: gaussian_marginal_cdf(mu, sigma, x)
            for node_id, mu, sigma in zip(topology.ids, means, sigmas)
        }
        return cls.from_copula(topology, x, marginals, kind)

    def bivariate(self, a, b):
        if (a, b) in self.bivariates:
            return self.bivariates[(a, b)]
        if (b, a) in self.bivariates:
            return self.bivariates[(b, a)]
        raise GridError(f"no bivariate for edge {a}-{b}")

    def restrict(self, start=None, stop=None):
        """Grid points with start <= x <= stop."""
        keep = np.ones(len(self.x), dtype=bool)
        if start is not None:
            keep &= self.x >= start - 1e-12
        if stop is not None:
            keep &= self.x <= stop + 1e-12
        return CdfGrid(
            self.x[keep],
            {key: np.asarray(v)[keep] for key, v in self.marginals.items()},
            {key: np.asarray(v)[keep] for key, v in self.bivariates.items()},
        )


def load_grid(path, topology):
    doc = GridSchema.model_validate(read_json(path))
    try:
        marginals = {int(key): np.array(values) for key, values in doc.marginals.items()}
    except ValueError:
        raise GridError("marginal keys must be node ids")
    if doc.copula is not None:
        return CdfGrid.from_copula(topology, doc.x, marginals, doc.copula)
    bivariates = {parse_edge_key(key): np.array(values) for key, values in doc.bivariates.items()}
    return CdfGrid(np.array(doc.x), marginals, bivariates)


def load_gaussian(path, topology, x, kind="independence"):
    doc = GaussianSchema.model_validate(read_json(path))
    return CdfGrid.from_gaussian(topology, doc.means, x, doc.sigmas, kind)


def x_range(start, stop, step):
    """Evenly spaced grid from ``start`` to ``stop`` inclusive."""
    count = int(round((stop - start) / step)) + 1
    return np.round(np.linspace(start, stop, count), 10)


def threshold_model(topology, grid, x):
    """The Bernoulli tree model of the indicators 1{X_i <= x} at grid point ``x``."""
    # Locate x on the grid; no interpolation between points
    hits = np.flatnonzero(np.isclose(grid.x, x, rtol=0.0, atol=1e-12))
    if not len(hits):
        raise GridError(f"x={x!r} is not a grid point")
    at = hits[0]
    try:
        p = [float(grid.marginals[node_id][at]) for node_id in topology.ids]
    except KeyError as e:
        raise GridError(f"no marginal for node {e.args[0]}")
    # P(X_i <= x, X_j <= x) becomes the edge joint of the indicators
    p11 = np.full(topology.n, np.nan)
    for i, j in topology.edges:
        p11[j] = float(grid.bivariate(topology.ids[i], topology.ids[j])[at])
    return with_probabilities(topology, p, p11, x=float(grid.x[at]))


@dataclass(frozen=True, eq=False)
class OrderStatCurves:
    k: int
    x: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    ci: np.ndarray
    uv_upper: np.ndarray
    uv_lower: np.ndarray

    def to_frame(self):
        return pd.DataFrame(
            {
                "x": self.x,
                "U": self.upper,
                "L": self.lower,
                "CI": self.ci,
                "U_uv": self.uv_upper,
                "L_uv": self.uv_lower,
            }
        )

    def check_nesting(self, tol=1e-7):
        frame = self.to_frame().rename(columns={"CI": "P_ci"})
        check_band_nesting(frame, tol=tol, key="x")
        return self


def _sweep_point(args):
    """Every curve value at one grid point; module level so it pickles for the pool."""
    topology, grid, k, x, config = args
    model = threshold_model(topology, grid, x)
    return (
        upper_bound(model, k, config).value,
        lower_bound(model, k, config).value,
        ci_tail(model, k),
        univariate_upper(model.p, k),
        univariate_lower(model.p, k),
    )


def sweep(topology, grid, k, config=None, jobs=1):
    """Upper, lower, CI and univariate curves of P(X_(k) <= x) over the grid."""
    if not 1 <= k <= topology.n:
        raise ValueError(f"k must lie in [1, {topology.n}], got {k}")
    # Grid points are independent problems; pool.map keeps them in x order
    tasks = [(topology, grid, k, float(x), config) for x in grid.x]
    logger.info(f"sweeping {len(tasks)} grid points for k={k}")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(progress(pool.map(_sweep_point, tasks), desc="grid points", total=len(tasks)))
    else:
        rows = [_sweep_point(task) for task in progress(tasks, desc="grid points")]
    # rows are (U, L, CI, U_uv, L_uv) per point
    columns = np.array(rows, dtype=float).reshape(len(tasks), 5).T
    return OrderStatCurves(k, grid.x.copy(), *columns)
