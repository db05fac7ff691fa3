"""
Tight bounds on the tail probability of a sum of dependent Bernoulli
variables whose marginals and pairwise joints are known on a tree.
"""

from .bounds import (
    BoundResult,
    Direction,
    DualCertificate,
    bound_table,
    check_band_nesting,
    hunter_worsley_bound,
    lower_bound,
    partition_bound,
    poisson_binomial_tail,
    univariate_lower,
    univariate_upper,
    upper_bound,
    verify_certificate,
    weighted_bound,
)
from .condind import CiTable, ci_pmf, ci_tail
from .knapsack import DpTable, KnapsackInstance, admissible_ranges, emit_knapsack_block, solve_qkp
from .lp import LPBuilder, LPProblem, LPSolution, SolverConfig, solve, write_lp
from .models import (
    EdgeBivariate,
    SubtreeIndex,
    TreeModel,
    build_tree,
    complement,
    series_tree,
    star_tree,
    validate_marginals,
)
from .oracle import GeneralMarginalModel, JointDistribution, ci_enumerate, oracle_bound, qkp_enumerate
from .orderstats import (
    CdfGrid,
    OrderStatCurves,
    copula_bivariate,
    gaussian_marginal_cdf,
    load_grid,
    sweep,
    threshold_model,
)
from .schemas import dump_tree, load_tree
