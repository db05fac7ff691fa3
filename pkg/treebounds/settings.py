"""
Settings for treebounds.

Values are read from the environment (and from a ``.env`` file if present)
when the package is imported. Every value can be overridden per call through
``SolverConfig`` or on the command line.
"""

import os

from dotenv import load_dotenv

load_dotenv()


# LP backend: "highs" routes through scipy.optimize.linprog, "simplex" uses
# the embedded revised simplex with Bland's rule.
LP_METHOD = os.getenv("TREEBOUNDS_LP_METHOD", "highs")

# Solver tolerances
FEASIBILITY_TOL = float(os.getenv("TREEBOUNDS_FEASIBILITY_TOL", "1e-7"))
PIVOT_TOL = float(os.getenv("TREEBOUNDS_PIVOT_TOL", "1e-9"))
MAX_ITERATIONS = int(os.getenv("TREEBOUNDS_MAX_ITERATIONS", "50000"))

# Model validation
FRECHET_TOL = float(os.getenv("TREEBOUNDS_FRECHET_TOL", "1e-12"))

# Exponential oracle hard cap on the number of variables
ORACLE_MAX_N = int(os.getenv("TREEBOUNDS_ORACLE_MAX_N", "20"))

# Parallelism for experiments and sweeps
JOBS = int(os.getenv("TREEBOUNDS_JOBS", "1"))

LOG_LEVEL = os.getenv("TREEBOUNDS_LOG_LEVEL", "WARNING")
