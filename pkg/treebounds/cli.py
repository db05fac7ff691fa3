"""
Command-line front end.

Exit codes: 0 ok, 1 usage, I/O or parse error, 2 infeasible or invalid
model, 3 size cap, 4 internal invariant breach or solver failure.
"""

import argparse
import json
import logging
import sys

import pandas as pd
import pydantic

from . import settings
from .bounds import (
    Direction,
    bound_table,
    check_band_nesting,
    lower_bound,
    univariate_lower,
    univariate_upper,
    upper_bound,
)
from .condind import ci_pmf
from .exceptions import (
    InfeasibleCardinality,
    InvariantBreach,
    ModelError,
    NegativeWeight,
    SizeCap,
    SolverError,
    TreeStructureError,
)
from .experiments import experiment_bands
from .lp import SolverConfig
from .models import validate_marginals
from .oracle import load_general_model, oracle_bound
from .orderstats import COPULAS, load_gaussian, load_grid, sweep, x_range
from .schemas import load_topology, load_tree

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_SIZE_CAP = 3
EXIT_INTERNAL = 4


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_ks(text, n):
    """'3', '1:4' or '0,2:3' -> sorted unique k values; None gives 1..n."""
    if text is None:
        return list(range(1, n + 1))
    ks = set()
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            start, stop = part.split(":")
            ks.update(range(int(start), int(stop) + 1))
        else:
            ks.add(int(part))
    if ks and min(ks) < 0:
        raise ValueError(f"k values must be nonnegative, got {min(ks)}")
    return sorted(ks)


def _config(args):
    if args.tolerance is None:
        return SolverConfig.from_settings()
    return SolverConfig.from_settings(feasibility_tol=args.tolerance)


def _write(text, args):
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _emit(frame, args):
    if args.format == "table":
        text = frame.to_string(index=False, float_format=lambda v: f"{v:.4f}") + "\n"
    else:
        text = frame.to_csv(index=False, lineterminator="\n")
    _write(text, args)


def cmd_validate(args):
    # Parse without the Frechet checks so every violation can be listed
    tree = load_tree(args.path, validate=False)
    report = validate_marginals(tree)
    _write(str(report) + "\n", args)
    if not report.ok:
        for slack in report.violations():
            print(f"invalid: {slack.describe()}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_bound(args):
    tree = load_tree(args.path)
    ks = parse_ks(args.k, tree.n)
    # Validate the requested columns before any LP is solved
    sides = set(args.sides.split(","))
    unknown = sides - {"upper", "lower", "ci", "univariate"}
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")
    config = _config(args)
    if sides == {"upper", "lower", "ci", "univariate"}:
        # full table
        frame = bound_table(tree, ks, config)
    else:
        # only the requested columns
        pmf = ci_pmf(tree)
        columns = {"k": ks}
        if "upper" in sides:
            columns["U"] = [upper_bound(tree, k, config).value for k in ks]
        if "lower" in sides:
            columns["L"] = [lower_bound(tree, k, config).value for k in ks]
        if "ci" in sides:
            columns["P_ci"] = [1.0 if k <= 0 else float(pmf[k:].sum()) for k in ks]
        if "univariate" in sides:
            columns["U_uv"] = [univariate_upper(tree.p, k) for k in ks]
            columns["L_uv"] = [univariate_lower(tree.p, k) for k in ks]
        frame = pd.DataFrame(columns)
    # L_uv <= L <= P_ci <= U <= U_uv on whatever columns are present
    check_band_nesting(frame, tol=config.feasibility_tol)
    _emit(frame, args)
    return EXIT_OK


def cmd_ci(args):
    tree = load_tree(args.path)
    pmf = ci_pmf(tree)
    tail = pmf[::-1].cumsum()[::-1]
    frame = pd.DataFrame({"k": range(tree.n + 1), "pmf": pmf, "tail": tail})
    _emit(frame, args)
    return EXIT_OK


def cmd_univariate(args):
    # Marginals come from --p or from a model file
    if args.p:
        p = [float(v) for v in args.p]
    elif args.path:
        p = list(load_tree(args.path).p)
    else:
        raise ValueError("give a model file or --p")
    ks = parse_ks(args.k, len(p))
    frame = pd.DataFrame(
        {
            "k": ks,
            "U_uv": [univariate_upper(p, k) for k in ks],
            "L_uv": [univariate_lower(p, k) for k in ks],
        }
    )
    _emit(frame, args)
    return EXIT_OK


def cmd_oracle(args):
    model = load_general_model(args.path)
    # Anything but an optimum means no distribution matches the marginals
    result = oracle_bound(model, k=args.k, direction=args.direction, config=_config(args))
    if not result.feasible:
        _write("INFEASIBLE\n", args)
        return EXIT_INVALID
    _write(f"{result.value!r}\n", args)
    return EXIT_OK


def cmd_experiment_bands(args):
    frame = experiment_bands(
        args.n, args.runs, args.seed, args.copula, jobs=args.jobs, config=_config(args)
    )
    _emit(frame, args)
    return EXIT_OK


def cmd_orderstats(args):
    topology = load_topology(args.topology)

    # CDF values come from a grid file or from Gaussian marginals plus a copula
    if args.grid:
        grid = load_grid(args.grid, topology).restrict(args.x_start, args.x_stop)
    else:
        start = -3.0 if args.x_start is None else args.x_start
        stop = 3.0 if args.x_stop is None else args.x_stop
        grid = load_gaussian(args.gaussian, topology, x_range(start, stop, args.x_step), args.copula)

    # One bound problem per grid point
    curves = sweep(topology, grid, args.k, config=_config(args), jobs=args.jobs)
    curves.check_nesting(tol=_config(args).feasibility_tol)
    _emit(curves.to_frame(), args)
    return EXIT_OK


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="write results here instead of stdout")
    common.add_argument("--format", choices=["csv", "table"], default="csv")
    common.add_argument("--jobs", type=int, default=settings.JOBS)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tolerance", type=float, help="LP feasibility tolerance")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = ArgumentParser(prog="treebounds", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a tree model file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bound", parents=[common], help="bounds on P(sum >= k)")
    p.add_argument("path")
    p.add_argument("--k", help="k values, e.g. '2', '1:4' or '0,2:3' (default 1..n)")
    p.add_argument("--sides", default="upper,lower,ci,univariate")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("ci", parents=[common], help="conditionally independent pmf and tail")
    p.add_argument("path")
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("univariate", parents=[common], help="marginals-only bounds")
    p.add_argument("path", nargs="?")
    p.add_argument("--p", nargs="+", help="marginal probabilities instead of a model file")
    p.add_argument("--k")
    p.set_defaults(func=cmd_univariate)

    p = sub.add_parser("oracle", parents=[common], help="exact bound by enumeration")
    p.add_argument("path")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--direction", choices=[d.value for d in Direction], default="upper")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("experiment-bands", parents=[common], help="random tree band experiment")
    p.add_argument("--n", type=int, default=15)
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--copula", choices=["comonotone", "anti-comonotone"], default="comonotone")
    p.set_defaults(func=cmd_experiment_bands)

    p = sub.add_parser("orderstats", parents=[common], help="order-statistic CDF bands")
    p.add_argument("topology")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--grid", help="CDF grid file")
    source.add_argument("--gaussian", help="Gaussian means file")
    p.add_argument("--copula", choices=COPULAS, default="independence")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--x-start", type=float)
    p.add_argument("--x-stop", type=float)
    p.add_argument("--x-step", type=float, default=0.1)
    p.set_defaults(func=cmd_orderstats)
    return parser


def _configure_logging(verbose):
    level = settings.LOG_LEVEL
    if verbose == 1:
        level = "INFO"
    elif verbose > 1:
        level = "DEBUG"
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    # Library code raises; exit codes are decided here only
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, pydantic.ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, InfeasibleCardinality, NegativeWeight) as e:
        kind = "invalid tree" if isinstance(e, TreeStructureError) else "invalid model"
        print(f"{kind}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SizeCap as e:
        print(f"too large: {e}", file=sys.stderr)
        return EXIT_SIZE_CAP
    except (InvariantBreach, SolverError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
