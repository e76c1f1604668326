"""Command-line front end.

Exit status: 0 when every fit converged, 2 when some fit hit its iteration
cap (results are still written), 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .data import (
    build_rate_surface,
    build_surface,
    default_generator,
    read_hmd_table,
    surface_from_csv,
    surface_to_csv,
    synthesize_surface,
)
from .errors import MortfitError
from .harness import (
    Method,
    comparison_to_csv,
    run_comparison,
    sweep_to_csv,
    tolerance_sweep,
)
from .models import ModelKind, params_from_json, params_to_csv, params_to_json

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    # usage errors share the generic error status; 2 means "not converged"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _range(text):
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _float_list(text):
    return [_positive_float(t) for t in text.split(",") if t.strip()]


def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--deaths", help="HMD 1x1 deaths file")
    g.add_argument("--exposures", help="HMD 1x1 exposures file")
    g.add_argument("--rates", help="HMD 1x1 central death rates file (LS only)")
    g.add_argument("--surface", help="surface CSV (age,year,deaths,exposure,log_rate)")
    g.add_argument("--column", default="Total", choices=("Female", "Male", "Total"),
                   help="HMD column to read (default: Total)")
    g.add_argument("--ages", type=_range, help="age window lo:hi, inclusive")
    g.add_argument("--years", type=_range, help="year window lo:hi, inclusive")


def _add_tol(p):
    p.add_argument("--tol", type=_positive_float, default=1e-8,
                   help="relative-change convergence threshold (default: 1e-8)")


def build_parser():
    parser = _Parser(prog="mortfit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit one model and write the parameter bundle")
    _add_input(fit)
    fit.add_argument("--model", required=True, type=str.upper, choices=[k.value for k in ModelKind])
    fit.add_argument("--method", default="ls", type=str.lower, choices=("ls", "mle"))
    fit.add_argument("--hv", action="store_true", help="impose the cohort-trend constraint")
    _add_tol(fit)
    fit.add_argument("--format", default="json", choices=("json", "csv"))
    fit.add_argument("--output", help="output path (default: stdout)")

    cmp_ = sub.add_parser("compare", help="fit several methods at one tolerance")
    _add_input(cmp_)
    cmp_.add_argument("--methods", required=True, help="comma-separated, e.g. rh-ls,rh-mle")
    _add_tol(cmp_)
    cmp_.add_argument("--no-warmup", action="store_true", help="skip the untimed warm-up fits")
    cmp_.add_argument("--output", help="CSV output path (default: stdout)")

    sweep = sub.add_parser("sweep", help="fit one method at several tolerances")
    _add_input(sweep)
    sweep.add_argument("--method", required=True, help="method label, e.g. rh-ls")
    sweep.add_argument("--tols", type=_float_list, default=[1e-6, 1e-7, 1e-8],
                       help="comma-separated, loosest first (default: 1e-6,1e-7,1e-8)")
    sweep.add_argument("--no-warmup", action="store_true", help="skip the untimed warm-up fit")
    sweep.add_argument("--output", help="CSV output path (default: stdout)")

    sim = sub.add_parser("simulate", help="write a synthetic surface")
    sim.add_argument("--params", help="generator bundle JSON (default: built-in generator)")
    sim.add_argument("--model", default="RH", type=str.upper, choices=[k.value for k in ModelKind],
                     help="kind of the built-in generator")
    sim.add_argument("--ages", type=_range, default=(60, 89))
    sim.add_argument("--years", type=_range, default=(1950, 2019))
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--noise", type=float, default=0.0, help="s.d. of Gaussian log-rate noise")
    sim.add_argument("--poisson", action="store_true", help="draw deaths from a Poisson law")
    sim.add_argument("--exposure", type=_positive_float, default=1e5)
    sim.add_argument("--output", help="CSV output path (default: stdout)")
    return parser


def load_surface(args):
    """Surface described by the input flags, cut to ``--ages``/``--years``."""
    sources = [args.surface is not None, args.rates is not None,
               args.deaths is not None or args.exposures is not None]
    if sum(sources) != 1:
        raise ValueError("give exactly one of --surface, --rates or --deaths/--exposures")
    if args.surface is not None:
        with open(args.surface) as fh:
            surface = surface_from_csv(fh.read())
        if args.ages or args.years:
            ages = args.ages or (int(surface.ages[0]), int(surface.ages[-1]))
            years = args.years or (int(surface.years[0]), int(surface.years[-1]))
            surface = surface.window(ages[0], ages[1], years[0], years[1])
        return surface
    if args.rates is not None:
        table = read_hmd_table(args.rates, args.column)
        ages, years = _window(args, table)
        return build_rate_surface(table, *ages, *years)
    if args.deaths is None or args.exposures is None:
        raise ValueError("--deaths and --exposures must be given together")
    deaths = read_hmd_table(args.deaths, args.column)
    exposures = read_hmd_table(args.exposures, args.column)
    ages, years = _window(args, deaths)
    return build_surface(deaths, exposures, *ages, *years)


def _window(args, table):
    ages = args.ages or (int(table.ages[0]), int(table.ages[-1]))
    years = args.years or (int(table.years[0]), int(table.years[-1]))
    return ages, years


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def render_fit(params, fmt):
    """Text the ``fit`` command writes for a bundle."""
    return params_to_json(params) if fmt == "json" else params_to_csv(params)


def cmd_fit(args):
    surface = load_surface(args)
    method = Method.parse(f"{args.model}-{args.method}" + ("-hv" if args.hv else ""))
    method.check(surface)
    params, report = method.fit(surface, args.tol)
    _write(args.output, render_fit(params, args.format))
    summary = json.dumps(dict(method=method.label, **report.summary()))
    if args.output is None:
        print(summary, file=sys.stderr)
    else:
        _write(args.output + ".report.json", summary + "\n")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_compare(args):
    surface = load_surface(args)
    methods = [m for m in args.methods.split(",") if m.strip()]
    rows = run_comparison(surface, methods, args.tol, warmup=not args.no_warmup)
    _write(args.output, comparison_to_csv(rows))
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NOT_CONVERGED


def cmd_sweep(args):
    surface = load_surface(args)
    rows = tolerance_sweep(surface, args.method, args.tols, warmup=not args.no_warmup)
    _write(args.output, sweep_to_csv(rows))
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NOT_CONVERGED


def cmd_simulate(args):
    if args.params is not None:
        with open(args.params) as fh:
            params = params_from_json(fh.read())
    else:
        params = default_generator(
            args.model,
            np.arange(args.ages[0], args.ages[1] + 1),
            np.arange(args.years[0], args.years[1] + 1),
            seed=args.seed,
        )
    surface = synthesize_surface(
        params, base_exposure=args.exposure, noise_sd=args.noise, seed=args.seed,
        poisson=args.poisson,
    )
    _write(args.output, surface_to_csv(surface))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "compare": cmd_compare, "sweep": cmd_sweep, "simulate": cmd_simulate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (MortfitError, ValueError, OSError) as exc:
        print(f"mortfit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
