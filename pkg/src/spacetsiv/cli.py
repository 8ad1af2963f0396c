"""Command-line front end.

Exit status: 0 success, 2 input or parse error, 3 numerical failure,
4 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InputError, NumericalError
from .estimators import SpaceTsivResult, ci_by_inversion, spacetsiv_l0, spacetsiv_l1, tsiv
from .identifiability import DEFAULT_TOL, diagnose
from .qstat import SupportSet, chi2_cdf, fit_restricted, q_statistic
from .simulate import DGPS, ESTIMATORS, make_spec, plot_metrics, run_experiment, simulate_individual
from .sumstats import joint_from_individual, marginal_from_individual, marginal_to_joint, select_instruments

log = logging.getLogger("spacetsiv")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _int_list(text):
    try:
        values = [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a comma-separated list of integers") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("expected positive integers")
    return values


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a comma-separated list of numbers") from None


def _name_list(choices):
    def parse(text):
        names = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in names if v not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad}; choose from {', '.join(choices)}")
        return names

    return parse


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_convert(args):
    marg = io.read_marginal(
        args.outcome, args.exposure, args.ld, args.mx, args.n_outcome, args.n_exposure,
        ld_b=args.ld_b, df_corrected=args.df_corrected,
    )
    if args.select_top is not None:
        marg = select_instruments(marg, args.select_top)
    joint = marginal_to_joint(marg)
    io.write_joint(joint, args.out)
    print(f"m={joint.m} d={joint.d} n_a={joint.n_a} n_b={joint.n_b}")
    return EXIT_OK


def _cis(joint, support, level, threads):
    if level is None:
        return None
    if len(support) == 0:
        return []
    return ci_by_inversion(joint, support, alpha=1.0 - level, threads=threads)


def cmd_fit(args):
    joint = io.read_joint(args.joint)
    if args.command == "fit-l0":
        s_max = args.s_max
        if s_max is not None and s_max > min(joint.d, joint.m):
            raise InputError(f"--s-max {s_max} exceeds min(d, m) = {min(joint.d, joint.m)}")
        result = spacetsiv_l0(joint, s_max=s_max, alpha=args.alpha, threads=args.threads)
        support = result.support
    elif args.command == "fit-l1":
        lambdas = None if args.lambdas is None else np.array(args.lambdas)
        result = spacetsiv_l1(joint, lambdas=lambdas, alpha=args.alpha)
        support = result.support
    else:
        result = _tsiv_result(joint)
        support = SupportSet(range(joint.d))
    cis = _cis(joint, support, args.ci, args.threads)
    doc = io.result_to_dict(result, cis, covariate_ids=joint.covariate_ids)
    doc["alpha"] = args.alpha
    _emit(io.dump_json(doc), args.out)
    if result.phi:
        log.warning("every candidate support was rejected at level %g", args.alpha)
    return EXIT_OK


def _tsiv_result(joint):
    est = tsiv(joint)
    q = q_statistic(joint, est)
    return SpaceTsivResult(
        estimate=est, phi=False, support=SupportSet(np.flatnonzero(est)), q_value=q,
        p_value=1.0 - chi2_cdf(q, joint.m), method="tsiv",
    )


def cmd_diagnose(args):
    joint = io.read_joint(args.joint)
    pa = SupportSet(args.pa)
    if pa.indices and pa.indices[-1] >= joint.d:
        raise InputError(f"--pa index {pa.indices[-1]} out of range for d = {joint.d}")
    report = diagnose(joint.big_pi, pa.indices, tol=args.tol, estimated=not args.population)
    doc = {"pa": pa.to_list(), **report.to_dict()}
    if args.population:
        doc["q_at_pa"] = fit_restricted(joint, pa).q_value if len(pa) else None
    _emit(io.dump_json(doc), args.out)
    return EXIT_OK


def cmd_simulate(args):
    rows = run_experiment(
        args.dgp, args.n_grid, repetitions=args.reps, estimators=args.estimators,
        alpha=args.alpha, seed=args.seed, exact=args.exact, threads=args.threads,
    )
    io.write_metrics_csv(rows, args.out)
    if args.plot:
        plot_metrics(rows, args.plot)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_export(args):
    spec = make_spec(args.dgp, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.population:
        joint = spec.population_joint(args.n, args.n)
        io.write_joint(joint, out / "joint.json")
        print(f"m={joint.m} d={joint.d} n_a={joint.n_a} n_b={joint.n_b}")
        return EXIT_OK
    data = simulate_individual(spec, args.n, args.n)
    marg = marginal_from_individual(*data)
    io.write_marginal(marg, out / "outcome.tsv", out / "exposure.tsv", out / "ld.csv", out / "mx.csv",
                      ld_b=out / "ld_b.csv")
    joint = joint_from_individual(*data)
    io.write_joint(joint, out / "joint.json")
    print(f"m={joint.m} d={joint.d} n_a={joint.n_a} n_b={joint.n_b}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for per-subset Q values")
    common.add_argument("--threads", type=_positive_int, default=1)

    parser = _Parser(prog="spacetsiv", description="Sparse causal effects from two-sample summary statistics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", parents=[common], help="marginal files -> joint summary JSON")
    p.add_argument("--outcome", required=True, help="outcome TSV (snp, beta, se)")
    p.add_argument("--exposure", required=True, help="exposure TSV (snp, beta_<id>, se_<id>, ...)")
    p.add_argument("--ld", required=True, help="instrument correlation CSV (shared, or outcome sample)")
    p.add_argument("--ld-b", help="instrument correlation CSV for the exposure sample")
    p.add_argument("--mx", required=True, help="covariate correlation CSV")
    p.add_argument("--n-outcome", type=_positive_int, required=True)
    p.add_argument("--n-exposure", type=_positive_int, required=True)
    p.add_argument("--df-corrected", action="store_true", help="standard errors use an n-2 denominator")
    p.add_argument("--select-top", type=_positive_int, help="keep the top-K first-stage F SNPs per covariate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    for name, help_ in (("fit-l0", "subset-search estimator"), ("fit-l1", "lasso-path estimator"),
                        ("tsiv", "pseudo-inverse estimator")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("joint", help="joint summary JSON")
        p.add_argument("--alpha", type=_probability, default=0.05)
        p.add_argument("--ci", type=_probability, metavar="LEVEL", default=None,
                       help="add test-inversion confidence intervals at this level, e.g. 0.9")
        p.add_argument("--out", help="result JSON (default: standard output)")
        if name == "fit-l0":
            p.add_argument("--s-max", type=_positive_int, help="largest support size (default min(d, m))")
        if name == "fit-l1":
            p.add_argument("--lambdas", type=_float_list, help="comma-separated decreasing penalties")
        p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", parents=[common], help="identifiability rank checks")
    p.add_argument("joint")
    p.add_argument("--pa", type=lambda t: [int(v) for v in t.split(",") if v.strip()], required=True,
                   help="candidate parent set, comma-separated 0-based indices")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--population", action="store_true", help="input holds exact population values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo sweep over sample sizes")
    p.add_argument("--dgp", choices=DGPS, required=True)
    p.add_argument("--n-grid", type=_int_list, default=[1000, 10000, 100000])
    p.add_argument("--reps", type=_positive_int, default=50)
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimators", type=_name_list(ESTIMATORS), default=list(ESTIMATORS))
    p.add_argument("--exact", action="store_true", help="use noise-free population statistics")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--plot", help="optional image path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", parents=[common], help="write one simulated dataset as input files")
    p.add_argument("--dgp", choices=("dgp1", "dgp3"), required=True)
    p.add_argument("--n", type=_positive_int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--population", action="store_true", help="write exact population joint JSON only")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def _setup_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"spacetsiv: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"spacetsiv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"spacetsiv: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
