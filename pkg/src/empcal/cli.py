"""Command-line front end.

    empcal calibrate --covariates sample.csv --target target.csv \\
        --out-weights w.csv --out-report report.json [--auto-l2]
    empcal simulate ks-att --covariates true-z --n 1000 --replicates 100
    empcal bench --n 2000 --repetitions 200

Exit codes: 0 success, 1 usage or input error, 2 calibration did not
converge (weights are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .calibration import calibrate, maybe_exact_calibrate
from .core import CalibrationError, CovariateMatrix, NoFeasibleRelaxation, Objective, TargetMoments
from .diagnostics import balance_report
from .formula import build_design, parse_formula
from .simulation import (
    CovariateSet,
    generate_kang_schafer,
    run_att_study,
    run_direct_standardization_study,
    run_population_mean_study,
)

log = logging.getLogger("empcal")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class InputError(Exception):
    pass


def _read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep=",", encoding="utf-8", dtype=str,
                           keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: cannot parse CSV: {exc}") from None


def _numeric_frame(df: pd.DataFrame, path: str, columns: Sequence[str]) -> pd.DataFrame:
    """Converts the named string columns to float, naming the first bad cell."""
    out = {}
    for col in columns:
        values = np.empty(len(df))
        for i, cell in enumerate(df[col]):
            try:
                values[i] = float(cell)
            except ValueError:
                # Row numbers count the header as line 1.
                raise InputError(
                    f"{path}: row {i + 2}, column {col!r}: not a number: {cell!r}") from None
            if not np.isfinite(values[i]):
                raise InputError(f"{path}: row {i + 2}, column {col!r}: non-finite value {cell!r}")
        out[col] = values
    return pd.DataFrame(out, columns=list(columns))


def _typed_frame(df: pd.DataFrame) -> pd.DataFrame:
    """Columns that parse fully as numbers become float, others stay strings."""
    out = {}
    for col in df.columns:
        converted = pd.to_numeric(df[col], errors="coerce")
        out[col] = converted if converted.notna().all() else df[col]
    return pd.DataFrame(out)


def _load_problem(args):
    sample_df = _read_csv(args.covariates)
    target_df = _read_csv(args.target)
    if len(sample_df) == 0:
        raise InputError(f"{args.covariates}: no data rows")
    if len(target_df) == 0:
        raise InputError(f"{args.target}: no data rows")

    target_weights = None
    if args.target_weight_col:
        if args.target_weight_col not in target_df.columns:
            raise InputError(f"{args.target}: weight column {args.target_weight_col!r} not found")
        target_weights = _numeric_frame(target_df, args.target, [args.target_weight_col]).iloc[:, 0]
        target_df = target_df.drop(columns=[args.target_weight_col])
        target_weights = target_weights.to_numpy()

    if args.formula:
        formula = parse_formula(args.formula)
        sample = _typed_frame(sample_df)
        target = _typed_frame(target_df)
        for path, frame in ((args.covariates, sample), (args.target, target)):
            for name in _referenced(formula):
                if name not in frame.columns:
                    raise InputError(f"{path}: column {name!r} referenced by the formula is missing")
        cov = build_design(formula, sample)
        target_cov = build_design(formula, target, levels_from=sample)
        return cov, TargetMoments.from_rows(target_cov.values, target_weights)

    if list(sample_df.columns) != list(target_df.columns):
        raise InputError(
            f"column headers differ: {args.covariates} has {list(sample_df.columns)}, "
            f"{args.target} has {list(target_df.columns)}")
    cols = list(sample_df.columns)
    sample = _numeric_frame(sample_df, args.covariates, cols)
    target = _numeric_frame(target_df, args.target, cols)
    return (CovariateMatrix(sample.to_numpy(), tuple(cols)),
            TargetMoments.from_rows(target.to_numpy(), target_weights))


def _referenced(formula):
    names = []
    for term in formula.terms:
        names.extend(getattr(term, a) for a in ("name", "name_a", "name_b") if hasattr(term, a))
    return names


def _write_weights(path, weights) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("weight\n")
        for w in weights:
            fh.write(f"{float(w)!r}\n")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_calibrate(args) -> int:
    cov, target = _load_problem(args)
    options = dict(objective=Objective(args.objective), max_weight=args.max_weight,
                   min_weight=args.min_weight, autoscale=args.autoscale)
    if args.auto_l2:
        result, eps = maybe_exact_calibrate(cov, target, **options)
    else:
        result = calibrate(cov, target, l2_norm=args.l2_norm, **options)
        eps = args.l2_norm
    report = balance_report(cov, target, result)
    _write_weights(args.out_weights, result.weights)
    payload = report.to_dict()
    payload.update(
        achieved_l2_norm=eps,
        auto_l2=bool(args.auto_l2),
        objective=args.objective,
        autoscale=bool(args.autoscale),
        n=int(cov.shape[0]),
        iterations=int(result.iterations),
        message=result.message,
        rank_deficient=bool(result.rank_deficient),
    )
    _write_json(args.out_report, payload)
    if not args.quiet:
        print(report.to_text())
        if args.auto_l2:
            print(f"achieved l2_norm: {eps:.6g}")
    if not result.success:
        log.warning("calibration did not converge (%s); weights written anyway", result.message)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    objective = Objective(args.objective)
    if args.study == "ks-att":
        summary = run_att_study(args.n, args.replicates, CovariateSet(args.covariate_set),
                                objective, args.seed)
    elif args.study == "ks-popmean":
        summary = run_population_mean_study(args.n, args.replicates, objective, args.seed,
                                            CovariateSet(args.covariate_set))
    else:
        summary = run_direct_standardization_study(args.n, args.n_sample, args.replicates,
                                                   objective, args.seed)
    if args.out_csv:
        summary.write_csv(args.out_csv)
    if args.out_json:
        summary.write_json(args.out_json)
    if not args.quiet:
        print(f"{summary.label}: replicates={summary.n_replicates} "
              f"bias={summary.bias:.4f} rmse={summary.rmse:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    objective = Objective(args.objective)
    sample = generate_kang_schafer(args.n, args.seed)
    treated = sample.treated
    control_cov, treated_cov = sample.z[~treated], sample.z[treated]
    times = []
    failures = 0
    for _ in range(args.repetitions):
        start = time.perf_counter()
        result = calibrate(control_cov, treated_cov, objective=objective)
        times.append((time.perf_counter() - start) * 1e3)
        failures += not result.success
    times = np.array(times)
    stats = {
        "n": args.n,
        "repetitions": args.repetitions,
        "objective": args.objective,
        "mean_ms": float(times.mean()),
        "min_ms": float(times.min()),
        "max_ms": float(times.max()),
        "failures": failures,
    }
    if args.out_json:
        _write_json(args.out_json, stats)
    if not args.quiet:
        print(f"{'n':>6} {'reps':>5} {'mean':>8} {'min':>8} {'max':>8}  (ms)")
        print(f"{args.n:>6} {args.repetitions:>5} {stats['mean_ms']:>8.2f} "
              f"{stats['min_ms']:>8.2f} {stats['max_ms']:>8.2f}")
    return EXIT_OK


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


class _Parser(argparse.ArgumentParser):
    # Exit code 2 is reserved for non-converged calibrations.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")
    parser = _Parser(prog="empcal", description="Empirical calibration weights.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    objectives = [o.value for o in Objective]

    cal = sub.add_parser("calibrate", parents=[common],
                         help="calibrate a sample CSV to a target CSV")
    cal.add_argument("--covariates", required=True, metavar="FILE")
    cal.add_argument("--target", required=True, metavar="FILE")
    cal.add_argument("--formula")
    cal.add_argument("--objective", choices=objectives, default="entropy")
    cal.add_argument("--max-weight", type=float, default=1.0)
    cal.add_argument("--min-weight", type=float, default=0.0)
    relax = cal.add_mutually_exclusive_group()
    relax.add_argument("--l2-norm", type=float, default=0.0)
    relax.add_argument("--auto-l2", action="store_true",
                       help="use the smallest l2_norm that gives a solution")
    cal.add_argument("--autoscale", action="store_true")
    cal.add_argument("--target-weight-col", metavar="NAME")
    cal.add_argument("--out-weights", required=True, metavar="FILE")
    cal.add_argument("--out-report", required=True, metavar="FILE")
    cal.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    cal.set_defaults(func=cmd_calibrate)

    sim = sub.add_parser("simulate", parents=[common], help="run a simulation study")
    sim.add_argument("study", choices=["ks-att", "ks-popmean", "direct-standardization"])
    sim.add_argument("--covariates", dest="covariate_set",
                     choices=[c.value for c in CovariateSet], default="true-z")
    sim.add_argument("--n", type=_positive_int, default=1000,
                     help="sample size (population size for direct-standardization)")
    sim.add_argument("--n-sample", type=_positive_int, default=100,
                     help="skewed sample size for direct-standardization")
    sim.add_argument("--replicates", type=_positive_int, default=100)
    sim.add_argument("--objective", choices=objectives, default="entropy")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-csv", metavar="FILE")
    sim.add_argument("--out-json", metavar="FILE")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", parents=[common], help="time calibration on Kang-Schafer data")
    bench.add_argument("--n", type=_positive_int, default=2000)
    bench.add_argument("--repetitions", type=_positive_int, default=200)
    bench.add_argument("--objective", choices=objectives, default="entropy")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out-json", metavar="FILE")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, CalibrationError, NoFeasibleRelaxation, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
