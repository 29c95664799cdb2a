"""Command-line front end: ``batchuq table|analyze|experiment|hist``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical degeneracy.

Scenario files (``experiment --scenario FILE``) are JSON objects. For the
inventory testbed the keys are the fields of :class:`InventoryConfig`::

    {"s": 1000, "S": 2000, "demand_mean": 100, "demand_var": 10000,
     "lead_mean": 6, "backorder_cost": 4, "holding_cost": 1,
     "fixed_cost": 36, "variable_cost": 2, "warmup": 1000,
     "initial_inventory": null}

(``horizon`` is set from ``--n``). For the gamma testbed the keys are
``shape`` and ``scale``. Unknown keys are rejected. ``--set KEY=VALUE``
overrides a single key from the command line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assess import (DegenerateLayoutError, Method, build_ensemble, estimate_bias,
                     estimate_error_quantiles, estimate_stddev)
from .batching import LayoutError, SampleSeries, layout_from_policy
from .confidence import DegenerateDesignError, MonteCarloTable, region_from_ensemble
from .functionals import FunctionalError, parse_functional
from .harness import (VARIANTS, ExperimentPlan, FIGURE, consistency_distances, histogram_export,
                      run_experiment, scaled_batch_errors, stream, write_report)
from .limits import (DEFAULT_GRID, DEFAULT_PATHS, LimitError, TableCache, critical_values,
                     default_table_dir, parse_b, parse_norm)
from .testbeds import InventoryConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4


class DataError(ValueError):
    """Malformed or unusable input data."""


class UsageError(ValueError):
    pass


# --- ingestion ---------------------------------------------------------------

def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _split(line: str, delimiter):
    if delimiter == ",":
        return [t.strip() for t in line.split(",")]
    return line.split()


def read_series(path, columns=None) -> SampleSeries:
    """Read a comma- or whitespace-delimited file, one observation per row.

    A first row that is not entirely numeric is treated as a header.
    `columns` selects columns by 0-based index or by header name.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path} contains no data rows")
    delimiter = "," if "," in lines[0][1] else None
    header = None
    first = _split(lines[0][1], delimiter)
    if not all(_is_number(t) for t in first):
        header = first
        lines = lines[1:]
    rows = []
    width = None
    for lineno, ln in lines:
        toks = _split(ln, delimiter)
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value in row {ln.strip()!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise DataError(f"{path} contains a header but no data rows")
    data = np.array(rows, dtype=float)
    if columns:
        idx = []
        for c in columns:
            if header is not None and c in header:
                idx.append(header.index(c))
            elif c.isdigit() and int(c) < data.shape[1]:
                idx.append(int(c))
            else:
                raise DataError(f"unknown column {c!r}")
        data = data[:, idx]
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path} contains NaN or infinite values")
    return SampleSeries(data)


# --- argument helpers --------------------------------------------------------

def _csv_list(conv):
    def parse(text):
        try:
            return [conv(t.strip()) for t in text.split(",") if t.strip()]
        except (ValueError, LimitError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _unit_interval(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {x}")
    return x


def _alpha_list(text):
    return [_unit_interval(t.strip()) for t in text.split(",") if t.strip()]


def _size_policy(text):
    key = text.strip().lower()
    if key == "sqrt":
        return "sqrt"
    try:
        if "." in key:
            return _unit_interval(key) if float(key) < 1 else int(float(key))
        return int(key)
    except ValueError:
        raise argparse.ArgumentTypeError(f"batch size must be 'sqrt', a fraction or an int: {text!r}") from None


def _variants(text):
    out = [t.strip().upper() for t in text.split(",") if t.strip()]
    for v in out:
        if v not in VARIANTS:
            raise argparse.ArgumentTypeError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    return out


def _positive_int(text):
    try:
        x = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if x < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {x}")
    return x


def _add_table_flags(p):
    p.add_argument("--table-dir", default=None,
                   help="critical-value cache directory (default: $BATCHUQ_TABLE_DIR or ./tables)")
    p.add_argument("--paths", type=_positive_int, default=DEFAULT_PATHS,
                   help=f"Monte Carlo paths per table entry (default {DEFAULT_PATHS})")
    p.add_argument("--grid", type=_positive_int, default=DEFAULT_GRID,
                   help=f"Wiener path grid steps (default {DEFAULT_GRID})")
    p.add_argument("--table-seed", type=int, default=0, help="seed for table generation (default 0)")


def _threads(args):
    return args.threads if args.threads else (os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchuq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"batchuq {__version__}")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: number of CPUs); results do not depend on it")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("table", help="generate critical values of the limiting Studentized statistic")
    t.add_argument("--method", type=_csv_list(Method.parse), default=[Method.OB1, Method.OB2],
                   help="ob1, ob2 or both (comma separated)")
    t.add_argument("--beta", type=_csv_list(_unit_interval), required=True,
                   help="batch fraction(s) m/n in (0, 1)")
    t.add_argument("--b", type=_csv_list(parse_b), default=["inf"],
                   help="number(s) of batches, >= 2, or 'inf' (default inf)")
    t.add_argument("--d", type=_positive_int, default=1, help="dimension (default 1)")
    t.add_argument("--p", type=_csv_list(parse_norm), default=[2], help="norm order(s): 1, 2, inf")
    t.add_argument("--alpha", type=_alpha_list, default=[0.1, 0.05, 0.01],
                   help="significance level(s) in (0, 1) (default 0.1,0.05,0.01)")
    t.add_argument("--seed", type=int, default=0, help="Monte Carlo seed (default 0)")
    t.add_argument("--paths", type=_positive_int, default=DEFAULT_PATHS,
                   help=f"Monte Carlo paths (default {DEFAULT_PATHS}, minimum 1000)")
    t.add_argument("--grid", type=_positive_int, default=DEFAULT_GRID,
                   help=f"Wiener path grid steps (default {DEFAULT_GRID})")
    t.add_argument("--table-dir", default=None,
                   help="cache directory (default: $BATCHUQ_TABLE_DIR or ./tables)")
    t.set_defaults(func=cmd_table)

    a = sub.add_parser("analyze", help="batching inference on a delimited data file")
    a.add_argument("input", help="data file: comma- or whitespace-delimited, one observation per row")
    a.add_argument("--columns", type=_csv_list(str), default=None,
                   help="columns to use, by 0-based index or header name (default: all)")
    a.add_argument("--functional", default="mean",
                   help="'mean', 'quantile:<levels>' or 'quantile-linear:<levels>' (default mean)")
    a.add_argument("--variants", type=_variants, default=list(VARIANTS),
                   help="comma list of FOB-I, NOB-I, FOB-II, NOB-II (default all)")
    a.add_argument("--ci-batch", type=_size_policy, default=0.2,
                   help="batch size for confidence regions: sqrt, fraction or int (default 0.2)")
    a.add_argument("--psi-batch", type=_size_policy, default="sqrt",
                   help="batch size for bias/stddev/quantile estimates (default sqrt)")
    a.add_argument("--alpha", type=_unit_interval, default=0.05, help="significance level (default 0.05)")
    a.add_argument("--p", type=parse_norm, default=2, help="norm order: 1, 2, inf (default 2)")
    a.add_argument("--psi-gamma", type=_unit_interval, default=0.8,
                   help="error quantile level to report (default 0.8)")
    a.add_argument("--output", "-o", default=None, help="report path (default: standard output)")
    a.add_argument("--format", choices=("json", "text", "csv"), default="text")
    _add_table_flags(a)
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("experiment", help="macro-replication study on a built-in testbed")
    e.add_argument("testbed", choices=("gamma", "inventory"))
    e.add_argument("--n", type=_csv_list(_positive_int), default=None,
                   help="comma list of series lengths (default 500,1000,2000,5000)")
    e.add_argument("--macroreps", type=_positive_int, default=None, help="macro-replications K (default 1000)")
    e.add_argument("--side-reps", type=_positive_int, default=None,
                   help="side-experiment replications K' (default 100000)")
    e.add_argument("--truth-n", type=_positive_int, default=None,
                   help="length of the truth run (default 1000000)")
    e.add_argument("--functional", default=None,
                   help="estimator (default quantile-linear:0.99 for gamma, quantile-linear:0.9 for inventory)")
    e.add_argument("--variants", type=_variants, default=None, help="comma list of variants (default all)")
    e.add_argument("--alpha", type=_unit_interval, default=None, help="significance level (default 0.05)")
    e.add_argument("--seed", type=int, default=0, help="experiment seed (default 0)")
    e.add_argument("--no-crn", action="store_true",
                   help="give each variant its own data instead of common random numbers")
    e.add_argument("--scenario", default=None, help="JSON scenario file (schema in the module docstring)")
    e.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one scenario key, e.g. --set s=800 or --set shape=2 (repeatable)")
    e.add_argument("--skip-rmse", action="store_true", help="skip the side experiment and RMSE columns")
    e.add_argument("--skip-coverage", action="store_true", help="skip the confidence-region columns")
    e.add_argument("--hist-dir", default=None,
                   help="also write histogram files of scaled batch errors for seeds 1, 2, 3")
    e.add_argument("--bins", type=_positive_int, default=40, help="histogram bins (default 40)")
    e.add_argument("--output", "-o", default=None, help="report path (default: standard output)")
    e.add_argument("--format", choices=("json", "text", "csv"), default="text")
    _add_table_flags(e)
    e.set_defaults(func=cmd_experiment)

    h = sub.add_parser("hist", help="histogram of one data column as bin_lo,bin_hi,count")
    h.add_argument("input", help="data file")
    h.add_argument("--column", default="0", help="column index or header name (default 0)")
    h.add_argument("--bins", type=_positive_int, default=40, help="number of bins (default 40)")
    h.add_argument("--range", type=_csv_list(float), default=None, help="lo,hi histogram range")
    h.add_argument("--output", "-o", required=True, help="output file")
    h.set_defaults(func=cmd_hist)
    return parser


# --- commands ----------------------------------------------------------------

def _emit(text: str, output):
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _fmt(x):
    return "-" if x is None else f"{x:.6g}"


def cmd_table(args) -> int:
    cache = TableCache(args.table_dir)
    if args.paths < 1000:
        raise UsageError("--paths must be at least 1000")
    lines = ["method beta b d p alpha t mc_stderr"]
    for method in args.method:
        for beta in args.beta:
            for b in args.b:
                for p in args.p:
                    entry = critical_values(method, beta, b, args.d, p, args.alpha, n_paths=args.paths,
                                            K=args.grid, seed=args.seed, cache=cache,
                                            threads=_threads(args))
                    for a in args.alpha:
                        lines.append(f"{method.value} {beta:g} {_b(b)} {args.d} {_b(p)} {a:g} "
                                     f"{entry.t(a):.6f} {entry.stderr(a):.6f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _b(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else str(x)


def analyze_series(series: SampleSeries, functional: str = "mean", variants=None, ci_batch=0.2,
                   psi_batch="sqrt", alpha: float = 0.05, p=2, psi_gamma: float = 0.8,
                   table_source=None) -> list:
    """One report row per variant: region, bias, stddev and error quantile."""
    f = parse_functional(functional)
    table_source = table_source if table_source is not None else MonteCarloTable()
    rows = []
    for v in variants or list(VARIANTS):
        method, overlap = VARIANTS[v]
        ci_layout = layout_from_policy(series.n, ci_batch, overlap)
        region = region_from_ensemble(build_ensemble(series, ci_layout, f, method), p, alpha, table_source)
        psi_layout = layout_from_policy(series.n, psi_batch, overlap)
        e = build_ensemble(series, psi_layout, f, method)
        row = {
            "variant": v, "n": series.n, "d": series.d, "alpha": alpha, "p": _b(region.p),
            "ci_m": ci_layout.m, "ci_offset": ci_layout.offset, "ci_b": ci_layout.b,
            "psi_m": psi_layout.m, "psi_offset": psi_layout.offset, "psi_b": psi_layout.b,
            "center": region.center.tolist(), "radius": region.radius,
            "bias": None if method is Method.OB2 else estimate_bias(e).tolist(),
            "stddev": estimate_stddev(e).tolist(),
            "quantile": estimate_error_quantiles(e, psi_gamma).tolist(),
            "quantile_level": psi_gamma,
        }
        if series.d == 1:
            row["ci"] = list(region.interval())
        else:
            row["sigma"] = region.sigma.tolist()
        rows.append(row)
    return rows


def format_analysis(rows: list, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "n", "coordinate", "ci_lo", "ci_hi", "center", "radius",
                    "bias", "stddev", "quantile"])
        for r in rows:
            for j in range(r["d"]):
                lo, hi = r["ci"] if "ci" in r else ("", "")
                w.writerow([r["variant"], r["n"], j, _r(lo), _r(hi), _r(r["center"][j]), _r(r["radius"]),
                            "" if r["bias"] is None else _r(r["bias"][j]), _r(r["stddev"][j]),
                            _r(r["quantile"][j])])
        return buf.getvalue()
    q = rows[0]["quantile_level"] if rows else 0.8
    head = f"{'variant':<8} {'confidence region':>26} {'bias':>10} {'stddev':>10} {f'{q:g}-quantile':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if "ci" in r:
            region = f"[{r['ci'][0]:.1f}, {r['ci'][1]:.1f}]"
        else:
            region = f"radius {r['radius']:.3f}"
        for j in range(r["d"]):
            bias = "-" if r["bias"] is None else f"{r['bias'][j]:.1f}"
            lines.append(f"{r['variant'] if j == 0 else '':<8} {region if j == 0 else '':>26} {bias:>10} "
                         f"{r['stddev'][j]:>10.1f} {r['quantile'][j]:>12.1f}")
    return "\n".join(lines) + "\n"


def _r(x):
    return repr(float(x)) if isinstance(x, (float, int, np.floating)) else x


def cmd_analyze(args) -> int:
    series = read_series(args.input, args.columns)
    source = MonteCarloTable(TableCache(args.table_dir), n_paths=args.paths, K=args.grid,
                             seed=args.table_seed, threads=_threads(args))
    rows = analyze_series(series, args.functional, args.variants, args.ci_batch, args.psi_batch,
                          args.alpha, args.p, args.psi_gamma, source)
    _emit(format_analysis(rows, args.format), args.output)
    return EXIT_OK


def _scenario(args) -> dict:
    doc = {}
    if args.scenario:
        try:
            doc = json.loads(Path(args.scenario).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"bad scenario file {args.scenario}: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError(f"scenario file {args.scenario} must hold a JSON object")
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            doc[key.strip()] = None if value.strip() == "null" else float(value)
        except ValueError:
            raise UsageError(f"--set value must be a number, got {item!r}") from None
    return doc


def plan_from_args(args) -> ExperimentPlan:
    doc = _scenario(args)
    kw = {}
    try:
        if args.testbed == "inventory":
            if "warmup" in doc and doc["warmup"] is not None:
                doc["warmup"] = int(doc["warmup"])
            kw["inventory"] = InventoryConfig.from_dict(doc)
        else:
            unknown = set(doc) - {"shape", "scale"}
            if unknown:
                raise ValueError(f"unknown gamma scenario keys: {sorted(unknown)}")
            kw["gamma_shape"] = float(doc.get("shape", 1.0))
            kw["gamma_scale"] = float(doc.get("scale", 100.0))
            if kw["gamma_shape"] <= 0 or kw["gamma_scale"] <= 0:
                raise ValueError("gamma shape and scale must be positive")
    except (ValueError, TypeError) as exc:
        raise DataError(f"bad scenario: {exc}") from exc
    functional = args.functional or ("quantile-linear:0.99" if args.testbed == "gamma"
                                     else "quantile-linear:0.9")
    kw.update(testbed=args.testbed, functional=functional, seed=args.seed, crn=not args.no_crn,
              table_paths=args.paths, table_grid=args.grid, table_seed=args.table_seed,
              table_dir=str(args.table_dir or default_table_dir()), threads=_threads(args))
    if args.n:
        kw["n_grid"] = tuple(args.n)
    if args.macroreps:
        kw["macroreps"] = args.macroreps
    if args.side_reps:
        kw["side_reps"] = args.side_reps
    if args.truth_n:
        kw["n_truth"] = args.truth_n
    if args.variants:
        kw["variants"] = tuple(args.variants)
    if args.alpha:
        kw["alpha"] = args.alpha
    try:
        return ExperimentPlan(**kw)
    except (ValueError, FunctionalError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_experiment(args) -> int:
    plan = plan_from_args(args)
    report = run_experiment(plan, assess=not args.skip_rmse, coverage=not args.skip_coverage)
    if args.output is None:
        sys.stdout.write({"json": report.to_json, "text": report.to_text, "csv": report.to_csv}[args.format]())
    else:
        write_report(report, args.output, args.format)
    if args.hist_dir:
        out = Path(args.hist_dir)
        out.mkdir(parents=True, exist_ok=True)
        for n in plan.n_grid:
            for s in (1, 2, 3):
                data = plan.generate(n, [stream(s, FIGURE, n)])[0]
                for label, policy in (("sqrt", "sqrt"), ("0.2n", plan.ci_batch)):
                    errs = scaled_batch_errors(plan, data, policy)[:, 0]
                    histogram_export(errs, args.bins, out / f"{plan.testbed}_n{n}_m{label}_seed{s}.csv")
    return EXIT_OK


def cmd_hist(args) -> int:
    series = read_series(args.input, [args.column])
    rng = tuple(args.range) if args.range else None
    if rng is not None and (len(rng) != 2 or not rng[0] < rng[1]):
        raise UsageError("--range needs two increasing numbers lo,hi")
    histogram_export(series.data[:, 0], args.bins, args.output, rng)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DegenerateDesignError, DegenerateLayoutError) as exc:
        print(f"batchuq: degenerate design: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DataError, LayoutError, FunctionalError) as exc:
        print(f"batchuq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LimitError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
