"""Macro-replication experiments for batching-based uncertainty quantification.

The protocol:

1. approximate the true parameter by one very long run;
2. for each n, run many independent side experiments to get the sampling
   distribution of the estimator error and its reference summaries
   (bias, standard deviation, error quantile);
3. over macro-replications, compare the batch estimates of those
   summaries with the references (RMSE);
4. over macro-replications, build confidence regions and record how often
   they contain the approximate truth and how wide they are.

Every random stream is derived from ``(plan.seed, purpose, index...)``, so
results do not depend on chunking or thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assess import (Method, ensemble_from_estimates, estimate_bias, estimate_error_quantiles,
                     estimate_stddev)
from .batching import as_series, layout_from_policy
from .confidence import DegenerateDesignError, MonteCarloTable, region_from_ensemble, table_key
from .functionals import batch_estimates, evaluate, parse_functional, quantile
from .limits import DEFAULT_GRID, DEFAULT_PATHS, TableCache
from .testbeds import InventoryConfig, simulate_inventory_runs

TRUTH, SIDE, MACRO, FIGURE = 0, 1, 2, 3

VARIANTS = {
    "FOB-I": (Method.OB1, "full"),
    "NOB-I": (Method.OB1, "none"),
    "FOB-II": (Method.OB2, "full"),
    "NOB-II": (Method.OB2, "none"),
}

TESTBEDS = ("gamma", "inventory", "constant", "coin")


def stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


@dataclass(frozen=True)
class ExperimentPlan:
    testbed: str = "gamma"
    functional: str = "quantile-linear:0.99"
    n_grid: tuple = (500, 1000, 2000, 5000)
    variants: tuple = tuple(VARIANTS)
    alpha: float = 0.05
    p: int = 2
    macroreps: int = 1000
    side_reps: int = 100_000
    n_truth: int = 1_000_000
    seed: int = 0
    crn: bool = True
    ci_batch: object = 0.2
    psi_batch: object = "sqrt"
    psi_gamma: float = 0.8
    gamma_shape: float = 1.0
    gamma_scale: float = 100.0
    constant_value: float = 1.0
    inventory: InventoryConfig = field(default_factory=InventoryConfig)
    table_paths: int = DEFAULT_PATHS
    table_grid: int = DEFAULT_GRID
    table_seed: int = 0
    table_dir: Optional[str] = None
    threads: Optional[int] = 1

    def __post_init__(self):
        if self.testbed not in TESTBEDS:
            raise ValueError(f"unknown testbed {self.testbed!r}; choose from {TESTBEDS}")
        if self.macroreps < 1 or self.side_reps < 1:
            raise ValueError("need at least one macro-replication and one side replication")
        if not self.n_grid:
            raise ValueError("empty n grid")
        if self.n_truth <= max(self.n_grid):
            raise ValueError("truth run length must exceed every n in the grid")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r}; choose from {tuple(VARIANTS)}")
        parse_functional(self.functional)

    @property
    def estimator(self):
        return parse_functional(self.functional)

    def generate(self, n: int, seqs: Sequence[np.random.SeedSequence]) -> np.ndarray:
        """One run of length `n` per seed sequence; shape ``(len(seqs), n)``."""
        if self.testbed == "gamma":
            return np.stack([np.random.default_rng(s).gamma(self.gamma_shape, self.gamma_scale, n)
                             for s in seqs])
        if self.testbed == "inventory":
            return simulate_inventory_runs(self.inventory.with_horizon(n), list(seqs))
        if self.testbed == "coin":
            return np.stack([np.random.default_rng(s).choice([-1.0, 1.0], n) for s in seqs])
        return np.full((len(seqs), n), float(self.constant_value))

    def table_source(self) -> MonteCarloTable:
        return MonteCarloTable(TableCache(self.table_dir), n_paths=self.table_paths,
                               K=self.table_grid, seed=self.table_seed, threads=self.threads)


def _map(fn, items, threads):
    items = list(items)
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def approximate_truth(plan: ExperimentPlan) -> np.ndarray:
    """Estimator evaluated on one run of length ``plan.n_truth``."""
    data = plan.generate(plan.n_truth, [stream(plan.seed, TRUTH)])[0]
    return evaluate(plan.estimator, data)


@dataclass
class Reference:
    n: int
    bias: np.ndarray
    stddev: np.ndarray
    quantile: np.ndarray
    side_reps: int

    def as_dict(self) -> dict:
        return {"n": self.n, "bias": self.bias.tolist(), "stddev": self.stddev.tolist(),
                "quantile": self.quantile.tolist(), "side_reps": self.side_reps}


def sampling_distribution(plan: ExperimentPlan, n: int, truth, chunk: int = 250) -> np.ndarray:
    """Estimator errors of ``plan.side_reps`` independent runs of length n; ``(K', d)``."""
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    f = plan.estimator
    starts = range(0, plan.side_reps, chunk)

    def work(start):
        seqs = [stream(plan.seed, SIDE, n, k) for k in range(start, min(start + chunk, plan.side_reps))]
        data = plan.generate(n, seqs)
        return np.vstack([evaluate(f, row) for row in data]) - truth

    return np.vstack(_map(work, starts, plan.threads))


def reference_summaries(errors, gamma: float = 0.8, n: int = 0) -> Reference:
    """Bias, standard deviation and gamma-quantile of side-experiment errors."""
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[:, None]
    q = np.array([quantile(errors[:, j], gamma) for j in range(errors.shape[1])])
    return Reference(n=n, bias=errors.mean(axis=0), stddev=errors.std(axis=0), quantile=q,
                     side_reps=errors.shape[0])


@dataclass
class RepResult:
    bias: dict = field(default_factory=dict)
    stddev: dict = field(default_factory=dict)
    quantile: dict = field(default_factory=dict)
    covered: dict = field(default_factory=dict)
    half_width: dict = field(default_factory=dict)


def _ci_radii(plan: ExperimentPlan, n: int, variants, d: int) -> dict:
    source = plan.table_source()
    radii = {}
    for v in variants:
        method, overlap = VARIANTS[v]
        layout = layout_from_policy(n, plan.ci_batch, overlap)
        radii[v] = source(table_key(method, layout, d, plan.p, plan.alpha))
    return radii


def _analyze_series(plan, data, variants, truth, radii, do_psi, do_ci) -> RepResult:
    """All requested variant summaries on one series (shared batch estimates)."""
    f = plan.estimator
    series = as_series(data)
    grand = evaluate(f, series)
    res = RepResult()
    cache = {}

    def estimates(size_policy, overlap):
        key = (size_policy, overlap)
        if key not in cache:
            layout = layout_from_policy(series.n, size_policy, overlap)
            cache[key] = (layout, batch_estimates(f, series, layout))
        return cache[key]

    for v in variants:
        method, overlap = VARIANTS[v]
        if do_psi:
            layout, vals = estimates(plan.psi_batch, overlap)
            e = ensemble_from_estimates(vals, grand, layout, method)
            res.bias[v] = estimate_bias(e)
            res.stddev[v] = estimate_stddev(e)
            res.quantile[v] = estimate_error_quantiles(e, plan.psi_gamma)
        if do_ci:
            layout, vals = estimates(plan.ci_batch, overlap)
            e = ensemble_from_estimates(vals, grand, layout, method)
            try:
                region = region_from_ensemble(e, plan.p, plan.alpha, radius=radii[v])
            except DegenerateDesignError:
                # zero-spread batches: the region collapses to its center
                res.covered[v] = bool(np.allclose(e.center, truth))
                res.half_width[v] = 0.0
                continue
            res.covered[v] = region.contains(truth)
            res.half_width[v] = region.half_width() if e.d == 1 else float("nan")
    return res


def _data_key(plan: ExperimentPlan, n: int, k: int, variant: str):
    if plan.crn:
        return (MACRO, n, k)
    return (MACRO, n, k, list(VARIANTS).index(variant) + 1)


def _run_macros(plan, n, variants, truth, radii, do_psi, do_ci, block: int = 100) -> list:
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    groups = {}
    for v in variants:
        groups.setdefault(_data_key(plan, n, 0, v)[3:], []).append(v)

    def work(start):
        ks = range(start, min(start + block, plan.macroreps))
        merged = [RepResult() for _ in ks]
        for tag, vs in groups.items():
            data = plan.generate(n, [stream(plan.seed, MACRO, n, k, *tag) for k in ks])
            for row, m in zip(data, merged):
                r = _analyze_series(plan, row, vs, truth, radii, do_psi, do_ci)
                for name in ("bias", "stddev", "quantile", "covered", "half_width"):
                    getattr(m, name).update(getattr(r, name))
        return merged

    blocks = _map(work, range(0, plan.macroreps, block), plan.threads)
    return [r for b in blocks for r in b]


def _rmse(estimates: np.ndarray, target: np.ndarray):
    sq = np.sum((estimates - target) ** 2, axis=1)
    value = math.sqrt(sq.mean())
    se = sq.std(ddof=1) / math.sqrt(len(sq)) / (2 * value) if len(sq) > 1 and value > 0 else 0.0
    return value, se


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else 0.0
    return float(x.mean()), float(se)


def _rmse_cells(reps: list, v: str, ref: Reference) -> dict:
    method = VARIANTS[v][0]
    out = {}
    if method is Method.OB1:
        out["rmse_bias"], out["rmse_bias_se"] = _rmse(np.array([r.bias[v] for r in reps]), ref.bias)
    else:
        out["rmse_bias"], out["rmse_bias_se"] = None, None
    out["rmse_stddev"], out["rmse_stddev_se"] = _rmse(np.array([r.stddev[v] for r in reps]), ref.stddev)
    out["rmse_quantile"], out["rmse_quantile_se"] = _rmse(np.array([r.quantile[v] for r in reps]),
                                                          ref.quantile)
    return out


def _coverage_cells(reps: list, v: str) -> dict:
    cov, cov_se = _mean_se([r.covered[v] for r in reps])
    hw, hw_se = _mean_se([r.half_width[v] for r in reps])
    return {"coverage": cov, "coverage_se": cov_se, "half_width": hw, "half_width_se": hw_se}


def coverage_indicators(plan: ExperimentPlan, n: int, truth, variants=None) -> dict:
    """Per-replication hit indicators, ``{variant: bool array of length K}``.

    Under common random numbers the arrays are paired, so coverage
    differences can be judged with the paired standard error.
    """
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    variants = list(plan.variants if variants is None else variants)
    radii = _ci_radii(plan, n, variants, truth.size)
    reps = _run_macros(plan, n, variants, truth, radii, do_psi=False, do_ci=True)
    return {v: np.array([r.covered[v] for r in reps], dtype=bool) for v in variants}


def run_assessment_rmse(plan: ExperimentPlan, n: int, variant: str, reference: Reference) -> dict:
    """RMSE of the batch bias / stddev / error-quantile estimates against `reference`."""
    reps = _run_macros(plan, n, [variant], np.zeros(1), {}, do_psi=True, do_ci=False)
    return _rmse_cells(reps, variant, reference)


def run_coverage(plan: ExperimentPlan, n: int, variant: str, truth) -> dict:
    """Coverage of `truth` and mean half-width over the macro-replications."""
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    radii = _ci_radii(plan, n, [variant], truth.size)
    reps = _run_macros(plan, n, [variant], truth, radii, do_psi=False, do_ci=True)
    return _coverage_cells(reps, variant)


@dataclass
class ExperimentReport:
    plan: dict
    truth: list
    references: list
    cells: list   # one dict per (n, variant)

    def cell(self, n: int, variant: str) -> dict:
        for c in self.cells:
            if c["n"] == n and c["variant"] == variant:
                return c
        raise KeyError((n, variant))

    def to_dict(self) -> dict:
        return {"plan": self.plan, "truth": self.truth, "references": self.references,
                "cells": self.cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        cols = ["n", "variant", "coverage", "coverage_se", "half_width", "half_width_se",
                "rmse_bias", "rmse_bias_se", "rmse_stddev", "rmse_stddev_se",
                "rmse_quantile", "rmse_quantile_se"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for c in self.cells:
            w.writerow(["" if c.get(k) is None else _fmt_csv(c.get(k)) for k in cols])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"testbed={self.plan['testbed']} functional={self.plan['functional']} "
                 f"K={self.plan['macroreps']} K'={self.plan['side_reps']} seed={self.plan['seed']}",
                 f"truth ~ {', '.join(f'{t:.4f}' for t in self.truth)}", ""]
        head = f"{'n':>6}  {'variant':<7} {'coverage':>9} {'half-width':>11} " \
               f"{'bias':>8} {'stddev':>8} {'q':>8}"
        lines += [head, "-" * len(head)]
        for c in self.cells:
            lines.append(f"{c['n']:>6}  {c['variant']:<7} {_pct(c.get('coverage')):>9} "
                         f"{_num(c.get('half_width')):>11} {_num(c.get('rmse_bias')):>8} "
                         f"{_num(c.get('rmse_stddev')):>8} {_num(c.get('rmse_quantile')):>8}")
        lines.append("")
        lines.append("reference summaries (side experiment)")
        for r in self.references:
            lines.append(f"{r['n']:>6}  bias {_vec(r['bias'])}  stddev {_vec(r['stddev'])}  "
                         f"q {_vec(r['quantile'])}")
        return "\n".join(lines) + "\n"


def _fmt_csv(x):
    return repr(x) if isinstance(x, float) else x


def _pct(x):
    return "-" if x is None else f"{100 * x:.1f}%"


def _num(x):
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.1f}"


def _vec(v):
    return ", ".join(f"{x:.2f}" for x in v)


def _plan_dict(plan: ExperimentPlan) -> dict:
    doc = asdict(plan)
    doc["n_grid"] = list(plan.n_grid)
    doc["variants"] = list(plan.variants)
    doc.pop("threads")
    doc.pop("table_dir")
    return doc


def run_experiment(plan: ExperimentPlan, assess: bool = True, coverage: bool = True) -> ExperimentReport:
    truth = approximate_truth(plan)
    refs, cells = [], []
    for n in plan.n_grid:
        ref = None
        if assess:
            ref = reference_summaries(sampling_distribution(plan, n, truth), plan.psi_gamma, n)
            refs.append(ref.as_dict())
        radii = _ci_radii(plan, n, plan.variants, truth.size) if coverage else {}
        reps = _run_macros(plan, n, plan.variants, truth, radii, do_psi=assess, do_ci=coverage)
        for v in plan.variants:
            cell = {"n": n, "variant": v}
            if coverage:
                cell.update(_coverage_cells(reps, v))
                cell["radius"] = radii[v]
            if assess:
                cell.update(_rmse_cells(reps, v, ref))
            cells.append(cell)
    return ExperimentReport(plan=_plan_dict(plan), truth=truth.tolist(), references=refs, cells=cells)


def write_report(report: ExperimentReport, path, fmt: str = "json"):
    text = {"json": report.to_json, "text": report.to_text, "csv": report.to_csv}[fmt]()
    Path(path).write_text(text)


# --- distribution-level comparisons ------------------------------------------

def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance (sup of the CDF gap)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("KS distance needs two nonempty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def histogram_export(samples, bins: int, path, range_: Optional[tuple] = None):
    """Write fixed-width bin counts as ``bin_lo,bin_hi,count`` rows."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot histogram an empty sample")
    counts, edges = np.histogram(x, bins=bins, range=range_)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return counts, edges


def scaled_batch_errors(plan: ExperimentPlan, data, size_policy, method=Method.OB1) -> np.ndarray:
    """sqrt(m)-scaled batch errors of one series under full overlap."""
    f = plan.estimator
    series = as_series(data)
    layout = layout_from_policy(series.n, size_policy, "full")
    e = ensemble_from_estimates(batch_estimates(f, series, layout), evaluate(f, series), layout, method)
    return e.scaled_errors("m")


def consistency_distances(plan: ExperimentPlan, size_policy, n_values=None, seeds=(1, 2, 3),
                          truth=None, side_errors: Optional[dict] = None) -> np.ndarray:
    """KS distance between sqrt(m)-scaled OB-I batch errors and sqrt(n)-scaled side errors.

    Returns an array of shape ``(len(seeds), len(n_values))``; each seed
    is one fixed macro-replication (first coordinate only).
    """
    n_values = list(plan.n_grid if n_values is None else n_values)
    if truth is None:
        truth = approximate_truth(plan)
    side_errors = {} if side_errors is None else side_errors
    out = np.empty((len(seeds), len(n_values)))
    for j, n in enumerate(n_values):
        if n not in side_errors:
            side_errors[n] = sampling_distribution(plan, n, truth)
        ref = math.sqrt(n) * side_errors[n][:, 0]
        for i, s in enumerate(seeds):
            data = plan.generate(n, [stream(s, FIGURE, n)])[0]
            out[i, j] = ks_distance(scaled_batch_errors(plan, data, size_policy)[:, 0], ref)
    return out


def with_overrides(plan: ExperimentPlan, **kw) -> ExperimentPlan:
    return replace(plan, **{k: v for k, v in kw.items() if v is not None})
