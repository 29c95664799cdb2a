"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line. Monte Carlo
tables are cached under pytest's cache directory, so reruns are faster.
"""
from __future__ import annotations

import math
import os

import numpy as np
import pytest
from scipy import stats

from batchuq.assess import (build_ensemble, estimate_bias, estimate_error_quantiles,
                            estimate_variance)
from batchuq.batching import plan_layout
from batchuq.cli import main
from batchuq.confidence import studentizing_matrix
from batchuq.functionals import MEAN, marginal_quantiles
from batchuq.harness import (ExperimentPlan, approximate_truth, consistency_distances,
                             coverage_indicators, run_experiment, sampling_distribution)
from batchuq.limits import INF, TableCache, critical_values, sample_limit

from oracles import mean, order_stat_quantile, table1


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def _rel_close(a, b, rel=1e-10):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(1.0, float(np.abs(a).max(initial=0)), float(np.abs(b).max(initial=0)))
    return bool(np.all(np.abs(a - b) <= rel * scale))


def test_criterion_1_identities(report):
    rng = np.random.default_rng(101)
    failures = 0
    for case in range(100):
        n = int(rng.integers(6, 400))
        d = int(rng.integers(1, 4))
        m = int(rng.integers(1, n // 2 + 1))
        offset = int(rng.integers(1, m + 1))
        x = rng.standard_t(5, size=(n, d)) * rng.uniform(0.1, 100)
        f = MEAN if case % 2 == 0 else marginal_quantiles(*rng.uniform(0.05, 0.95, size=d))
        lay = plan_layout(n, m, offset)
        e1, e2 = build_ensemble(x, lay, f, "ob1"), build_ensemble(x, lay, f, "ob2")
        ok = np.all(estimate_bias(e2) == 0.0)
        if lay.b >= 2:
            ok &= _rel_close(estimate_variance(e1), estimate_variance(e2))
        s1 = m * e1.errors.T @ e1.errors / lay.b
        s2 = m * e2.errors.T @ e2.errors / lay.b
        ok &= _rel_close(s1 - s2, m * np.outer(e1.error_mean, e1.error_mean))
        if lay.b >= 2:
            ok &= _rel_close(s1, studentizing_matrix(e1))
        failures += not ok
    report(1, failures == 0, f"{100 - failures}/100 randomized cases satisfy all identities")


def test_criterion_2_limit_moment(report):
    lines, ok = [], True
    for i, (beta, b) in enumerate([(0.2, 5), (0.1, 20), (0.5, 2)]):
        draws = sample_limit("ob1", beta, b, 1, 100_000, np.random.default_rng(200 + i), K=4096)
        x = draws.chi2[:, 0, 0]
        se = x.std(ddof=1) / math.sqrt(x.size)
        z = (x.mean() - (1 - beta)) / se
        ok &= abs(z) < 3
        lines.append(f"(beta={beta}, b={b}) mean {x.mean():.4f} vs {1 - beta:.1f}, z={z:+.2f}")
    report(2, ok, "; ".join(lines))


def test_criterion_3_student_t(report, shared_tables):
    cache = TableCache(shared_tables)
    lines, ok = [], True
    for b in (3, 5, 10):
        entry = critical_values("ob2", 1 / b, b, 1, 2, [0.05], n_paths=1_000_000, K=4096, seed=3,
                                cache=cache, threads=os.cpu_count())
        want = math.sqrt(b / (b - 1)) * stats.t.ppf(0.975, b - 1)
        t, se = entry.t(0.05), entry.stderr(0.05)
        ok &= abs(t - want) <= 3 * se
        lines.append(f"b={b}: {t:.4f} vs {want:.4f} (se {se:.4f})")
    report(3, ok, "; ".join(lines))


def test_criterion_4_small_batch(report, shared_tables):
    entry = critical_values("ob1", 0.02, 100, 1, 2, [0.05], n_paths=100_000, K=4096, seed=4,
                            cache=TableCache(shared_tables), threads=os.cpu_count())
    t = entry.t(0.05)
    report(4, 1.86 <= t <= 2.06, f"t = {t:.4f} (se {entry.stderr(0.05):.4f}), target [1.86, 2.06]")


def _gamma_plan(shared_tables, **kw):
    base = dict(testbed="gamma", functional="quantile-linear:0.99", macroreps=1000, side_reps=10_000,
                n_truth=1_000_000, seed=0, table_dir=str(shared_tables), threads=os.cpu_count())
    base.update(kw)
    return ExperimentPlan(**base)


def test_criterion_5_gamma_table(report, shared_tables):
    rep = run_experiment(_gamma_plan(shared_tables))
    c5, c5b = rep.cell(5000, "FOB-I"), rep.cell(5000, "FOB-II")
    c500 = rep.cell(500, "FOB-II")
    checks = [
        ("n=5000 FOB-I coverage", c5["coverage"] * 100, 95.0, abs(c5["coverage"] * 100 - 95.0) <= 2.5),
        ("n=5000 FOB-I half-width", c5["half_width"], 32.4, abs(c5["half_width"] / 32.4 - 1) <= 0.15),
        ("n=500 FOB-II coverage", c500["coverage"] * 100, 75.4, abs(c500["coverage"] * 100 - 75.4) <= 4),
        ("bias", c5["rmse_bias"], 4.5, abs(c5["rmse_bias"] / 4.5 - 1) <= 0.25),
        ("stddev", c5["rmse_stddev"], 4.1, abs(c5["rmse_stddev"] / 4.1 - 1) <= 0.25),
        ("q0.8 FOB-I", c5["rmse_quantile"], 8.3, abs(c5["rmse_quantile"] / 8.3 - 1) <= 0.25),
        ("q0.8 FOB-II", c5b["rmse_quantile"], 3.1, abs(c5b["rmse_quantile"] / 3.1 - 1) <= 0.25),
    ]
    detail = "; ".join(f"{name} {got:.2f} (target {want})" for name, got, want, _ in checks)
    report(5, all(c[3] for c in checks), detail)


@pytest.fixture(scope="module")
def consistency(shared_tables):
    plan = _gamma_plan(shared_tables)
    truth = approximate_truth(plan)
    side = {n: sampling_distribution(plan, n, truth) for n in plan.n_grid}
    small = consistency_distances(plan, "sqrt", truth=truth, side_errors=side)
    large = consistency_distances(plan, 0.2, truth=truth, side_errors=side)
    return small, large


def test_criterion_6_consistency_trend(report, consistency):
    small, _ = consistency
    decreasing = [bool(row[-1] < row[0]) for row in small]
    detail = "; ".join(f"seed {s}: " + ", ".join(f"{v:.3f}" for v in row)
                       for s, row in zip((1, 2, 3), small))
    report(6, sum(decreasing) >= 2, f"KS at n=500..5000, m=sqrt(n): {detail}")


def test_criterion_7_large_batch_inconsistency(report, consistency):
    small, large = consistency
    ratios = large[:, -1] / small[:, -1]
    report(7, bool(np.all(ratios > 2)),
           "KS(m=0.2n) / KS(m=sqrt(n)) at n=5000: " + ", ".join(f"{r:.2f}" for r in ratios))


def test_criterion_8_inventory(report, shared_tables):
    plan = ExperimentPlan(testbed="inventory", functional="quantile-linear:0.9", macroreps=500,
                          n_truth=1_000_000, seed=0, table_dir=str(shared_tables),
                          threads=os.cpu_count())
    truth = approximate_truth(plan)
    ok, lines = True, []
    for n in plan.n_grid:
        hits = coverage_indicators(plan, n, truth)
        cov = {v: h.mean() for v, h in hits.items()}
        diff = hits["FOB-I"].astype(float) - hits["NOB-I"].astype(float)
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        ok &= diff.mean() >= -2 * se
        line = f"n={n}: FOB-I {cov['FOB-I']:.3f} NOB-I {cov['NOB-I']:.3f}"
        if n == 5000:
            d2 = hits["FOB-I"].astype(float) - hits["NOB-II"].astype(float)
            se2 = d2.std(ddof=1) / math.sqrt(d2.size)
            ok &= 0.90 <= cov["FOB-I"] <= 0.98 and d2.mean() >= -2 * se2
            line += f" NOB-II {cov['NOB-II']:.3f}"
        lines.append(line)
    report(8, ok, f"truth {truth[0]:.2f}; " + "; ".join(lines))


def test_criterion_9_brute_force(report):
    rng = np.random.default_rng(909)
    cases = mismatches = 0
    for n in range(1, 13):
        for m in range(1, min(4, n) + 1):
            for offset in sorted({1, 2, m}):
                x = list(rng.normal(size=n))
                lay = plan_layout(n, m, offset)
                for f, stat, exact in ((MEAN, mean, False),
                                       (marginal_quantiles(0.6), lambda v: order_stat_quantile(v, 0.6), True)):
                    want = table1(x, m, offset, stat)
                    for name in ("ob1", "ob2"):
                        e = build_ensemble(x, lay, f, name)
                        w = want[name]
                        got = [e.errors[:, 0], estimate_bias(e)[0], estimate_error_quantiles(e, 0.8)[0]]
                        ref = [w["errors"], w["bias"], w["quantile"]]
                        if lay.b >= 2:
                            got.append(estimate_variance(e)[0, 0])
                            ref.append(w["var"])
                        # order statistics and single subtractions must agree bit for bit;
                        # anything built from an average is compared at 1e-12 relative
                        exact_idx = {0, 2} if (exact and name == "ob1") else set()
                        same = all(np.array_equal(g, r) if i in exact_idx else _rel_close(g, r, 1e-12)
                                   for i, (g, r) in enumerate(zip(got, ref)))
                        cases += 1
                        mismatches += not same
    report(9, mismatches == 0, f"{cases - mismatches}/{cases} (n, m, offset, functional, method) cases match")


def _run_all_commands(root, threads, capsys):
    """Every subcommand with fixed seeds; returns {name: bytes}."""
    root.mkdir()
    data = root / "data.csv"
    x = np.random.default_rng(10).gamma(2.0, 3.0, size=(300, 2))
    data.write_text("u,v\n" + "\n".join(f"{a},{b}" for a, b in x.tolist()))
    t = ["--threads", str(threads)]
    fast = ["--paths", "20000", "--grid", "256", "--table-dir", str(root / "tables")]
    outputs = {}
    assert main(t + ["table", "--beta", "0.2", "--b", "5,inf", "--seed", "7", "--paths", "20000",
                     "--grid", "256", "--table-dir", str(root / "tables")]) == 0
    outputs["table stdout"] = capsys.readouterr().out.encode()
    for fmt in ("json", "text", "csv"):
        assert main(t + ["analyze", str(data), "--format", fmt, "-o", str(root / f"a.{fmt}")] + fast) == 0
        assert main(t + ["experiment", "inventory", "--n", "200,400", "--macroreps", "40",
                         "--side-reps", "60", "--truth-n", "5000", "--seed", "5", "--format", fmt,
                         "-o", str(root / f"e.{fmt}"), "--hist-dir", str(root / "hist")] + fast) == 0
    assert main(t + ["hist", str(data), "--column", "v", "--bins", "25", "-o", str(root / "h.csv")]) == 0
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "data.csv":
            outputs[str(p.relative_to(root))] = p.read_bytes()
    return outputs


def test_criterion_10_determinism(report, tmp_path, capsys):
    many = max(2, os.cpu_count() or 1)
    a = _run_all_commands(tmp_path / "a", 1, capsys)
    b = _run_all_commands(tmp_path / "b", 1, capsys)
    c = _run_all_commands(tmp_path / "c", many, capsys)
    same = a == b == c
    report(10, same and len(a) > 10,
           f"{len(a)} output files byte-identical across two runs and threads 1 vs {many}: {same}")
