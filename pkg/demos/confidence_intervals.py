"""Confidence intervals from one run of an (s, S) inventory simulation.

A single run of daily costs is autocorrelated, so a textbook t-interval
is too narrow. Large overlapping batches (m = 0.2 n) with the OB-I
critical value give an interval that accounts for the dependence. The
critical values come from Monte Carlo over Wiener paths and are cached in
./tables (or $BATCHUQ_TABLE_DIR); the first run takes a minute or two.

Run:  python3 demos/confidence_intervals.py
"""
from __future__ import annotations

import math

from scipy import stats

from batchuq import InventoryConfig, MEAN, build_region, layout_from_policy, simulate_inventory
from batchuq.confidence import MonteCarloTable

cfg = InventoryConfig(horizon=5000)
series = simulate_inventory(cfg, rng=7)
x = series.data[:, 0]
print(f"n = {series.n} days, mean daily cost {x.mean():.1f}")

naive = stats.t.ppf(0.975, series.n - 1) * x.std(ddof=1) / math.sqrt(series.n)
print(f"iid t-interval half-width         {naive:7.1f}   (ignores autocorrelation)")

table = MonteCarloTable(n_paths=20_000, K=1024)
for method, overlap in (("ob1", "full"), ("ob1", "none"), ("ob2", "full"), ("ob2", "none")):
    layout = layout_from_policy(series.n, 0.2, overlap)
    r = build_region(series, layout, MEAN, method, alpha=0.05, table_source=table)
    lo, hi = r.interval()
    print(f"{method} {overlap:<4} b={layout.b:>4}  t={r.radius:5.2f}  [{lo:7.1f}, {hi:7.1f}]"
          f"  half-width {r.half_width():6.1f}")
