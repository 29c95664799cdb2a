"""Where the critical values come from.

With non-overlapping batches and OB-II centering, the Studentized
statistic is a rescaled Student t with b - 1 degrees of freedom, which
gives an exact check on the Monte Carlo machinery. With many small
batches the limit is Gaussian; with large overlapping batches the
critical value sits well above 1.96.

Run:  python3 demos/critical_values.py
"""
from __future__ import annotations

import math

from scipy import stats

from batchuq import critical_values
from batchuq.limits import INF

print("OB-II, non-overlapping, beta = 1/b")
for b in (3, 5, 10):
    e = critical_values("ob2", 1 / b, b, 1, 2, [0.05], n_paths=200_000, K=1024, seed=1)
    exact = math.sqrt(b / (b - 1)) * stats.t.ppf(0.975, b - 1)
    print(f"  b={b:>2}: Monte Carlo {e.t(0.05):.3f} +- {e.stderr(0.05):.3f}, exact {exact:.3f}")

print("\nOB-I critical values at alpha = 0.05")
for beta, b in ((0.02, 100), (0.1, INF), (0.2, INF), (0.4, INF)):
    e = critical_values("ob1", beta, b, 1, 2, [0.05], n_paths=20_000, K=1024, seed=1)
    print(f"  beta={beta:<4} b={b!s:>4}: {e.t(0.05):.3f}")
