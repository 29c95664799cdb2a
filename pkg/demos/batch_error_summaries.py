"""How well do batch errors describe the error of a sample quantile?

We estimate the 0.99-quantile of an exponential distribution (mean 100)
from n = 2000 iid draws. The true quantile is known in closed form, so we
can compare the batch-based bias, standard deviation and 0.8-quantile of
the estimator error with a brute-force sampling distribution.

Run:  python3 demos/batch_error_summaries.py
"""
from __future__ import annotations

import math

import numpy as np

from batchuq import (build_ensemble, estimate_bias, estimate_error_quantiles, estimate_stddev,
                     gen_gamma_iid, layout_from_policy, parse_functional)
from batchuq.functionals import evaluate

n = 2000
f = parse_functional("quantile-linear:0.99")
truth = 100 * math.log(100)

# One data set, batches of size sqrt(n).
series = gen_gamma_iid(n, rng=1)
print(f"estimate {evaluate(f, series)[0]:.1f}, truth {truth:.1f}\n")
print(f"{'layout':<22} {'bias':>8} {'stddev':>8} {'q0.8':>8}")
for method in ("ob1", "ob2"):
    for overlap in ("full", "none"):
        layout = layout_from_policy(n, "sqrt", overlap)
        e = build_ensemble(series, layout, f, method)
        bias = "-" if method == "ob2" else f"{estimate_bias(e)[0]:8.2f}"
        print(f"{method} {overlap:<4} (m={layout.m}, b={layout.b:>4})"
              f" {bias:>8} {estimate_stddev(e)[0]:8.2f} {estimate_error_quantiles(e, 0.8)[0]:8.2f}")

# Reference: the sampling distribution of the error over many data sets.
rng = np.random.default_rng(2)
errors = np.array([np.quantile(rng.exponential(100, n), 0.99) for _ in range(4000)]) - truth
print(f"\n{'sampling distribution':<22} {errors.mean():8.2f} {errors.std():8.2f} "
      f"{np.quantile(errors, 0.8):8.2f}")
