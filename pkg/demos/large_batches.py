"""Large batches: fine for intervals, wrong for error distributions.

For the 0.99-quantile of gamma data we compare the histogram of
sqrt(m)-scaled batch errors with the sampling distribution of
sqrt(n)-scaled errors, measured by the two-sample KS distance. With
m = sqrt(n) the distance shrinks as n grows; with m = 0.2 n it does not.

Run:  python3 demos/large_batches.py
"""
from __future__ import annotations

from batchuq.harness import ExperimentPlan, approximate_truth, consistency_distances

plan = ExperimentPlan(testbed="gamma", functional="quantile-linear:0.99", side_reps=4000,
                      n_truth=200_000, n_grid=(500, 2000, 5000))
truth = approximate_truth(plan)
side = {}
small = consistency_distances(plan, "sqrt", truth=truth, side_errors=side)
large = consistency_distances(plan, 0.2, truth=truth, side_errors=side)

print(f"{'':>10}" + "".join(f"{'n=' + str(n):>10}" for n in plan.n_grid))
for label, d in (("m=sqrt(n)", small), ("m=0.2n", large)):
    for seed, row in zip((1, 2, 3), d):
        print(f"{label + ' s' + str(seed):>12}" + "".join(f"{v:10.3f}" for v in row)[2:])
