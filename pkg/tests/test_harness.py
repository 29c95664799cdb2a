from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from batchuq.harness import (ExperimentPlan, approximate_truth, consistency_distances,
                             coverage_indicators, histogram_export, ks_distance, run_experiment,
                             sampling_distribution, reference_summaries)


def small_plan(tmp_path, **kw):
    base = dict(testbed="gamma", functional="quantile-linear:0.9", n_grid=(100, 200), macroreps=60,
                side_reps=300, n_truth=20_000, table_paths=5000, table_grid=256,
                table_dir=str(tmp_path / "tables"))
    base.update(kw)
    return ExperimentPlan(**base)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40),
       st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_ks_matches_scipy(a, b):
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)


def test_histogram_export(tmp_path):
    out = tmp_path / "h.csv"
    counts, edges = histogram_export([0.5, 1.5, 1.6, 3.9], 4, out, (0.0, 4.0))
    lines = out.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count"
    assert lines[1:] == ["0.0,1.0,1", "1.0,2.0,2", "2.0,3.0,0", "3.0,4.0,1"]


def test_reference_summaries():
    r = reference_summaries(np.arange(10.0), 0.8, n=5)
    assert r.bias[0] == 4.5 and r.quantile[0] == 7.0
    assert r.stddev[0] == pytest.approx(np.arange(10.0).std())


def test_experiment_is_deterministic_across_threads(tmp_path):
    a = run_experiment(small_plan(tmp_path, threads=1)).to_json()
    b = run_experiment(small_plan(tmp_path, threads=3)).to_json()
    assert a == b
    rep = run_experiment(small_plan(tmp_path))
    cell = rep.cell(200, "FOB-I")
    assert 0.7 <= cell["coverage"] <= 1.0
    assert rep.cell(200, "NOB-II")["rmse_bias"] is None
    assert rep.to_csv().splitlines()[0].startswith("n,variant,coverage")


def test_constant_testbed_collapses(tmp_path):
    plan = small_plan(tmp_path, testbed="constant", constant_value=3.0, functional="mean",
                      macroreps=5, side_reps=10)
    rep = run_experiment(plan)
    for c in rep.cells:
        assert c["coverage"] == 1.0 and c["half_width"] == 0.0
        assert c["rmse_stddev"] == 0.0


def test_crn_pairs_variants(tmp_path):
    plan = small_plan(tmp_path, testbed="coin", functional="mean", macroreps=40)
    hits = coverage_indicators(plan, 200, np.zeros(1))
    assert set(hits) == {"FOB-I", "NOB-I", "FOB-II", "NOB-II"}
    assert all(h.shape == (40,) for h in hits.values())
    # a variant's data does not depend on which other variants run alongside it
    alone = coverage_indicators(plan, 200, np.zeros(1), ["NOB-II"])
    assert np.array_equal(alone["NOB-II"], hits["NOB-II"])


def test_consistency_distance_shape(tmp_path):
    plan = small_plan(tmp_path)
    truth = approximate_truth(plan)
    side = {n: sampling_distribution(plan, n, truth) for n in plan.n_grid}
    d = consistency_distances(plan, "sqrt", truth=truth, side_errors=side)
    assert d.shape == (3, 2)
    assert np.all((d > 0) & (d <= 1))
