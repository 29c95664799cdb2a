from __future__ import annotations

import math

import numpy as np
import pytest

from batchuq.assess import build_ensemble
from batchuq.batching import layout_from_policy, plan_layout
from batchuq.confidence import (DegenerateDesignError, MonteCarloTable, build_region,
                                region_from_ensemble, studentizing_matrix, table_key)
from batchuq.functionals import MEAN
from batchuq.limits import INF, TableCache


def test_interval_by_hand():
    x = np.array([1.0, 3.0, 2.0, 6.0])
    e = build_ensemble(x, plan_layout(4, 2, 1), MEAN, "ob1")   # errors -1, -0.5, 1
    sigma = 2 * (1 + 0.25 + 1) / 3
    assert studentizing_matrix(e)[0, 0] == pytest.approx(sigma)
    r = region_from_ensemble(e, 2, 0.05, radius=2.0)
    half = 2.0 * math.sqrt(sigma) / 2.0
    assert r.interval() == pytest.approx((3.0 - half, 3.0 + half))
    assert r.contains(3.0 + half * 0.999) and not r.contains(3.0 + half * 1.001)


def test_ob2_centers_at_batch_mean():
    x = np.array([1.0, 3.0, 2.0, 6.0])
    e = build_ensemble(x, plan_layout(4, 2, 1), MEAN, "ob2")
    r = region_from_ensemble(e, 2, 0.05, radius=3.0)
    assert r.center[0] == pytest.approx(17 / 6)


def test_two_dimensional_shapes(rng):
    x = rng.normal(size=(60, 2))
    e = build_ensemble(x, plan_layout(60, 12, 1), MEAN, "ob1")
    S = studentizing_matrix(e)
    for p in (1, 2, INF):
        r = region_from_ensemble(e, p, 0.05, radius=2.5)
        for _ in range(50):
            pt = r.center + rng.normal(scale=0.3, size=2)
            z = math.sqrt(60) * np.linalg.solve(np.linalg.cholesky(S), pt - r.center)
            if p == 2:
                # Euclidean norm is invariant to the choice of matrix root
                assert r.contains(pt) == (np.linalg.norm(z) <= 2.5)
        with pytest.raises(ValueError):
            r.half_width()


def test_degenerate_designs():
    const = np.full(30, 4.0)
    with pytest.raises(DegenerateDesignError):
        build_region(const, plan_layout(30, 5, 1), MEAN, "ob1", table_source=lambda k: 2.0)
    x = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(DegenerateDesignError):
        build_region(x, plan_layout(10, 5, 5), MEAN, "ob1", table_source=lambda k: 2.0)


def test_table_key_rounding():
    k = table_key("ob1", layout_from_policy(5000, 0.2, "full"), 1, 2, 0.05)
    assert (k.beta, k.b) == (0.2, INF)
    k = table_key("ob2", layout_from_policy(500, 0.2, "none"), 1, 2, 0.05)
    assert (k.beta, k.b) == (0.2, 5)
    k = table_key("ob1", plan_layout(1000, 203, 1), 1, 2, 0.05)
    assert k.beta == 0.2


def test_coverage_of_iid_mean(tmp_path):
    table = MonteCarloTable(TableCache(tmp_path), n_paths=20_000, K=512, seed=1)
    rng = np.random.default_rng(11)
    hits = []
    for _ in range(400):
        x = rng.normal(size=100)
        r = build_region(x, layout_from_policy(100, 0.2, "none"), MEAN, "ob1", table_source=table)
        hits.append(r.contains(0.0))
    assert 0.92 <= np.mean(hits) <= 0.98
