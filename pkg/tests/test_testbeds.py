from __future__ import annotations

import json

import numpy as np
import pytest
from scipy import stats

from batchuq.testbeds import (InventoryConfig, gen_gamma_iid, quantile_clt_variance,
                              simulate_inventory, simulate_inventory_runs)


def test_gamma_generator(rng):
    s = gen_gamma_iid(200_000, rng=rng)
    assert s.data.mean() == pytest.approx(100, rel=0.01)
    assert np.quantile(s.data, 0.99) == pytest.approx(stats.expon(scale=100).ppf(0.99), rel=0.03)


def test_quantile_clt_variance_for_exponential():
    q = stats.expon(scale=100).ppf(0.99)
    v = quantile_clt_variance(0.99, stats.expon(scale=100).pdf(q))
    assert v == pytest.approx(0.99 * 0.01 / (0.01 / 100) ** 2)


def test_inventory_hand_trace():
    # start at S = 5, demand 2 per day, instant delivery; order when position <= 2
    cfg = InventoryConfig(s=2, S=5, demand_mean=2, demand_var=0, lead_mean=0, fixed_cost=36,
                          variable_cost=2, holding_cost=1, backorder_cost=4, warmup=0, horizon=5)
    # levels 3, 1 (order 4), 3, 1 (order 4), 3
    assert list(simulate_inventory(cfg, 0).data[:, 0]) == [3.0, 45.0, 3.0, 45.0, 3.0]


def test_backlog_costs():
    cfg = InventoryConfig(s=0, S=3, demand_mean=2, demand_var=0, lead_mean=0, fixed_cost=0,
                          variable_cost=0, holding_cost=1, backorder_cost=4, warmup=0, horizon=4)
    # levels 1, -1 (order 4), 1, -1
    assert list(simulate_inventory(cfg, 0).data[:, 0]) == [1.0, 4.0, 1.0, 4.0]


def test_no_backlog_with_instant_delivery_and_small_demand():
    cfg = InventoryConfig(s=10, S=25, demand_mean=6, demand_var=0.25, lead_mean=0, fixed_cost=0,
                          variable_cost=0, holding_cost=0, backorder_cost=1, warmup=0, horizon=2000)
    # a day that starts above s loses at most one demand (< s here), a day after an order starts at S
    assert simulate_inventory(cfg, 3).data.max() == 0.0


def test_runs_do_not_depend_on_grouping():
    cfg = InventoryConfig(warmup=50, horizon=200)
    seqs = [np.random.SeedSequence(7, spawn_key=(k,)) for k in range(3)]
    together = simulate_inventory_runs(cfg, seqs)
    alone = simulate_inventory_runs(cfg, seqs[1:2])
    assert np.array_equal(together[1], alone[0])
    assert np.all(together >= 0)


def test_config_json_roundtrip(tmp_path):
    cfg = InventoryConfig(s=500, S=1500, lead_mean=2)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert InventoryConfig.from_json(path) == cfg
    with pytest.raises(ValueError):
        InventoryConfig.from_dict({"s": 1, "S": 2, "colour": "red"})
    with pytest.raises(ValueError):
        InventoryConfig(s=5, S=5)


def test_moment_matched_demand():
    cfg = InventoryConfig()
    assert cfg.demand_shape * cfg.demand_scale == pytest.approx(100)
    assert cfg.demand_shape * cfg.demand_scale ** 2 == pytest.approx(10_000)


def test_default_inventory_is_stationary_and_seed_consistent():
    from batchuq import build_ensemble, estimate_stddev, layout_from_policy, parse_functional
    from batchuq.functionals import MEAN, evaluate

    cfg = InventoryConfig(horizon=100_000)
    runs = simulate_inventory_runs(cfg, [np.random.SeedSequence(1), np.random.SeedSequence(2)])
    # first- and second-half means, standard errors from non-overlapping batch means
    halves = runs[0].reshape(2, -1)
    se = [estimate_stddev(build_ensemble(h, layout_from_policy(h.size, 0.02, "none"), MEAN, "ob1"))[0]
          for h in halves]
    assert abs(halves[0].mean() - halves[1].mean()) < 3 * np.hypot(*se)
    # 0.9-quantile from two disjoint seeds
    f = parse_functional("quantile-linear:0.9")
    est, se = [], []
    for r in runs:
        e = build_ensemble(r, layout_from_policy(r.size, 0.02, "full"), f, "ob1")
        est.append(evaluate(f, r)[0])
        se.append(estimate_stddev(e)[0])
    assert est[0] > 0 and abs(est[0] - est[1]) < 3 * np.hypot(*se)
