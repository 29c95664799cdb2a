"""Output generators: iid gamma draws and an (s, S) inventory simulation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .batching import SampleSeries


def gen_gamma_iid(n: int, shape: float = 1.0, scale: float = 100.0, rng=None) -> SampleSeries:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if shape <= 0 or scale <= 0:
        raise ValueError(f"gamma shape and scale must be positive, got {shape}, {scale}")
    rng = np.random.default_rng(rng)
    return SampleSeries(rng.gamma(shape, scale, size=n))


def quantile_clt_variance(gamma: float, pdf_at_quantile: float) -> float:
    """Asymptotic variance ``gamma (1 - gamma) / f(q)^2`` of sqrt(n) times a sample quantile's error."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not pdf_at_quantile > 0:
        raise ValueError("density at the quantile must be positive")
    return gamma * (1.0 - gamma) / pdf_at_quantile ** 2


@dataclass(frozen=True)
class InventoryConfig:
    """(s, S) policy with backlogging.

    Demand is gamma with the given mean and variance (moment matched; zero
    variance means deterministic demand). Lead times are Poisson, counted
    in days; an order placed at the end of day j arrives at the start of
    day j + L + 1.
    """

    s: float = 1000.0
    S: float = 2000.0
    demand_mean: float = 100.0
    demand_var: float = 10000.0
    lead_mean: float = 6.0
    backorder_cost: float = 4.0
    holding_cost: float = 1.0
    fixed_cost: float = 36.0
    variable_cost: float = 2.0
    warmup: int = 1000
    horizon: int = 500
    initial_inventory: float | None = None

    def __post_init__(self):
        if not self.s < self.S:
            raise ValueError(f"need s < S, got s={self.s}, S={self.S}")
        costs = (self.backorder_cost, self.holding_cost, self.fixed_cost, self.variable_cost)
        if min(costs) < 0:
            raise ValueError("costs must be nonnegative")
        if self.demand_mean < 0 or self.demand_var < 0 or self.lead_mean < 0:
            raise ValueError("demand moments and lead-time mean must be nonnegative")
        if self.warmup < 0 or self.horizon < 1:
            raise ValueError("need warmup >= 0 and horizon >= 1")

    @property
    def demand_shape(self) -> float:
        return self.demand_mean ** 2 / self.demand_var

    @property
    def demand_scale(self) -> float:
        return self.demand_var / self.demand_mean

    @property
    def start_level(self) -> float:
        return self.S if self.initial_inventory is None else self.initial_inventory

    def with_horizon(self, horizon: int) -> "InventoryConfig":
        return InventoryConfig(**{**asdict(self), "horizon": int(horizon)})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "InventoryConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown inventory config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "InventoryConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _draw_inputs(cfg: InventoryConfig, days: int, rng):
    if cfg.demand_var == 0 or cfg.demand_mean == 0:
        demand = np.full(days, float(cfg.demand_mean))
    else:
        demand = rng.gamma(cfg.demand_shape, cfg.demand_scale, size=days)
    leads = rng.poisson(cfg.lead_mean, size=days) if cfg.lead_mean > 0 else np.zeros(days, dtype=np.int64)
    return demand, leads


def simulate_inventory_runs(cfg: InventoryConfig, rngs) -> np.ndarray:
    """Daily costs of several independent runs, shape ``(len(rngs), horizon)``.

    Each run draws its demands and lead times from its own generator, so a
    run's output does not depend on which other runs share the call.

    Daily order of events: scheduled orders arrive, demand is subtracted
    (backlog allowed), the end-of-day level W is recorded, and if the
    inventory position (W plus outstanding orders) is at or below s an
    order of S minus the position is placed. The day's cost is the
    fixed plus variable ordering cost when an order is placed, plus
    h * W when W > 0 or -b * W when W < 0.
    """
    days = cfg.warmup + cfg.horizon
    inputs = [_draw_inputs(cfg, days, np.random.default_rng(r)) for r in rngs]
    R = len(inputs)
    demand = np.stack([x[0] for x in inputs])
    leads = np.stack([x[1] for x in inputs])
    width = days + int(leads.max(initial=0)) + 2
    pipeline = np.zeros((R, width))
    level = np.full(R, float(cfg.start_level))
    on_order = np.zeros(R)
    n_orders = np.zeros(R, dtype=np.int64)
    rows = np.arange(R)
    out = np.empty((R, cfg.horizon))
    for j in range(days):
        arriving = pipeline[:, j]
        level += arriving
        on_order -= arriving
        level -= demand[:, j]
        position = level + on_order
        order = position <= cfg.s
        qty = np.where(order, cfg.S - position, 0.0)
        cost = (np.where(order, cfg.fixed_cost + cfg.variable_cost * qty, 0.0)
                + cfg.holding_cost * np.maximum(level, 0.0)
                + cfg.backorder_cost * np.maximum(-level, 0.0))
        if order.any():
            r = rows[order]
            due = j + 1 + leads[r, n_orders[r]]
            pipeline[r, due] += qty[r]
            on_order[r] += qty[r]
            n_orders[r] += 1
        if j >= cfg.warmup:
            out[:, j - cfg.warmup] = cost
    return out


def simulate_inventory(cfg: InventoryConfig, rng=None) -> SampleSeries:
    """One run of daily costs after the warm-up period."""
    return SampleSeries(simulate_inventory_runs(cfg, [np.random.default_rng(rng)])[0])
