"""Studentized OB-I / OB-II confidence regions.

The region for method M is ``{x : ||sqrt(n) * S^{-1/2} (x - center)||_p <= t}``
where ``S = (m / b) * sum_i e_i e_i^T`` is built from the (uncentered) batch
errors of M, ``center`` is the grand estimate (OB-I) or the batch-mean
estimate (OB-II), and ``t`` is the (1 - alpha) critical value of the limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assess import ErrorEnsemble, Method, build_ensemble
from .batching import BatchLayout
from .functionals import Functional
from .limits import (DEFAULT_GRID, DEFAULT_PATHS, INF, TableCache, critical_values,
                     parse_norm)

BETA_GRAIN = 0.01
INF_B_THRESHOLD = 1000
MAX_CONDITION = 1e12


class DegenerateDesignError(ValueError):
    """Studentizing matrix singular or too ill-conditioned to invert."""


def studentizing_matrix(e: ErrorEnsemble) -> np.ndarray:
    """``(m / b) * sum_i e_i e_i^T`` over the ensemble's raw batch errors."""
    if e.b < 2:
        raise DegenerateDesignError(f"studentizing matrix needs b >= 2, got b={e.b}")
    S = e.layout.m * (e.errors.T @ e.errors) / e.b
    return (S + S.T) / 2


def inverse_sqrt(S: np.ndarray, label: str = "") -> np.ndarray:
    """Symmetric inverse square root; refuses singular or ill-conditioned input."""
    w, V = np.linalg.eigh(S)
    if w[-1] <= 0 or w[0] <= 0 or w[-1] / w[0] > MAX_CONDITION:
        cond = math.inf if w[0] <= 0 else w[-1] / w[0]
        raise DegenerateDesignError(
            f"studentizing matrix is singular or ill-conditioned (condition {cond:.3g}){label}")
    return (V / np.sqrt(w)) @ V.T


@dataclass(frozen=True)
class TableKey:
    method: str
    beta: float
    b: object
    d: int
    p: object
    alpha: float


def table_key(method, layout: BatchLayout, d: int, p, alpha: float) -> TableKey:
    """Limit-table key for a layout.

    beta = m / n rounded to 0.01 unless that moves it by more than half a
    grain; b > 1000 maps to the b = inf limit.
    """
    raw = layout.m / layout.n
    beta = round(raw / BETA_GRAIN) * BETA_GRAIN
    beta = round(beta, 10)
    if abs(beta - raw) > BETA_GRAIN / 2 + 1e-12 or beta <= 0 or beta >= 1:
        beta = raw
    b = INF if layout.b > INF_B_THRESHOLD else layout.b
    return TableKey(Method.parse(method).value, float(beta), b, int(d), parse_norm(p), float(alpha))


class MonteCarloTable:
    """Critical-value source backed by Monte Carlo generation and a disk cache."""

    def __init__(self, cache: Optional[TableCache] = None, n_paths: int = DEFAULT_PATHS,
                 K: int = DEFAULT_GRID, seed: int = 0, threads: Optional[int] = 1):
        self.cache = cache if cache is not None else TableCache()
        self.n_paths = n_paths
        self.K = K
        self.seed = seed
        self.threads = threads

    def entry(self, key: TableKey, alphas=None):
        alphas = [key.alpha] if alphas is None else list(alphas)
        return critical_values(key.method, key.beta, key.b, key.d, key.p, alphas,
                               n_paths=self.n_paths, K=self.K, seed=self.seed,
                               cache=self.cache, threads=self.threads)

    def __call__(self, key: TableKey) -> float:
        return self.entry(key).t(key.alpha)


@dataclass(frozen=True)
class ConfidenceRegion:
    method: Method
    center: np.ndarray
    sigma: np.ndarray        # studentizing matrix
    scale_root: np.ndarray   # sigma^{-1/2}
    n: int
    p: object
    radius: float
    alpha: float
    table_key: Optional[TableKey] = None

    @property
    def d(self) -> int:
        return self.center.size

    def statistic(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.d:
            raise ValueError(f"point has dimension {x.size}, region has dimension {self.d}")
        z = math.sqrt(self.n) * (self.scale_root @ (x - self.center))
        return float(np.linalg.norm(z, ord=np.inf if math.isinf(self.p) else self.p))

    def contains(self, x) -> bool:
        return self.statistic(x) <= self.radius

    def half_width(self) -> float:
        if self.d != 1:
            raise ValueError("half-width is only defined for one-dimensional regions")
        return self.radius * math.sqrt(self.sigma[0, 0]) / math.sqrt(self.n)

    def interval(self) -> tuple:
        h = self.half_width()
        c = float(self.center[0])
        return c - h, c + h


def contains(region: ConfidenceRegion, x) -> bool:
    return region.contains(x)


def interval(region: ConfidenceRegion) -> tuple:
    return region.interval()


def region_from_ensemble(e: ErrorEnsemble, p, alpha: float, table_source=None,
                         radius: Optional[float] = None) -> ConfidenceRegion:
    """Region from a prebuilt ensemble.

    `table_source` is any callable mapping a :class:`TableKey` to a critical
    value; pass `radius` instead to skip the lookup.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = parse_norm(p)
    if e.b < e.d + 1:
        raise DegenerateDesignError(f"need b >= d + 1 batches, got b={e.b}, d={e.d}")
    sigma = studentizing_matrix(e)
    root = inverse_sqrt(sigma, f" (b={e.b}, d={e.d})")
    key = table_key(e.method, e.layout, e.d, p, alpha)
    if radius is None:
        if table_source is None:
            table_source = MonteCarloTable()
        radius = float(table_source(key))
    return ConfidenceRegion(method=e.method, center=e.center.copy(), sigma=sigma,
                            scale_root=root, n=e.layout.n, p=p, radius=radius,
                            alpha=float(alpha), table_key=key)


def build_region(series, layout: BatchLayout, f: Functional, method, p=2, alpha: float = 0.05,
                 table_source=None) -> ConfidenceRegion:
    return region_from_ensemble(build_ensemble(series, layout, f, method), p, alpha, table_source)
