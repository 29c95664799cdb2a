"""Point-estimator functionals mapping a series to a d-vector."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .batching import BatchLayout, as_series, batch_slice, batch_windows

# guards ceil/floor of gamma * k against products like 0.29 * 100 = 28.999999999999996
_INDEX_EPS = 1e-9


class FunctionalError(ValueError):
    """Bad functional definition or a failed evaluation."""


def order_index_ceil(gamma: float, k: int) -> int:
    """1-based index ``ceil(gamma * k)``, clipped to ``1..k``."""
    return min(max(math.ceil(gamma * k - _INDEX_EPS), 1), k)


def quantile(values, gamma: float) -> float:
    """Left-continuous empirical quantile: the ``ceil(gamma*k)``-th order statistic.

    No interpolation is done, so the result is always one of `values`.

    >>> quantile(range(1, 101), 0.9)
    90.0
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise FunctionalError("quantile of an empty sample")
    if not 0.0 < gamma < 1.0:
        raise FunctionalError(f"quantile level must lie in (0, 1), got {gamma}")
    idx = order_index_ceil(gamma, v.size) - 1
    return float(np.partition(v, idx)[idx])


def quantile_linear(values, gamma: float) -> float:
    """Linearly interpolated quantile at position ``gamma * (k - 1)`` of the sorted sample.

    Same convention as ``numpy.quantile``'s default method.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise FunctionalError("quantile of an empty sample")
    if not 0.0 < gamma < 1.0:
        raise FunctionalError(f"quantile level must lie in (0, 1), got {gamma}")
    return float(_linear_along(v[None, :], gamma)[0])


def _linear_along(x: np.ndarray, gamma: float) -> np.ndarray:
    """Row-wise interpolated quantile of a 2-D array."""
    k = x.shape[1]
    h = gamma * (k - 1)
    lo = int(math.floor(h))
    hi = min(lo + 1, k - 1)
    part = np.partition(x, [lo, hi] if hi != lo else lo, axis=1)
    return part[:, lo] + (h - lo) * (part[:, hi] - part[:, lo])


@dataclass(frozen=True)
class Functional:
    """Estimator functional.

    Parameters
    ----------
    kind : {"mean", "quantile", "custom"}
    gammas : tuple of float, optional
        Per-coordinate quantile levels (``kind="quantile"``). A single level
        is broadcast over every column.
    interpolation : {"order", "linear"}
        ``"order"`` takes the ``ceil(gamma*k)``-th order statistic,
        ``"linear"`` interpolates like ``numpy.quantile``.
    evaluator : callable, optional
        ``evaluator(data) -> array`` for ``kind="custom"``; receives the
        ``(k, d)`` observation block and must be deterministic.
    output_dim : int, optional
        Declared output dimension of a custom evaluator.
    """

    kind: str
    gammas: tuple = ()
    interpolation: str = "order"
    evaluator: Optional[Callable] = None
    output_dim: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("mean", "quantile", "custom"):
            raise FunctionalError(f"unknown functional kind {self.kind!r}")
        if self.kind == "quantile":
            if not self.gammas:
                raise FunctionalError("quantile functional needs at least one level")
            if self.interpolation not in ("order", "linear"):
                raise FunctionalError(f"unknown quantile interpolation {self.interpolation!r}")
            for g in self.gammas:
                if not 0.0 < g < 1.0:
                    raise FunctionalError(f"quantile level must lie in (0, 1), got {g}")
        if self.kind == "custom" and not callable(self.evaluator):
            raise FunctionalError("custom functional needs a callable evaluator")

    def dim(self, d: int) -> int:
        """Output dimension on a series with `d` columns."""
        if self.kind == "custom":
            return self.output_dim if self.output_dim is not None else d
        return d

    def levels(self, d: int) -> np.ndarray:
        if len(self.gammas) == 1:
            return np.full(d, self.gammas[0])
        if len(self.gammas) != d:
            raise FunctionalError(
                f"{len(self.gammas)} quantile levels given for a {d}-column series")
        return np.asarray(self.gammas, dtype=float)

    def __str__(self):
        if self.kind == "quantile":
            prefix = "quantile" if self.interpolation == "order" else "quantile-linear"
            return prefix + ":" + ",".join(f"{g:g}" for g in self.gammas)
        if self.kind == "custom":
            return f"custom:{getattr(self.evaluator, '__name__', 'evaluator')}"
        return "mean"


MEAN = Functional("mean")


def marginal_quantiles(*gammas: float, interpolation: str = "order") -> Functional:
    return Functional("quantile", tuple(float(g) for g in gammas), interpolation=interpolation)


def custom(evaluator: Callable, output_dim: Optional[int] = None) -> Functional:
    return Functional("custom", evaluator=evaluator, output_dim=output_dim)


def parse_functional(name: str) -> Functional:
    """Parse ``"mean"``, ``"quantile:0.99"``, ``"quantile:0.9,0.95"`` or ``"quantile-linear:0.99"``."""
    text = name.strip().lower()
    if text == "mean":
        return MEAN
    key, sep, arg = text.partition(":")
    if key in ("quantile", "quantile-linear") and sep:
        try:
            gammas = [float(tok) for tok in arg.split(",") if tok.strip()]
        except ValueError as exc:
            raise FunctionalError(f"bad quantile levels in {name!r}") from exc
        return marginal_quantiles(*gammas, interpolation="order" if key == "quantile" else "linear")
    raise FunctionalError(f"cannot parse functional {name!r}; expected 'mean', 'quantile:<levels>' "
                          "or 'quantile-linear:<levels>'")


def evaluate(f: Functional, series) -> np.ndarray:
    """Evaluate `f` on the whole series; returns a length-d vector."""
    series = as_series(series)
    if f.kind == "mean":
        return series.data.mean(axis=0)
    if f.kind == "quantile":
        levels = f.levels(series.d)
        q = quantile if f.interpolation == "order" else quantile_linear
        return np.array([q(series.data[:, j], g) for j, g in enumerate(levels)])
    return _evaluate_custom(f, series.data)


def _evaluate_custom(f: Functional, data: np.ndarray) -> np.ndarray:
    try:
        out = np.atleast_1d(np.asarray(f.evaluator(data), dtype=float)).ravel()
    except Exception as exc:
        raise FunctionalError(f"custom functional {f} failed on a block of {len(data)} rows: {exc}") from exc
    expected = f.dim(data.shape[1])
    if out.size != expected:
        raise FunctionalError(f"custom functional returned {out.size} values, expected {expected}")
    if not np.all(np.isfinite(out)):
        raise FunctionalError(f"custom functional {f} returned non-finite values")
    return out


def batch_estimates(f: Functional, series, layout: BatchLayout) -> np.ndarray:
    """Evaluate `f` on every batch; returns a ``(b, dim)`` array."""
    series = as_series(series)
    if f.kind == "custom":
        return np.vstack([_evaluate_custom(f, batch_slice(series, layout, i).data)
                          for i in range(1, layout.b + 1)])
    windows = batch_windows(series, layout)
    if f.kind == "mean":
        return windows.mean(axis=1)
    levels = f.levels(series.d)
    out = np.empty((layout.b, series.d))
    for j, g in enumerate(levels):
        if f.interpolation == "linear":
            out[:, j] = _linear_along(windows[:, :, j], g)
            continue
        k = order_index_ceil(g, layout.m) - 1
        out[:, j] = np.partition(windows[:, :, j], k, axis=1)[:, k]
    return out

