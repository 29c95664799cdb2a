"""Batch layouts over a time-ordered output series.

A layout with batch size ``m`` and offset ``offset`` over ``n`` observations
has ``b = (n - m) // offset + 1`` batches; batch ``i`` (1-based) covers the
observations ``(i-1)*offset + 1 .. (i-1)*offset + m``. Up to ``offset - 1``
trailing observations may fall outside every batch; they still count toward
the grand estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class LayoutError(ValueError):
    """Invalid batch size, offset or batch index."""


@dataclass(frozen=True)
class SampleSeries:
    """An ``n x d`` block of observations in simulation time order."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"series must be 1-D or 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("series needs at least one observation and one column")
        if not np.all(np.isfinite(arr)):
            raise ValueError("series contains NaN or infinite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        if not isinstance(other, SampleSeries):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.all(self.data == other.data))

    __hash__ = None


def as_series(x) -> SampleSeries:
    """Wrap array-like data (or pass a :class:`SampleSeries` through)."""
    if isinstance(x, SampleSeries):
        return x
    return SampleSeries(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BatchLayout:
    n: int
    m: int
    offset: int
    b: int

    @property
    def overlapping(self) -> bool:
        return self.offset < self.m

    @property
    def covered(self) -> int:
        """Number of leading observations that belong to at least one batch."""
        return (self.b - 1) * self.offset + self.m

    def starts(self) -> np.ndarray:
        """0-based start index of every batch."""
        return np.arange(self.b) * self.offset


def plan_layout(n: int, m: int, offset: int) -> BatchLayout:
    """Build the layout for batch size `m` and batch offset `offset`.

    >>> plan_layout(100, 10, 1).b
    91
    """
    n, m, offset = int(n), int(m), int(offset)
    if n < 1:
        raise LayoutError(f"n must be >= 1, got n={n}")
    if m < 1:
        raise LayoutError(f"batch size must be >= 1, got m={m}")
    if m > n:
        raise LayoutError(f"batch size m={m} exceeds series length n={n}")
    if offset < 1:
        raise LayoutError(f"batch offset must be >= 1, got offset={offset}")
    return BatchLayout(n=n, m=m, offset=offset, b=(n - m) // offset + 1)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def batch_size_from_policy(n: int, size_policy) -> int:
    """Resolve a size policy to a batch size.

    `size_policy` is ``"sqrt"``, a float fraction in (0, 1], or an int
    batch size. Strings ``"fraction:0.2"`` and ``"m:50"`` are also accepted.
    """
    if isinstance(size_policy, str):
        key, _, arg = size_policy.partition(":")
        key = key.strip().lower()
        if key == "sqrt":
            return _round_half_up(math.sqrt(n))
        if key in ("fraction", "frac", "beta"):
            return batch_size_from_policy(n, float(arg))
        if key in ("m", "explicit"):
            return batch_size_from_policy(n, int(arg))
        raise LayoutError(f"unknown batch size policy {size_policy!r}")
    if isinstance(size_policy, (bool, np.bool_)):
        raise LayoutError("batch size policy cannot be a boolean")
    if isinstance(size_policy, (int, np.integer)):
        return int(size_policy)
    beta = float(size_policy)
    if not 0.0 < beta <= 1.0:
        raise LayoutError(f"batch fraction must lie in (0, 1], got {beta}")
    return _round_half_up(beta * n)


def layout_from_policy(n: int, size_policy="sqrt", overlap="full") -> BatchLayout:
    """Expand a (size policy, overlap policy) pair into a layout.

    `overlap` is ``"full"`` (offset 1), ``"none"`` (offset m) or an int offset.
    """
    m = batch_size_from_policy(n, size_policy)
    if isinstance(overlap, str):
        if overlap == "full":
            offset = 1
        elif overlap == "none":
            offset = m
        else:
            raise LayoutError(f"unknown overlap policy {overlap!r}")
    else:
        offset = int(overlap)
    return plan_layout(n, m, offset)


def batch_slice(series: SampleSeries, layout: BatchLayout, i: int) -> SampleSeries:
    """Observations of batch `i` (1-based)."""
    if layout.n != series.n:
        raise LayoutError(f"layout is for n={layout.n} but series has n={series.n}")
    if not 1 <= i <= layout.b:
        raise IndexError(f"batch index {i} out of range 1..{layout.b}")
    start = (i - 1) * layout.offset
    return SampleSeries(series.data[start:start + layout.m])


def batch_windows(series: SampleSeries, layout: BatchLayout) -> np.ndarray:
    """Read-only ``(b, m, d)`` view of all batches."""
    if layout.n != series.n:
        raise LayoutError(f"layout is for n={layout.n} but series has n={series.n}")
    win = np.lib.stride_tricks.sliding_window_view(series.data, layout.m, axis=0)
    # win has shape (n - m + 1, d, m)
    return np.moveaxis(win[::layout.offset][: layout.b], 2, 1)
