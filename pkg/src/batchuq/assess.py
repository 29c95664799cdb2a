"""OB-I / OB-II batch-error ensembles and the plug-in assessment estimators.

OB-I centers each batch estimate at the grand estimate computed on the full
series; OB-II centers at the average of the batch estimates. Errors are
stored unscaled together with ``rescale = sqrt(m / n)``, which maps them to
the scale of the full-data estimator error.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .batching import BatchLayout, LayoutError, as_series
from .functionals import Functional, batch_estimates, evaluate

_INDEX_EPS = 1e-9


class Method(str, Enum):
    OB1 = "ob1"
    OB2 = "ob2"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, Method):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"ob1": cls.OB1, "obi": cls.OB1, "ob2": cls.OB2, "obii": cls.OB2}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown batching method {value!r}; use ob1 or ob2") from None

    @property
    def label(self) -> str:
        return "OB-I" if self is Method.OB1 else "OB-II"


class DegenerateLayoutError(LayoutError):
    """Too few batches for the requested estimator."""


@dataclass(frozen=True)
class ErrorEnsemble:
    method: Method
    errors: np.ndarray             # (b, d), unscaled
    batch_values: np.ndarray       # (b, d), estimator on each batch
    grand_estimate: np.ndarray     # estimator on the whole series
    batch_mean_estimate: np.ndarray
    layout: BatchLayout

    @property
    def b(self) -> int:
        return self.layout.b

    @property
    def d(self) -> int:
        return self.errors.shape[1]

    @property
    def rescale(self) -> float:
        return float(np.sqrt(self.layout.m / self.layout.n))

    @property
    def error_mean(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    @property
    def center(self) -> np.ndarray:
        return self.grand_estimate if self.method is Method.OB1 else self.batch_mean_estimate

    def scaled_errors(self, scale: str = "m") -> np.ndarray:
        """Errors times sqrt(m) (``scale="m"``) or sqrt(m/n) (``scale="m/n"``)."""
        if scale == "m":
            return np.sqrt(self.layout.m) * self.errors
        if scale == "m/n":
            return self.rescale * self.errors
        raise ValueError(f"scale must be 'm' or 'm/n', got {scale!r}")


def ensemble_from_estimates(batch_values, grand_estimate, layout: BatchLayout, method) -> ErrorEnsemble:
    """Assemble an ensemble from precomputed batch and grand estimates.

    Lets callers evaluate the functional once per layout and derive both
    OB-I and OB-II ensembles from it.
    """
    method = Method.parse(method)
    vals = np.atleast_2d(np.asarray(batch_values, dtype=float))
    if vals.shape[0] != layout.b:
        raise LayoutError(f"{vals.shape[0]} batch estimates for a layout with b={layout.b}")
    grand = np.asarray(grand_estimate, dtype=float).ravel()
    bar = vals.mean(axis=0)
    center = grand if method is Method.OB1 else bar
    return ErrorEnsemble(method=method, errors=vals - center, batch_values=vals,
                         grand_estimate=grand, batch_mean_estimate=bar, layout=layout)


def build_ensemble(series, layout: BatchLayout, f: Functional, method) -> ErrorEnsemble:
    series = as_series(series)
    if layout.n != series.n:
        raise LayoutError(f"layout is for n={layout.n} but series has n={series.n}")
    return ensemble_from_estimates(batch_estimates(f, series, layout),
                                   evaluate(f, series), layout, method)


def estimate_bias(e: ErrorEnsemble) -> np.ndarray:
    if e.method is Method.OB2:
        return np.zeros(e.d)
    return e.rescale * e.error_mean


def estimate_variance(e: ErrorEnsemble) -> np.ndarray:
    """Plug-in variance of the estimator error, a ``(d, d)`` matrix."""
    if e.b < 2:
        raise DegenerateLayoutError(f"variance estimate needs at least 2 batches, got b={e.b}")
    scale = e.layout.m / e.layout.n
    second = e.errors.T @ e.errors / e.b
    if e.method is Method.OB1:
        eb = e.error_mean
        second = second - np.outer(eb, eb)
    out = scale * second
    return (out + out.T) / 2


def estimate_stddev(e: ErrorEnsemble) -> np.ndarray:
    """Per-coordinate standard deviation, ``sqrt(diag(variance))``."""
    return np.sqrt(np.clip(np.diag(estimate_variance(e)), 0.0, None))


def error_quantile_index(gamma: float, b: int) -> int:
    """1-based order index ``floor(gamma * b)`` clamped to ``1..b``."""
    return min(max(int(np.floor(gamma * b + _INDEX_EPS)), 1), b)


def estimate_error_quantiles(e: ErrorEnsemble, gamma) -> np.ndarray:
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (e.d,))
    if np.any(gammas <= 0) or np.any(gammas >= 1):
        raise ValueError(f"quantile levels must lie in (0, 1), got {gamma}")
    out = np.empty(e.d)
    for j, g in enumerate(gammas):
        k = error_quantile_index(g, e.b) - 1
        out[j] = np.partition(e.errors[:, j], k)[k]
    return e.rescale * out


def error_cdf(e: ErrorEnsemble, t) -> float:
    """Fraction of batches with ``sqrt(m) * error <= t`` in every coordinate."""
    t = np.broadcast_to(np.asarray(t, dtype=float), (e.d,))
    inside = np.all(e.scaled_errors("m") <= t, axis=1)
    return float(inside.mean())
