"""Independent, deliberately naive reference implementations used by the tests."""
from __future__ import annotations

import math


def starts(n, m, offset):
    out, s = [], 0
    while s + m <= n:
        out.append(s)
        s += offset
    return out


def mean(xs):
    return math.fsum(xs) / len(xs)


def order_stat_quantile(xs, gamma):
    k = max(1, math.ceil(gamma * len(xs) - 1e-9))
    return sorted(xs)[k - 1]


def linear_quantile(xs, gamma):
    s = sorted(xs)
    h = (len(s) - 1) * gamma
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def table1(xs, m, offset, stat, gamma=0.8):
    """Bias, variance and error quantile of OB-I and OB-II by enumeration (d = 1)."""
    n = len(xs)
    theta = stat(xs)
    vals = [stat(xs[s:s + m]) for s in starts(n, m, offset)]
    b = len(vals)
    bar = mean(vals)
    r = math.sqrt(m / n)
    out = {}
    for name, c in (("ob1", theta), ("ob2", bar)):
        errs = [v - c for v in vals]
        ebar = mean(errs)
        var = (m / n) * (mean([e * e for e in errs]) - ebar * ebar)
        k = min(max(math.floor(gamma * b + 1e-9), 1), b)
        out[name] = {
            "errors": errs,
            "bias": r * ebar if name == "ob1" else 0.0,
            "var": var,
            "quantile": r * sorted(errs)[k - 1],
            "sigma": m * mean([e * e for e in errs]),
        }
    return out
