"""Brownian-functional weak limits of the Studentized batching statistics.

Paths are standard Wiener processes discretized on ``K`` uniform steps of
``[0, 1]``. Evaluation times snap to the nearest grid node; the batch width
``beta`` snaps to ``round(beta * K) / K`` and that snapped width is used
consistently inside every functional, so e.g. ``E[chi2_ob1] = 1 - beta_eff``
holds exactly on the grid.

Finite-``b`` functionals only look at the path on a handful of nodes. For
those, :func:`sample_limit` draws the path directly on the needed nodes
(independent Gaussian increments over the node gaps), which has exactly the
same law as reading the nodes off a full ``K``-step path.
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assess import Method
from .functionals import quantile

log = logging.getLogger(__name__)

DEFAULT_GRID = 4096
DEFAULT_PATHS = 100_000
N_SECTIONS = 20
SINGULAR_TOL = 1e-12
TABLE_DIR_ENV = "BATCHUQ_TABLE_DIR"

INF = math.inf


class LimitError(ValueError):
    """Invalid limit-functional parameters."""


@dataclass(frozen=True)
class WienerPath:
    values: np.ndarray  # (K + 1, d), values[0] == 0

    @property
    def grid_size(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Path value at the grid node nearest to `t`."""
        return self.values[_snap(t, self.grid_size)]


def _snap(t: float, K: int) -> int:
    return int(min(max(round(t * K), 0), K))


def _check_grid(K: int):
    if int(K) < 2:
        raise LimitError(f"grid size K must be >= 2, got {K}")


def parse_b(b):
    """Number of batches: a positive int or infinity (``"inf"``)."""
    if isinstance(b, str):
        if b.strip().lower() in ("inf", "infinity"):
            return INF
        try:
            b = int(b)
        except ValueError:
            raise LimitError(f"number of batches must be an integer or 'inf', got {b!r}") from None
    if isinstance(b, float) and math.isinf(b):
        return INF
    b = int(b)
    if b < 2:
        raise LimitError(f"number of batches must be >= 2 or inf, got {b}")
    return b


def parse_norm(p):
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "infinity", "max"):
            return INF
        try:
            p = float(key)
        except ValueError:
            raise LimitError(f"norm order must be 1, 2 or inf, got {p!r}") from None
    p = float(p)
    if p not in (1.0, 2.0, INF):
        raise LimitError(f"norm order must be 1, 2 or inf, got {p}")
    return INF if math.isinf(p) else int(p)


def _check_beta(beta: float, K: int) -> int:
    if not 0.0 < beta < 1.0:
        raise LimitError(f"beta must lie in (0, 1), got {beta}")
    kb = int(round(beta * K))
    if kb < 1 or kb >= K:
        raise LimitError(f"beta={beta} does not resolve on a grid of K={K} steps")
    return kb


def sample_wiener(K: int = DEFAULT_GRID, d: int = 1, rng=None) -> WienerPath:
    _check_grid(K)
    rng = np.random.default_rng(rng)
    return WienerPath(_grid_paths(1, K, d, rng)[0])


def _grid_paths(n_paths: int, K: int, d: int, rng) -> np.ndarray:
    """``(n_paths, K + 1, d)`` array of discretized Wiener paths."""
    steps = rng.standard_normal((n_paths, K, d))
    steps *= 1.0 / math.sqrt(K)
    out = np.zeros((n_paths, K + 1, d))
    np.cumsum(steps, axis=1, out=out[:, 1:, :])
    return out


def _finite_nodes(beta: float, b: int, K: int):
    """Snapped start and end node of every window, plus the snapped width."""
    kb = _check_beta(beta, K)
    c = np.arange(b) * (1.0 - beta) / (b - 1)
    starts = np.clip(np.rint(c * K).astype(np.int64), 0, K - kb)
    return starts, starts + kb, kb


# --- functional evaluation (vectorized over paths) --------------------------

def _outer_mean(v: np.ndarray) -> np.ndarray:
    """Mean over axis 1 of the outer products ``v v^T``; v is (N, k, d)."""
    return np.einsum("nki,nkj->nij", v, v) / v.shape[1]


def _finite_stats(method: Method, beta_eff: float, w_start, w_end, w_one):
    """chi2 matrices and Studentization numerators for finite b.

    w_start, w_end: (N, b, d) path values at window starts/ends; w_one: (N, d).
    """
    if method is Method.OB1:
        v = w_end - w_start - beta_eff * w_one[:, None, :]
        return _outer_mean(v) / beta_eff, w_one
    incr = w_end - w_start
    mean_incr = incr.mean(axis=1)
    dev = incr - mean_incr[:, None, :]
    return _outer_mean(dev) / beta_eff, mean_incr / beta_eff


def _integral_stats(method: Method, kb: int, K: int, paths: np.ndarray):
    """chi2 matrices and numerators for b = inf (left Riemann sums)."""
    beta_eff = kb / K
    n_left = K - kb  # left endpoints 0 .. K - kb - 1 cover [0, 1 - beta)
    incr = paths[:, kb:kb + n_left, :] - paths[:, :n_left, :]
    if method is Method.OB1:
        v = incr - beta_eff * paths[:, K, None, :]
        # (1 / (beta (1 - beta))) * (1 / K) * sum == (1 / beta) * mean
        return _outer_mean(v) / beta_eff, paths[:, K, :].copy()
    mean_incr = incr.mean(axis=1)
    dev = incr - mean_incr[:, None, :]
    return _outer_mean(dev) / beta_eff, mean_incr / beta_eff


def _inv_sqrt_apply(chi2: np.ndarray, numer: np.ndarray):
    """``chi2^{-1/2} numer`` per path plus a mask of usable (nonsingular) paths."""
    if chi2.shape[1] == 1:
        c = chi2[:, 0, 0]
        ok = c > SINGULAR_TOL
        t = np.zeros_like(numer)
        t[ok, 0] = numer[ok, 0] / np.sqrt(c[ok])
        return t, ok
    w, V = np.linalg.eigh(chi2)
    ok = w.min(axis=1) > SINGULAR_TOL
    w = np.where(ok[:, None], w, 1.0)
    proj = np.einsum("nji,nj->ni", V, numer) / np.sqrt(w)
    t = np.einsum("nij,nj->ni", V, proj)
    t[~ok] = 0.0
    return t, ok


def _single(method, beta, b, d, rng, K):
    _check_grid(K)
    b = parse_b(b)
    rng = np.random.default_rng(rng)
    path = _grid_paths(1, K, d, rng)
    if math.isinf(b):
        kb = _check_beta(beta, K)
        return _integral_stats(method, kb, K, path)
    starts, ends, kb = _finite_nodes(beta, b, K)
    return _finite_stats(method, kb / K, path[:, starts, :], path[:, ends, :], path[:, K, :])


def sample_chi2_ob1(beta: float, b=INF, d: int = 1, rng=None, K: int = DEFAULT_GRID) -> np.ndarray:
    """One draw of the OB-I limit matrix chi2_OB-I(beta, b), shape (d, d)."""
    return _single(Method.OB1, beta, b, d, rng, K)[0][0]


def sample_chi2_ob2(beta: float, b=INF, d: int = 1, rng=None, K: int = DEFAULT_GRID) -> np.ndarray:
    """One draw of the OB-II limit matrix chi2_OB-II(beta, b), shape (d, d)."""
    return _single(Method.OB2, beta, b, d, rng, K)[0][0]


def sample_T(method, beta: float, b=INF, d: int = 1, rng=None, K: int = DEFAULT_GRID) -> np.ndarray:
    """One draw of the limiting Studentized statistic; resamples singular draws."""
    method = Method.parse(method)
    rng = np.random.default_rng(rng)
    while True:
        chi2, numer = _single(method, beta, b, d, rng, K)
        t, ok = _inv_sqrt_apply(chi2, numer)
        if ok[0]:
            return t[0]


def sample_B_tilde(beta: float, d: int = 1, rng=None, K: int = DEFAULT_GRID) -> np.ndarray:
    """One draw of the large-batch OB-I error limit (trapezoidal path integrals)."""
    _check_grid(K)
    kb = _check_beta(beta, K)
    rng = np.random.default_rng(rng)
    return _b_tilde(kb, K, _grid_paths(1, K, d, rng))[0]


def _b_tilde(kb: int, K: int, paths: np.ndarray) -> np.ndarray:
    beta = kb / K
    head = np.trapezoid(paths[:, :kb + 1, :], dx=1.0 / K, axis=1)
    tail = np.trapezoid(paths[:, K - kb:, :], dx=1.0 / K, axis=1)
    w1 = paths[:, K, :]
    return (tail - head - beta * (1 - beta) * w1) / (math.sqrt(beta) * (1 - beta))


@dataclass
class LimitDraws:
    chi2: np.ndarray    # (N, d, d)
    numer: np.ndarray   # (N, d)
    T: np.ndarray       # (N, d)
    n_singular: int = 0


def sample_limit(method, beta: float, b, d: int, n_paths: int, rng, K: int = DEFAULT_GRID,
                 node_sampling: bool = True) -> LimitDraws:
    """`n_paths` joint draws of (chi2, numerator, T) sharing each path.

    Singular chi2 draws are discarded and replaced; the count is recorded.
    """
    method = Method.parse(method)
    b = parse_b(b)
    _check_grid(K)
    rng = np.random.default_rng(rng)
    chi_parts, num_parts, t_parts = [], [], []
    have, singular = 0, 0
    while have < n_paths:
        need = n_paths - have
        chi2, numer = _draw_stats(method, beta, b, d, need, rng, K, node_sampling)
        t, ok = _inv_sqrt_apply(chi2, numer)
        singular += int((~ok).sum())
        chi_parts.append(chi2[ok])
        num_parts.append(numer[ok])
        t_parts.append(t[ok])
        have += int(ok.sum())
    return LimitDraws(np.concatenate(chi_parts), np.concatenate(num_parts),
                      np.concatenate(t_parts), singular)


def _draw_stats(method, beta, b, d, n, rng, K, node_sampling):
    if math.isinf(b):
        kb = _check_beta(beta, K)
        return _integral_stats(method, kb, K, _grid_paths(n, K, d, rng))
    starts, ends, kb = _finite_nodes(beta, b, K)
    if not node_sampling:
        paths = _grid_paths(n, K, d, rng)
        return _finite_stats(method, kb / K, paths[:, starts, :], paths[:, ends, :], paths[:, K, :])
    nodes = np.unique(np.concatenate([[0], starts, ends, [K]]))
    gaps = np.diff(nodes) / K
    incr = rng.standard_normal((n, gaps.size, d)) * np.sqrt(gaps)[None, :, None]
    w = np.zeros((n, nodes.size, d))
    np.cumsum(incr, axis=1, out=w[:, 1:, :])
    pos = np.searchsorted(nodes, np.concatenate([starts, ends]))
    w_start, w_end = w[:, pos[:b], :], w[:, pos[b:], :]
    return _finite_stats(method, kb / K, w_start, w_end, w[:, -1, :])


# --- critical values ---------------------------------------------------------

def _norms(T: np.ndarray, p) -> np.ndarray:
    return np.linalg.norm(T, ord=np.inf if math.isinf(p) else p, axis=1)


def _chunk_rng(seed: int, index: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _sample_norms(method, beta, b, d, p, n_paths, K, seed, threads):
    # keep a chunk's node array near 2e6 values; depends only on b so chunking stays reproducible
    chunk = 1000 if math.isinf(b) else max(1000, min(20_000, 2_000_000 // b))
    sizes = [chunk] * (n_paths // chunk)
    if n_paths % chunk:
        sizes.append(n_paths % chunk)

    def work(i):
        draws = sample_limit(method, beta, b, d, sizes[i], _chunk_rng(seed, i), K)
        return _norms(draws.T, p), draws.n_singular

    idx = range(len(sizes))
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, idx))
    else:
        results = [work(i) for i in idx]
    return np.concatenate([r[0] for r in results]), sum(r[1] for r in results)


def _upper_quantile(x: np.ndarray, level: float) -> float:
    return quantile(x, level)


@dataclass
class TableEntry:
    method: str
    beta: float
    b: object
    d: int
    p: object
    alphas: list
    t_values: list
    mc_stderr: list
    n_paths: int
    grid: int
    seed: int
    n_singular: int = 0

    def t(self, alpha: float) -> float:
        for a, t in zip(self.alphas, self.t_values):
            if math.isclose(a, alpha, rel_tol=0, abs_tol=1e-12):
                return t
        raise KeyError(f"alpha={alpha} not in table entry")

    def stderr(self, alpha: float) -> float:
        return self.mc_stderr[[i for i, a in enumerate(self.alphas)
                               if math.isclose(a, alpha, rel_tol=0, abs_tol=1e-12)][0]]

    def to_json(self) -> str:
        doc = {
            "method": self.method, "beta": self.beta, "b": _b_text(self.b), "d": self.d,
            "p": _p_text(self.p), "alphas": self.alphas, "t_values": self.t_values,
            "n_paths": self.n_paths, "grid": self.grid, "seed": self.seed,
            "mc_stderr": self.mc_stderr, "n_singular": self.n_singular,
        }
        return _dumps17(doc) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TableEntry":
        doc = json.loads(text)
        return cls(method=doc["method"], beta=float(doc["beta"]), b=parse_b(doc["b"]),
                   d=int(doc["d"]), p=parse_norm(doc["p"]),
                   alphas=[float(a) for a in doc["alphas"]],
                   t_values=[float(t) for t in doc["t_values"]],
                   mc_stderr=[float(s) for s in doc["mc_stderr"]],
                   n_paths=int(doc["n_paths"]), grid=int(doc["grid"]), seed=int(doc["seed"]),
                   n_singular=int(doc.get("n_singular", 0)))


def _b_text(b) -> str:
    return "inf" if math.isinf(b) else str(int(b))


def _p_text(p) -> str:
    return "inf" if math.isinf(p) else str(int(p))


def _dumps17(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(k)}: {_dumps17(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dumps17(v) for v in obj) + "]"
    if isinstance(obj, float):
        return format(obj, ".17g")
    return json.dumps(obj)


def default_table_dir() -> Path:
    return Path(os.environ.get(TABLE_DIR_ENV, "tables"))


class TableCache:
    """Directory of JSON table entries, one file per (method, beta, b, d, p)."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_table_dir()
        self._memory: dict = {}

    def path(self, method, beta, b, d, p) -> Path:
        name = f"{Method.parse(method).value}_{float(beta)!r}_{_b_text(b)}_{int(d)}_{_p_text(p)}.json"
        return self.directory / name

    def load(self, method, beta, b, d, p) -> Optional[TableEntry]:
        path = self.path(method, beta, b, d, p)
        if path in self._memory:
            return self._memory[path]
        try:
            entry = TableEntry.from_json(path.read_text())
        except FileNotFoundError:
            return None
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable table file %s: %s", path, exc)
            return None
        self._memory[path] = entry
        return entry

    def store(self, entry: TableEntry):
        path = self.path(entry.method, entry.beta, entry.b, entry.d, entry.p)
        self._memory[path] = entry
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w") as fh:
                fh.write(entry.to_json())
            os.replace(tmp, path)
        except OSError as exc:
            log.warning("could not write table file %s (%s); keeping the entry in memory", path, exc)


def critical_values(method, beta: float, b, d: int, p, alphas: Sequence[float],
                    n_paths: int = DEFAULT_PATHS, K: int = DEFAULT_GRID, seed: int = 0,
                    cache: Optional[TableCache] = None, threads: Optional[int] = 1) -> TableEntry:
    """Monte Carlo (1 - alpha) quantiles of ``||T||_p`` for several alphas.

    All alphas share one set of draws. A cache entry with the same
    ``(n_paths, K, seed)`` that already holds every requested alpha is
    returned without sampling; otherwise the draws are regenerated (they
    are a deterministic function of the seed) and the entry is extended.
    MC standard errors come from 20 equal sections of the draws.
    """
    method = Method.parse(method)
    b, p, d = parse_b(b), parse_norm(p), int(d)
    _check_beta(beta, K)
    alphas = [float(a) for a in np.atleast_1d(alphas)]
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise LimitError(f"alpha must lie in (0, 1), got {a}")
    if n_paths < 1000:
        raise LimitError(f"need at least 1000 paths, got {n_paths}")
    if d < 1:
        raise LimitError(f"dimension must be >= 1, got {d}")

    stored = cache.load(method, beta, b, d, p) if cache is not None else None
    if stored is not None and (stored.n_paths, stored.grid, stored.seed) == (n_paths, K, seed):
        if all(_has_alpha(stored, a) for a in alphas):
            return stored
        alphas = sorted(set(alphas) | set(stored.alphas), reverse=True)
    else:
        alphas = sorted(set(alphas), reverse=True)

    norms, n_singular = _sample_norms(method, beta, b, d, p, n_paths, K, seed, threads)
    sections = np.array_split(norms, N_SECTIONS)
    t_values, stderr = [], []
    for a in alphas:
        t_values.append(_upper_quantile(norms, 1.0 - a))
        qs = np.array([_upper_quantile(s, 1.0 - a) for s in sections])
        stderr.append(float(qs.std(ddof=1) / math.sqrt(N_SECTIONS)))
    if n_singular:
        log.info("%d singular chi2 draws resampled for %s beta=%g b=%s", n_singular, method.value, beta, b)
    entry = TableEntry(method=method.value, beta=float(beta), b=b, d=d, p=p, alphas=alphas,
                       t_values=t_values, mc_stderr=stderr, n_paths=n_paths, grid=K, seed=seed,
                       n_singular=n_singular)
    if cache is not None:
        cache.store(entry)
    return entry


def _has_alpha(entry: TableEntry, alpha: float) -> bool:
    return any(math.isclose(a, alpha, rel_tol=0, abs_tol=1e-12) for a in entry.alphas)


def critical_value(method, beta: float, b, d: int, p, alpha: float,
                   n_paths: int = DEFAULT_PATHS, K: int = DEFAULT_GRID, seed: int = 0,
                   cache: Optional[TableCache] = None, threads: Optional[int] = 1) -> float:
    entry = critical_values(method, beta, b, d, p, [alpha], n_paths, K, seed, cache, threads)
    return entry.t(alpha)
