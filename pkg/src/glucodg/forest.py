"""CART regression trees and bagged random forests."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from numba import njit

from .core import derive_substream, make_rng
from .errors import EmptyInput, SchemaMismatch

_NO_LIMIT = 1 << 30


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_depth: int | None = 10
    min_samples_leaf: int = 1
    # None -> ceil(p / 3)
    features_per_split: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be positive")

    def mtry(self, p: int) -> int:
        m = math.ceil(p / 3) if self.features_per_split is None else self.features_per_split
        if m > p:
            raise ValueError(f"features_per_split={m} exceeds feature count {p}")
        return m


@njit(cache=True, nogil=True)
def _grow(X, y, rows, max_depth, min_leaf, mtry, keys):
    n = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n - 1
    if max_depth < 30:
        cap = min(cap, (1 << (max_depth + 1)) - 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    buf = np.empty(n, np.int64)
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    all_feats = np.arange(p)

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        m = hi - lo

        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(lo, hi):
            v = y[idx[k]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        mean = total / m
        value[node] = mean
        if depth >= max_depth or m < 2 * min_leaf or ymax == ymin:
            continue

        ss = 0.0
        for k in range(lo, hi):
            d = y[idx[k]] - mean
            ss += d * d
        tol = 1e-12 * ss

        if mtry >= p:
            feats = all_feats
        else:
            feats = np.sort(np.argsort(keys[node])[:mtry])

        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        xs = np.empty(m)
        ys = np.empty(m)
        for f in feats:
            for k in range(m):
                xs[k] = X[idx[lo + k], f]
            order = np.argsort(xs, kind="mergesort")
            for k in range(m):
                ys[k] = y[idx[lo + order[k]]] - mean
            s_left = 0.0
            for i in range(m - 1):
                s_left += ys[i]
                n_left = i + 1
                n_right = m - n_left
                if n_left < min_leaf:
                    continue
                if n_right < min_leaf:
                    break
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if not a < b:
                    continue
                s_right = -s_left
                # child SSE = ss - score, with node-centered labels
                score = s_left * s_left / n_left + s_right * s_right / n_right
                if best_f < 0 or score > best_score + tol:
                    best_score = score
                    best_f = f
                    thr = 0.5 * (a + b)
                    if not thr < b:
                        thr = a
                    best_thr = thr
        if best_f < 0:
            continue

        n_l = 0
        n_r = 0
        for k in range(lo, hi):
            r = idx[k]
            if X[r, best_f] <= best_thr:
                idx[lo + n_l] = r
                n_l += 1
            else:
                buf[n_r] = r
                n_r += 1
        for k in range(n_r):
            idx[lo + n_l + k] = buf[k]

        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[top] = rc
        st_lo[top] = lo + n_l
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_lo[top] = lo
        st_hi[top] = lo + n_l
        st_depth[top] = depth + 1
        top += 1

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf predicting ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                d[self.left[k]] = d[self.right[k]] = d[k] + 1
        return int(d.max())

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        return _apply(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("no training samples")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    return X, y


def _fit_rows(X, y, rows, cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    n, p = X.shape
    mtry = cfg.mtry(p)
    depth = _NO_LIMIT if cfg.max_depth is None else cfg.max_depth
    if mtry < p:
        cap = 2 * len(rows) - 1
        if depth < 30:
            cap = min(cap, 2 ** (depth + 1) - 1)
        keys = rng.random((cap, p))
    else:
        keys = np.zeros((1, p))
    return Tree(*_grow(X, y, rows.astype(np.int64), depth, cfg.min_samples_leaf, mtry, keys))


def fit_tree(X, y, cfg: ForestConfig = ForestConfig(), seed: int = 0) -> Tree:
    """Greedy variance-reduction tree on all rows.

    ``seed`` drives the per-node feature draws.  Split ties go to the
    lowest feature index, then the lowest threshold.
    """
    X, y = _check_xy(X, y)
    return _fit_rows(X, y, np.arange(X.shape[0]), cfg, make_rng(seed))


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    config: ForestConfig
    n_features: int
    schema_id: str | None = None

    @property
    def oob_available(self) -> bool:
        return self.config.bootstrap

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.predict(X)
        return acc / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "format": "glucodg.forest/1",
            "config": asdict(self.config),
            "n_features": self.n_features,
            "schema_id": self.schema_id,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            tuple(Tree.from_dict(t) for t in d["trees"]),
            ForestConfig(**d["config"]),
            int(d["n_features"]),
            d.get("schema_id"),
        )


def _tree_job(X, y, cfg: ForestConfig, t: int) -> Tree:
    rng = make_rng(derive_substream(cfg.seed, f"tree-{t}"))
    n = X.shape[0]
    rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
    return _fit_rows(X, y, rows, cfg, rng)


def fit_forest(X, y, cfg: ForestConfig = ForestConfig(), n_jobs: int = 1, schema_id: str | None = None) -> ForestModel:
    """Bagged forest; tree ``t`` draws from substream ``"tree-t"`` so the
    result does not depend on ``n_jobs``."""
    X, y = _check_xy(X, y)
    cfg.mtry(X.shape[1])
    if n_jobs > 1 and cfg.n_estimators > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            trees = list(ex.map(lambda t: _tree_job(X, y, cfg, t), range(cfg.n_estimators)))
    else:
        trees = [_tree_job(X, y, cfg, t) for t in range(cfg.n_estimators)]
    return ForestModel(tuple(trees), cfg, X.shape[1], schema_id)


def with_seed(cfg: ForestConfig, seed: int) -> ForestConfig:
    return replace(cfg, seed=seed)
