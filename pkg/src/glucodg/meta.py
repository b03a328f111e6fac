"""Meta-forests: episodic per-iteration forests combined by learned weights.

Each iteration holds one source domain out as meta-test, trains a small
forest on a ``portion`` subsample of the remaining (meta-train) domains and
scores it by its meta-test MAE and by the MMD between the two subsamples.
Members with low error and low discrepancy receive larger weights.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DomainDataset, check_same_schema, derive_substream, make_rng
from .errors import PortionTooSmall, SchemaMismatch, TooFewDomains
from .forest import ForestConfig, ForestModel, fit_forest
from .mmd import MmdConfig, mmd2


@dataclass(frozen=True)
class MetaConfig:
    portion: float = 0.30
    iterations: int = 10
    trees_per_iteration: int = 20
    max_depth: int | None = 10
    min_samples_leaf: int = 1
    features_per_split: int | None = None
    bootstrap: bool = True
    weight_temperature: float = 1.0
    mmd_bandwidth: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.portion <= 1:
            raise ValueError(f"portion must lie in (0, 1], got {self.portion}")
        if self.iterations < 1 or self.trees_per_iteration < 1:
            raise ValueError("iterations and trees_per_iteration must be positive")
        if not self.weight_temperature > 0:
            raise ValueError("weight_temperature must be > 0")

    def forest_config(self, seed: int) -> ForestConfig:
        return ForestConfig(
            n_estimators=self.trees_per_iteration,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            features_per_split=self.features_per_split,
            bootstrap=self.bootstrap,
            seed=seed,
        )


@dataclass(frozen=True, eq=False)
class Member:
    forest: ForestModel
    weight: float
    meta_test_domain: str
    meta_error: float
    mmd_to_meta_test: float


@dataclass(frozen=True, eq=False)
class WeightedEnsemble:
    members: tuple[Member, ...]
    n_features: int

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.members])

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(X.shape[0])
        for m in self.members:
            if m.weight:
                out += m.weight * m.forest.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "format": "glucodg.meta_forests/1",
            "n_features": self.n_features,
            "members": [
                {
                    "weight": m.weight,
                    "meta_test_domain": m.meta_test_domain,
                    "meta_error": m.meta_error,
                    "mmd_to_meta_test": m.mmd_to_meta_test,
                    "forest": m.forest.to_dict(),
                }
                for m in self.members
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedEnsemble":
        members = tuple(
            Member(
                ForestModel.from_dict(m["forest"]),
                float(m["weight"]),
                m["meta_test_domain"],
                float(m["meta_error"]),
                float(m["mmd_to_meta_test"]),
            )
            for m in d["members"]
        )
        return cls(members, int(d["n_features"]))


def combine_weights(errors, distances, temperature: float = 1.0) -> np.ndarray:
    """Softmax of -(e/mean(e) + d/mean(d)) / temperature.

    A term whose values are all zero carries no information and is dropped.
    """
    errors = np.asarray(errors, dtype=float)
    distances = np.asarray(distances, dtype=float)
    score = np.zeros_like(errors)
    for term in (errors, distances):
        if np.any(term != 0):
            score += term / term.mean()
    z = -score / temperature
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def _subsample_size(n: int, portion: float) -> int:
    return int(math.floor(portion * n + 0.5))


def _iteration(domains: Sequence[DomainDataset], cfg: MetaConfig, t: int):
    rng = make_rng(cfg.seed, f"iter-{t}")
    k = int(rng.integers(len(domains)))
    test = domains[k]
    parts_X, parts_y = [], []
    for j, d in enumerate(domains):
        if j == k:
            continue
        rows = np.sort(rng.choice(len(d), size=_subsample_size(len(d), cfg.portion), replace=False))
        parts_X.append(d.X[rows])
        parts_y.append(d.y[rows])
    test_rows = np.sort(rng.choice(len(test), size=_subsample_size(len(test), cfg.portion), replace=False))
    X_train, y_train = np.vstack(parts_X), np.concatenate(parts_y)
    X_test, y_test = test.X[test_rows], test.y[test_rows]

    forest = fit_forest(X_train, y_train, cfg.forest_config(derive_substream(cfg.seed, f"forest-{t}")))
    err = float(np.mean(np.abs(forest.predict(X_test) - y_test)))
    dist = mmd2(X_train, X_test, MmdConfig(bandwidth=cfg.mmd_bandwidth))
    return forest, test.domain_id, err, dist


def train_meta_forests(
    source_domains: Sequence[DomainDataset], cfg: MetaConfig = MetaConfig(), n_jobs: int = 1
) -> WeightedEnsemble:
    """Train on source domains only; iterations are independent substreams."""
    source_domains = list(source_domains)
    schema = check_same_schema(source_domains)
    if len(source_domains) < 2:
        raise TooFewDomains("meta-forests need at least two source domains")
    smallest = min(len(d) for d in source_domains)
    if _subsample_size(smallest, cfg.portion) < 1:
        raise PortionTooSmall(f"portion {cfg.portion} of {smallest} rows selects nothing")

    if n_jobs > 1 and cfg.iterations > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(lambda t: _iteration(source_domains, cfg, t), range(cfg.iterations)))
    else:
        results = [_iteration(source_domains, cfg, t) for t in range(cfg.iterations)]

    weights = combine_weights([r[2] for r in results], [r[3] for r in results], cfg.weight_temperature)
    members = tuple(
        Member(forest, float(w), dom, err, dist) for (forest, dom, err, dist), w in zip(results, weights)
    )
    return WeightedEnsemble(members, schema.n_features)
