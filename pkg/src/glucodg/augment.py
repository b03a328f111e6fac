"""Mix-up balancing of per-subject sample counts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DomainDataset, Sample, check_same_schema, make_rng
from .errors import DomainMismatch, InvalidAlpha, SchemaMismatch, TooFewSamples

DEFAULT_ALPHA = 0.4


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = DEFAULT_ALPHA
    # None balances to the largest domain
    target_count_per_domain: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidAlpha(f"alpha must be > 0, got {self.alpha}")
        if self.target_count_per_domain is not None and self.target_count_per_domain < 1:
            raise ValueError("target_count_per_domain must be positive")


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(int(seed_or_rng))


def sample_lambda(alpha: float, seed, size=None):
    """Draw Beta(alpha, alpha) mixing weights as a ratio of two gamma variates."""
    if not alpha > 0:
        raise InvalidAlpha(f"alpha must be > 0, got {alpha}")
    rng = _as_rng(seed)
    g1 = rng.standard_gamma(alpha, size)
    g2 = rng.standard_gamma(alpha, size)
    total = g1 + g2
    # both gammas can underflow to 0 for tiny alpha
    lam = np.divide(g1, total, out=np.full(np.shape(total), 0.5), where=total > 0)
    return float(lam) if size is None else lam


def mixup_pair(a, b, lam: float):
    """Convex combination of two samples; features and labels share ``lam``.

    ``a`` and ``b`` are ``Sample`` objects; the result carries no timestamp.
    """
    if a.domain_id != b.domain_id:
        raise DomainMismatch(f"{a.domain_id!r} vs {b.domain_id!r}")
    fa = np.asarray(a.features, dtype=float)
    fb = np.asarray(b.features, dtype=float)
    if fa.shape != fb.shape:
        raise SchemaMismatch("feature vectors differ in length")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return Sample(lam * fa + (1 - lam) * fb, lam * a.label + (1 - lam) * b.label, a.domain_id)


def mixup_domain(dataset: DomainDataset, n_new: int, alpha: float, rng: np.random.Generator) -> DomainDataset:
    """Append ``n_new`` within-domain Mix-up samples to ``dataset``."""
    n = len(dataset)
    if n_new <= 0:
        return dataset
    if n < 2:
        raise TooFewSamples(f"domain {dataset.domain_id!r} needs >= 2 samples for Mix-up")
    first = rng.integers(0, n, size=n_new)
    # second parent drawn uniformly from the other n-1 rows
    second = rng.integers(0, n - 1, size=n_new)
    second = second + (second >= first)
    lam = sample_lambda(alpha, rng, size=n_new)
    X = lam[:, None] * dataset.X[first] + (1 - lam[:, None]) * dataset.X[second]
    y = lam * dataset.y[first] + (1 - lam) * dataset.y[second]
    return DomainDataset(
        dataset.domain_id,
        np.vstack([dataset.X, X]),
        np.concatenate([dataset.y, y]),
        dataset.schema,
        np.concatenate([dataset.timestamps, np.full(n_new, np.nan)]),
    )


def balance_domains(datasets: Sequence[DomainDataset], cfg: MixupConfig) -> list[DomainDataset]:
    """Grow every domain to the target count with Mix-up samples.

    Originals are kept verbatim and first; domains already at or above the
    target are returned unchanged.
    """
    check_same_schema(datasets)
    for d in datasets:
        if len(d) < 2:
            raise TooFewSamples(f"domain {d.domain_id!r} needs >= 2 samples for Mix-up")
    target = cfg.target_count_per_domain or max(len(d) for d in datasets)
    return [
        mixup_domain(d, target - len(d), cfg.alpha, make_rng(cfg.seed, f"mixup-{d.domain_id}"))
        for d in datasets
    ]
