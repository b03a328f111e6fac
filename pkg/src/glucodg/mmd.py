"""Squared maximum mean discrepancy with a Gaussian kernel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import EmptyInput, SchemaMismatch


@dataclass(frozen=True)
class MmdConfig:
    kernel: str = "gaussian"
    # None -> median heuristic over the pooled sample
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be > 0")


def median_bandwidth(Z: np.ndarray) -> float:
    d = pdist(Z)
    d = d[d > 0]
    if d.size == 0:
        return 1.0
    med = float(np.median(d))
    return med if med > 0 else 1.0


def mmd2(xs, ys, cfg: MmdConfig = MmdConfig()) -> float:
    """Biased (V-statistic) estimate, so the result is never negative."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise EmptyInput("mmd2 needs two nonempty samples")
    if xs.shape[1] != ys.shape[1]:
        raise SchemaMismatch(f"feature counts differ: {xs.shape[1]} vs {ys.shape[1]}")
    sigma = cfg.bandwidth if cfg.bandwidth is not None else median_bandwidth(np.vstack([xs, ys]))
    g = -0.5 / sigma**2
    kxx = np.exp(g * cdist(xs, xs, "sqeuclidean")).mean()
    kyy = np.exp(g * cdist(ys, ys, "sqeuclidean")).mean()
    kxy = np.exp(g * cdist(xs, ys, "sqeuclidean")).mean()
    val = float(kxx + kyy - 2.0 * kxy)
    if val < -1e-12:
        raise ArithmeticError(f"mmd2 negative beyond rounding: {val}")
    return max(val, 0.0)
