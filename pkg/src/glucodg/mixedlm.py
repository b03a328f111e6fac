"""Random-intercept linear mixed model, Wald inference and feature screening.

The model is ``y = X b + u[g] + e`` with ``u ~ N(0, s2_group)`` and
``e ~ N(0, s2_resid)``.  Writing ``V = s2_resid * (I + lam * Z Z')`` the
fixed effects and ``s2_resid`` profile out in closed form, leaving a
one-dimensional search over ``log(lam)``.  ``(I + lam Z Z')^-1`` is block
diagonal with blocks ``I - c_g 11'``, ``c_g = lam / (1 + lam n_g)``, so every
quantity the search needs reduces to per-group column sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .core import DomainDataset, check_same_schema
from .errors import (
    NonConvergence,
    RankDeficient,
    TooFewGroups,
    TooFewSamples,
    ZeroVariance,
)

LOG_RATIO_BOUNDS = (math.log(1e-8), math.log(1e8))
RATIO_TOL = 1e-9
MAX_CONDITION = 1e10
Z_95 = 1.96


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        groups = np.asarray(self.groups)
        if not (len(y) == X.shape[0] == len(groups)):
            raise ValueError("y, X and groups must have equal row counts")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("one name per column of X required")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "names", names)


@dataclass(frozen=True, eq=False)
class MixedLMFit:
    names: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    p_values: np.ndarray
    ci95: np.ndarray
    sigma2_resid: float
    sigma2_group: float
    loglik: float
    converged: bool
    boundary: bool = False
    method: str = "reml"
    n_obs: int = 0
    n_groups: int = 0

    @property
    def ratio(self) -> float:
        return self.sigma2_group / self.sigma2_resid

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def summary_rows(self) -> list[dict]:
        return [
            {
                "name": n,
                "beta": float(b),
                "se": float(s),
                "p": float(p),
                "ci_low": float(lo),
                "ci_high": float(hi),
            }
            for n, b, s, p, (lo, hi) in zip(self.names, self.beta, self.se, self.p_values, self.ci95)
        ]


class _GroupSums:
    """Sufficient statistics for evaluating the profiled criterion at any ratio."""

    def __init__(self, design: DesignMatrices):
        X, y = design.X, design.y
        _, inv = np.unique(design.groups, return_inverse=True)
        n_groups = inv.max() + 1
        self.n, self.p = X.shape
        self.counts = np.bincount(inv, minlength=n_groups).astype(float)
        self.sx = np.zeros((n_groups, self.p))
        np.add.at(self.sx, inv, X)
        self.sy = np.bincount(inv, weights=y, minlength=n_groups)
        self.xtx = X.T @ X
        self.xty = X.T @ y
        self.yty = float(y @ y)
        self.inv = inv

    def shrink(self, ratio: float) -> np.ndarray:
        return ratio / (1.0 + ratio * self.counts)

    def normal_equations(self, ratio: float):
        c = self.shrink(ratio)
        A = self.xtx - (self.sx * c[:, None]).T @ self.sx
        b = self.xty - (self.sx * c[:, None]).T @ self.sy
        yy = self.yty - float(c @ self.sy**2)
        return A, b, yy

    def criterion(self, ratio: float, method: str = "reml") -> float:
        """-2 x profiled (restricted) log-likelihood."""
        A, b, yy = self.normal_equations(ratio)
        L = np.linalg.cholesky(A)
        beta = np.linalg.solve(L.T, np.linalg.solve(L, b))
        q = max(yy - float(b @ beta), 1e-300)
        logdet_h = float(np.sum(np.log1p(ratio * self.counts)))
        if method == "reml":
            dof = self.n - self.p
            logdet_a = 2.0 * float(np.sum(np.log(np.diag(L))))
            return dof * math.log(q / dof) + logdet_h + logdet_a + dof * (1.0 + math.log(2 * math.pi))
        return self.n * math.log(q / self.n) + logdet_h + self.n * (1.0 + math.log(2 * math.pi))

    def score(self, ratio: float, method: str = "reml") -> float:
        """Derivative of :meth:`criterion` with respect to the ratio."""
        A, b, yy = self.normal_equations(ratio)
        beta = np.linalg.solve(A, b)
        q = yy - float(b @ beta)
        w = 1.0 / (1.0 + ratio * self.counts)
        rg = self.sy - self.sx @ beta
        dq = -float(np.sum((rg * w) ** 2))
        dlogdet_h = float(np.sum(self.counts * w))
        if method == "reml":
            quad = np.einsum("gi,gi->g", self.sx, np.linalg.solve(A, self.sx.T).T)
            return (self.n - self.p) * dq / q + dlogdet_h - float(np.sum(quad * w**2))
        return self.n * dq / q + dlogdet_h


def _collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    weak = s <= s[0] * 1e-5
    if not weak.any():
        weak = s == s.min()
    load = np.abs(vt[weak]).max(axis=0)
    return [n for n, v in zip(names, load) if v > 0.1 * load.max()]


def _check_design(design: DesignMatrices) -> None:
    n, p = design.X.shape
    if len(np.unique(design.groups)) < 2:
        raise TooFewGroups("random intercepts need at least two groups")
    if n <= p + 2:
        raise TooFewSamples(f"need more than {p + 2} rows for {p} fixed effects, got {n}")
    if not (np.all(np.isfinite(design.X)) and np.all(np.isfinite(design.y))):
        raise ValueError("design contains non-finite values")
    cond = np.linalg.cond(design.X.T @ design.X)
    if not cond < MAX_CONDITION:
        cols = _collinear_columns(design.X, design.names)
        raise RankDeficient(
            f"X'X condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}; collinear columns: {', '.join(cols)}",
            cols,
        )


def reml_criterion(design: DesignMatrices, ratio: float, method: str = "reml") -> float:
    return _GroupSums(design).criterion(ratio, method)


def _search_ratio(sums: _GroupSums, method: str):
    lo, hi = LOG_RATIO_BOUNDS
    grid = np.linspace(lo, hi, 65)
    vals = [sums.criterion(math.exp(t), method) for t in grid]
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda t: sums.criterion(math.exp(t), method),
        bounds=(a, b),
        method="bounded",
        options={"xatol": RATIO_TOL, "maxiter": 500},
    )
    if not res.success:
        raise NonConvergence(int(res.nfev))
    t, f = float(res.x), float(res.fun)
    t = _polish(sums, method, t, a, b)
    f = sums.criterion(math.exp(t), method)
    # the bounded search never lands exactly on an endpoint
    for edge in (lo, hi):
        fe = vals[0] if edge == lo else vals[-1]
        if fe <= f:
            t, f = edge, fe
    return t, f


def _polish(sums: _GroupSums, method: str, t: float, a: float, b: float) -> float:
    """Refine a value-based minimum to the root of the analytic score.

    The criterion is too flat near its minimum for function values alone
    to pin the ratio beyond ~1e-8 relative.
    """
    g = lambda u: sums.score(math.exp(u), method)
    lo, hi = t, t
    step = 1e-6
    while step < 1.0:
        lo, hi = max(t - step, a), min(t + step, b)
        if g(lo) < 0 < g(hi):
            return optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        step *= 10
    return t


def fit_mixedlm(design: DesignMatrices, method: str = "reml", fix_ratio: float | None = None) -> MixedLMFit:
    """Fit by (restricted) maximum likelihood.

    A lower-boundary optimum is reported as ``sigma2_group = 0`` with the
    estimates evaluated at ratio 0, i.e. ordinary least squares.  Passing
    ``fix_ratio`` skips the search and evaluates at that variance ratio.
    """
    if method not in ("reml", "ml"):
        raise ValueError(f"unknown method {method!r}")
    _check_design(design)
    sums = _GroupSums(design)
    lo, hi = LOG_RATIO_BOUNDS
    if fix_ratio is not None:
        ratio, boundary = float(fix_ratio), False
    else:
        t, _ = _search_ratio(sums, method)
        boundary = t in (lo, hi)
        ratio = 0.0 if t == lo else math.exp(t)

    A, b, _ = sums.normal_equations(ratio)
    beta = np.linalg.solve(A, b)
    r = design.y - design.X @ beta
    c = sums.shrink(ratio)
    rg = np.bincount(sums.inv, weights=r, minlength=len(c))
    q = float(r @ r - c @ rg**2)
    dof = sums.n - sums.p if method == "reml" else sums.n
    sigma2 = q / dof
    cov = sigma2 * np.linalg.inv(A)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p_values = 2.0 * stats.norm.sf(np.abs(z))
    ci = np.column_stack([beta - Z_95 * se, beta + Z_95 * se])
    crit = sums.criterion(ratio, method)
    return MixedLMFit(
        names=design.names,
        beta=beta,
        se=se,
        p_values=p_values,
        ci95=ci,
        sigma2_resid=sigma2,
        sigma2_group=ratio * sigma2,
        loglik=-0.5 * crit,
        converged=True,
        boundary=boundary,
        method=method,
        n_obs=sums.n,
        n_groups=len(c),
    )


def ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(X, y, rcond=None)[0]


# --- feature screening ---------------------------------------------------


@dataclass(frozen=True)
class FeatureSelection:
    selected: tuple[str, ...]
    removed: tuple[str, ...]
    threshold: float
    per_feature_report: tuple[dict, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "selected": list(self.selected),
            "removed": list(self.removed),
            "features": [dict(r) for r in self.per_feature_report],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSelection":
        return cls(tuple(d["selected"]), tuple(d["removed"]), float(d["threshold"]), tuple(d.get("features", ())))


def _standardize(a: np.ndarray) -> np.ndarray:
    sd = a.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (a - a.mean(axis=0)) / sd


def design_from_datasets(datasets: Sequence[DomainDataset], features: Sequence[str]) -> DesignMatrices:
    """Intercept plus the named features; response and predictors z-scored over the pool."""
    schema = check_same_schema(datasets)
    idx = [schema.index(f) for f in features]
    X = np.vstack([d.X[:, idx] for d in datasets])
    y = np.concatenate([d.y for d in datasets])
    groups = np.concatenate([np.full(len(d), d.domain_id, dtype=object) for d in datasets])
    X = np.column_stack([np.ones(len(y)), _standardize(X)])
    return DesignMatrices(_standardize(y), X, groups, ("intercept", *features))


def select_features(
    datasets: Sequence[DomainDataset],
    candidate_features: Sequence[str],
    threshold: float = 0.05,
    univariate: bool = False,
    method: str = "reml",
) -> FeatureSelection:
    """Keep candidates whose fixed-effect Wald p-value is below ``threshold``.

    By default all candidates enter one joint model; ``univariate=True``
    fits each candidate on its own (intercept + feature).
    """
    candidate_features = list(candidate_features)
    if univariate:
        rows = []
        for f in candidate_features:
            fit = fit_mixedlm(design_from_datasets(datasets, [f]), method)
            rows.append(fit.summary_rows()[1])
    else:
        fit = fit_mixedlm(design_from_datasets(datasets, candidate_features), method)
        rows = fit.summary_rows()[1:]
    for r in rows:
        r["selected"] = bool(r["p"] < threshold)
    selected = tuple(r["name"] for r in rows if r["selected"])
    removed = tuple(r["name"] for r in rows if not r["selected"])
    return FeatureSelection(selected, removed, threshold, tuple(rows))


def pearson_per_domain(datasets: Sequence[DomainDataset], feature: str) -> dict[str, float]:
    """Pearson r between one feature and the label, per domain plus ``"pooled"``."""
    schema = check_same_schema(datasets)
    j = schema.index(feature)

    def r(x, y, who):
        if len(x) < 3:
            raise ValueError(f"{who}: need at least 3 samples")
        if x.std() == 0 or y.std() == 0:
            raise ZeroVariance(f"{who}: zero variance in feature or label")
        xc, yc = x - x.mean(), y - y.mean()
        return float(np.clip(xc @ yc / math.sqrt((xc @ xc) * (yc @ yc)), -1.0, 1.0))

    out = {d.domain_id: r(d.X[:, j], d.y, d.domain_id) for d in datasets}
    out["pooled"] = r(np.concatenate([d.X[:, j] for d in datasets]), np.concatenate([d.y for d in datasets]), "pooled")
    return out
