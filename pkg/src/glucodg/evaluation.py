"""Error metrics and the generalized / leave-one-domain-out protocols."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    MMWAVE_S21,
    NIR_TRANSMITTANCE,
    DomainDataset,
    FeatureSchema,
    check_same_schema,
    derive_substream,
)
from .errors import LeakageError, LengthMismatch, TooFewDomains, ZeroReference
from .forest import ForestConfig, fit_forest
from .ingest import apply_normalization, fit_normalization
from .meta import MetaConfig, train_meta_forests
from .mixedlm import FeatureSelection

METRIC_NAMES = ("mae", "rmse", "mape")
METRIC_LABELS = {"mae": "MAE (mg/dL)", "rmse": "RMSE (mg/dL)", "mape": "MAPE (%)"}
DEFAULT_PORTIONS = (0.10, 0.20, 0.30, 0.40, 0.50)
TRAIN_FRACTION = 0.7

SERIES = ("generalized", "personalized")
FEATURE_SETS = ("all", "selected", "removed")
MODELS = ("random_forests", "meta_forests")

# experiment number -> (series, feature set, model)
CANONICAL_EXPERIMENTS = {
    1: ("generalized", "all", "random_forests"),
    2: ("generalized", "selected", "random_forests"),
    3: ("generalized", "removed", "random_forests"),
    4: ("personalized", "all", "random_forests"),
    5: ("personalized", "selected", "random_forests"),
    6: ("personalized", "removed", "random_forests"),
    7: ("personalized", "all", "meta_forests"),
    8: ("personalized", "selected", "meta_forests"),
    9: ("personalized", "removed", "meta_forests"),
}


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    mape: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(y_ref, y_pred) -> Metrics:
    """MAE and RMSE in label units, MAPE in percent of the reference."""
    y_ref = np.asarray(y_ref, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_ref.shape != y_pred.shape or y_ref.size == 0:
        raise LengthMismatch(f"{y_ref.size} references vs {y_pred.size} predictions")
    if np.any(y_ref <= 0):
        raise ZeroReference("MAPE needs strictly positive references")
    err = np.abs(y_pred - y_ref)
    return Metrics(
        mae=float(err.mean()),
        rmse=float(math.sqrt(np.mean(err**2))),
        mape=float(np.mean(err / y_ref) * 100.0),
        n=int(y_ref.size),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    series: str = "personalized"
    feature_set: str = "all"
    model: str = "random_forests"
    repeats: int = 10
    seed: int = 0
    number: int | None = None
    forest: ForestConfig = field(default_factory=ForestConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    # "source": fit z-scores on training rows only; "global": on every row
    normalization: str = "source"

    def __post_init__(self):
        if self.series not in SERIES:
            raise ValueError(f"series must be one of {SERIES}")
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"feature_set must be one of {FEATURE_SETS}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.normalization not in ("source", "global"):
            raise ValueError("normalization must be 'source' or 'global'")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def canonical(number: int, **overrides) -> ExperimentSpec:
    if number not in CANONICAL_EXPERIMENTS:
        raise ValueError(f"experiment number must be 1-9, got {number}")
    series, feats, model = CANONICAL_EXPERIMENTS[number]
    return ExperimentSpec(series=series, feature_set=feats, model=model, number=number, **overrides)


def feature_names(schema: FeatureSchema, feature_set: str, selection: FeatureSelection | None = None) -> list[str]:
    """Columns for a feature set; NIR channels are part of every set."""
    if feature_set == "all":
        return list(schema.names)
    if selection is None:
        raise ValueError(f"feature set {feature_set!r} needs a feature selection")
    chosen = set(selection.selected if feature_set == "selected" else selection.removed)
    mm = [n for n in schema.names_of_kind(MMWAVE_S21) if n in chosen]
    return mm + schema.names_of_kind(NIR_TRANSMITTANCE)


@dataclass
class Fold:
    label: str
    metrics: Metrics
    train_seconds: float
    test_seconds: float
    n_train: int
    detail: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    series: str
    folds: list[Fold]
    spec: dict = field(default_factory=dict)
    features: list[str] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(f.metrics, metric) for f in self.folds])

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def std(self, metric: str) -> float:
        """Sample standard deviation over folds (0 for a single fold)."""
        v = self.values(metric)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def aggregate(self) -> dict:
        return {m: {"mean": self.mean(m), "std": self.std(m)} for m in METRIC_NAMES}

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock times live in :meth:`timing`."""
        return {
            "series": self.series,
            "spec": self.spec,
            "features": self.features,
            "folds": [
                {"label": f.label, "n_train": f.n_train, **f.metrics.to_dict(), **f.detail} for f in self.folds
            ],
            "aggregate": self.aggregate(),
        }

    def timing(self) -> dict:
        return {
            "folds": {f.label: {"train_seconds": f.train_seconds, "test_seconds": f.test_seconds} for f in self.folds},
            "mean_train_seconds": float(np.mean([f.train_seconds for f in self.folds])),
            "mean_test_seconds": float(np.mean([f.test_seconds for f in self.folds])),
        }


def _restrict(datasets, names):
    return [d.select_features(names) for d in datasets]


def _normalize(train: Sequence[DomainDataset], test: Sequence[DomainDataset]):
    stats = fit_normalization(train)
    return [apply_normalization(stats, d) for d in train], [apply_normalization(stats, d) for d in test]


def train_model(spec: ExperimentSpec, sources: Sequence[DomainDataset], seed: int, n_jobs: int = 1):
    """Fit ``spec.model`` on source domains; returns an object with ``predict``."""
    if spec.model == "random_forests":
        X = np.vstack([d.X for d in sources])
        y = np.concatenate([d.y for d in sources])
        return fit_forest(X, y, replace(spec.forest, seed=seed), n_jobs=n_jobs)
    return train_meta_forests(sources, replace(spec.meta, seed=seed), n_jobs=n_jobs)


def _model_detail(model) -> dict:
    members = getattr(model, "members", None)
    if members is None:
        return {}
    return {
        "members": [
            {
                "weight": m.weight,
                "meta_test_domain": m.meta_test_domain,
                "meta_error": m.meta_error,
                "mmd_to_meta_test": m.mmd_to_meta_test,
            }
            for m in members
        ]
    }


def _prepare(datasets, spec: ExperimentSpec, selection):
    schema = check_same_schema(datasets)
    names = feature_names(schema, spec.feature_set, selection)
    datasets = _restrict(datasets, names)
    if spec.normalization == "global":
        datasets, _ = _normalize(datasets, [])
    return datasets, names


def run_lodo(
    datasets: Sequence[DomainDataset],
    spec: ExperimentSpec,
    selection: FeatureSelection | None = None,
    n_jobs: int = 1,
    on_fold: Callable | None = None,
) -> EvalReport:
    """Hold each domain out in turn; the model never sees the target's rows.

    ``on_fold(target_id, model)`` is called after each fold is trained.
    """
    if len(datasets) < 2:
        raise TooFewDomains("leave-one-domain-out needs at least two domains")
    ids = [d.domain_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError("domain ids must be unique")
    datasets, names = _prepare(datasets, spec, selection)
    folds = []
    for k, target in enumerate(datasets):
        sources = [d for j, d in enumerate(datasets) if j != k]
        if any(d.domain_id == target.domain_id for d in sources):
            raise LeakageError(f"target {target.domain_id!r} present among sources")
        if spec.normalization == "source":
            sources, (target,) = _normalize(sources, [target])
        seed = derive_substream(spec.seed, f"fold-{target.domain_id}")
        t0 = time.perf_counter()
        model = train_model(spec, sources, seed, n_jobs)
        t1 = time.perf_counter()
        pred = model.predict(target.X)
        t2 = time.perf_counter()
        if on_fold is not None:
            on_fold(target.domain_id, model)
        folds.append(
            Fold(
                target.domain_id,
                compute_metrics(target.y, pred),
                t1 - t0,
                t2 - t1,
                sum(len(d) for d in sources),
                _model_detail(model),
            )
        )
    return EvalReport("personalized", folds, spec.to_dict(), names)


def run_generalized(
    datasets: Sequence[DomainDataset],
    spec: ExperimentSpec,
    selection: FeatureSelection | None = None,
    n_jobs: int = 1,
) -> EvalReport:
    """Pool every domain and repeat a random 7:3 train/test split."""
    if spec.model != "random_forests":
        raise ValueError("the generalized series uses random forests only")
    datasets, names = _prepare(datasets, spec, selection)
    schema = datasets[0].schema
    X = np.vstack([d.X for d in datasets])
    y = np.concatenate([d.y for d in datasets])
    n = len(y)
    n_train = int(math.floor(TRAIN_FRACTION * n + 0.5))
    folds = []
    for r in range(spec.repeats):
        perm = np.random.Generator(np.random.PCG64(derive_substream(spec.seed, f"rep-{r}"))).permutation(n)
        tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
        train = DomainDataset("train", X[tr], y[tr], schema)
        test = DomainDataset("test", X[te], y[te], schema)
        if spec.normalization == "source":
            (train,), (test,) = _normalize([train], [test])
        t0 = time.perf_counter()
        model = train_model(spec, [train], derive_substream(spec.seed, f"forest-rep-{r}"), n_jobs)
        t1 = time.perf_counter()
        pred = model.predict(test.X)
        t2 = time.perf_counter()
        folds.append(Fold(f"rep-{r}", compute_metrics(test.y, pred), t1 - t0, t2 - t1, len(tr)))
    return EvalReport("generalized", folds, spec.to_dict(), names)


def run_experiment(datasets, spec: ExperimentSpec, selection=None, n_jobs: int = 1) -> EvalReport:
    if spec.series == "generalized":
        return run_generalized(datasets, spec, selection, n_jobs)
    return run_lodo(datasets, spec, selection, n_jobs)


@dataclass
class PortionAblation:
    portions: list[float]
    reports: list[EvalReport]

    def mean(self, metric: str) -> np.ndarray:
        return np.array([r.mean(metric) for r in self.reports])

    def to_dict(self) -> dict:
        return {
            "portions": self.portions,
            "rows": [{"portion": p, **r.aggregate()} for p, r in zip(self.portions, self.reports)],
            "reports": [r.to_dict() for r in self.reports],
        }


def run_portion_ablation(
    datasets: Sequence[DomainDataset],
    spec: ExperimentSpec,
    portions: Sequence[float] = DEFAULT_PORTIONS,
    selection: FeatureSelection | None = None,
    n_jobs: int = 1,
) -> PortionAblation:
    if spec.model != "meta_forests":
        raise ValueError("portion ablation applies to meta_forests")
    reports = [
        run_lodo(datasets, replace(spec, meta=replace(spec.meta, portion=float(p))), selection, n_jobs)
        for p in portions
    ]
    return PortionAblation([float(p) for p in portions], reports)


# --- table writers -------------------------------------------------------


def _num(v: float) -> str:
    return format(v, ".6f")


def write_table_csv(report: EvalReport, path, number: int | None = None) -> None:
    """Generalized: one row of mean metrics.  Personalized: one row per
    metric with mean, standard deviation and every target domain."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        tag = "" if number is None else str(number)
        if report.series == "generalized":
            w.writerow(["Number", *(METRIC_LABELS[m] for m in METRIC_NAMES)])
            w.writerow([tag, *(_num(report.mean(m)) for m in METRIC_NAMES)])
            return
        w.writerow(["Number", "Metrics", "Average Results", "Standard Deviation", *(f.label for f in report.folds)])
        for m in METRIC_NAMES:
            w.writerow([tag, METRIC_LABELS[m], _num(report.mean(m)), _num(report.std(m)), *(_num(v) for v in report.values(m))])


def write_ablation_csv(ablation: PortionAblation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Metrics", *(f"{p:.0%}" for p in ablation.portions)])
        for m in METRIC_NAMES:
            w.writerow([METRIC_LABELS[m], *(_num(v) for v in ablation.mean(m))])


def write_plot_csv(report: EvalReport, path) -> None:
    """Long-format mean/std per metric, for error-bar charts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n_folds"])
        for m in METRIC_NAMES:
            w.writerow([m, _num(report.mean(m)), _num(report.std(m)), len(report.folds)])
