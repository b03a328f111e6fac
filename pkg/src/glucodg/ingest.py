"""Raw sensor streams to aligned, imputed, normalized domain datasets."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    MMWAVE_S21,
    NIR_TRANSMITTANCE,
    DomainDataset,
    FeatureSchema,
    check_same_schema,
)
from .errors import (
    AllMissingColumn,
    DegenerateInterval,
    EmptyStream,
    OutOfRange,
    SchemaMismatch,
    TooFewSamples,
)

STREAM_KINDS = ("mmwave", "nir", "glucose")


@dataclass(frozen=True, eq=False)
class RawStream:
    kind: str
    timestamps: np.ndarray
    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.shape[0] != t.shape[0]:
            raise ValueError("timestamps and values row counts differ")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError(f"{self.kind} timestamps must be strictly increasing")
        names = tuple(self.names) or tuple(f"{self.kind}_{i}" for i in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise ValueError("names length differs from value columns")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return self.timestamps.shape[0]

    def take(self, rows) -> "RawStream":
        return RawStream(self.kind, self.timestamps[rows], self.values[rows], self.names)


def impute_means(stream: RawStream) -> RawStream:
    v = np.array(stream.values)
    missing = np.isnan(v)
    if not missing.any():
        return stream
    present = (~missing).sum(axis=0)
    for j in np.flatnonzero(present == 0):
        raise AllMissingColumn(stream.names[j])
    means = np.nansum(v, axis=0) / present
    rows, cols = np.nonzero(missing)
    v[rows, cols] = means[cols]
    return RawStream(stream.kind, stream.timestamps, v, stream.names)


def nearest_indices(ref_times: np.ndarray, other_times: np.ndarray) -> np.ndarray:
    """Index into ``other_times`` of the record closest to each reference time; ties go to the earlier record."""
    ref_times = np.asarray(ref_times, dtype=float)
    pos = np.searchsorted(other_times, ref_times, side="left")
    right = np.clip(pos, 0, len(other_times) - 1)
    left = np.clip(pos - 1, 0, len(other_times) - 1)
    d_left = np.abs(ref_times - other_times[left])
    d_right = np.abs(other_times[right] - ref_times)
    return np.where(d_left <= d_right, left, right)


def align_nearest(reference: RawStream, other: RawStream) -> RawStream:
    if len(reference) == 0 or len(other) == 0:
        raise EmptyStream("cannot align an empty stream")
    idx = nearest_indices(reference.timestamps, other.timestamps)
    return RawStream(other.kind, reference.timestamps, other.values[idx], other.names)


def interpolate_labels(glucose: RawStream, query_times) -> np.ndarray:
    """Piecewise-linear glucose estimate at each query time.

    Uses the signed slope between the bracketing measurements, so
    falling segments interpolate downwards.
    """
    t = glucose.timestamps
    g = glucose.values[:, 0]
    q = np.atleast_1d(np.asarray(query_times, dtype=float))
    if len(t) < 2:
        raise EmptyStream("need at least two glucose records")
    for tj in q:
        if not (t[0] <= tj <= t[-1]):
            raise OutOfRange(float(tj))
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DegenerateInterval("repeated glucose timestamp")
    i = np.clip(np.searchsorted(t, q, side="right") - 1, 0, len(t) - 2)
    out = g[i] + (q - t[i]) * (g[i + 1] - g[i]) / (t[i + 1] - t[i])
    exact = q == t[i + 1]
    out[exact] = g[i + 1][exact]
    return out


@dataclass(frozen=True, eq=False)
class NormalizationStats:
    schema: FeatureSchema
    mean: np.ndarray
    std: np.ndarray
    fitted_on: tuple[str, ...]
    dropped: tuple[str, ...] = field(default=())

    @property
    def retained(self) -> list[str]:
        return [n for n in self.schema.names if n not in self.dropped]

    def to_dict(self) -> dict:
        return {
            "features": list(self.schema.names),
            "mean": [float(m) for m in self.mean],
            "std": [float(s) for s in self.std],
            "fitted_on": list(self.fitted_on),
            "dropped": list(self.dropped),
        }


def fit_normalization(datasets: Sequence[DomainDataset]) -> NormalizationStats:
    schema = check_same_schema(datasets)
    X = np.vstack([d.X for d in datasets])
    if X.shape[0] < 2:
        raise TooFewSamples("need at least two pooled samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    dropped = tuple(n for n, s in zip(schema.names, std) if not s > 0)
    return NormalizationStats(schema, mean, std, tuple(d.domain_id for d in datasets), dropped)


def apply_normalization(stats: NormalizationStats, dataset: DomainDataset) -> DomainDataset:
    """Z-score features; zero-variance features are dropped, labels untouched."""
    if dataset.schema != stats.schema:
        raise SchemaMismatch(f"domain {dataset.domain_id!r} does not match normalization schema")
    keep = [i for i, n in enumerate(stats.schema.names) if n not in stats.dropped]
    Z = (dataset.X[:, keep] - stats.mean[keep]) / stats.std[keep]
    return DomainDataset(dataset.domain_id, Z, dataset.y, stats.schema.subset(stats.retained), dataset.timestamps)


def invert_normalization(stats: NormalizationStats, dataset: DomainDataset) -> DomainDataset:
    keep = [i for i, n in enumerate(stats.schema.names) if n not in stats.dropped]
    if dataset.schema != stats.schema.subset(stats.retained):
        raise SchemaMismatch("dataset is not in this normalization's output schema")
    if stats.dropped:
        raise ValueError("cannot invert a transform that dropped features")
    X = dataset.X * stats.std[keep] + stats.mean[keep]
    return DomainDataset(dataset.domain_id, X, dataset.y, stats.schema, dataset.timestamps)


def normalize_all(train: Sequence[DomainDataset], others: Sequence[DomainDataset] = ()):
    """Fit on ``train`` and apply to ``train`` and ``others``."""
    stats = fit_normalization(train)
    return (
        stats,
        [apply_normalization(stats, d) for d in train],
        [apply_normalization(stats, d) for d in others],
    )


def build_aligned_dataset(
    mmwave: RawStream, nir: RawStream, glucose: RawStream, domain_id: str
) -> DomainDataset:
    """One sample per NIR record: nearest mm-wave record, interpolated glucose.

    Feature streams are mean-imputed before alignment; glucose records
    with a missing value are discarded.
    """
    for s in (mmwave, nir, glucose):
        if len(s) == 0:
            raise EmptyStream(f"{s.kind} stream is empty")
    mmwave = impute_means(mmwave)
    nir = impute_means(nir)
    present = ~np.isnan(glucose.values[:, 0])
    glucose = glucose.take(np.flatnonzero(present))
    aligned = align_nearest(nir, mmwave)
    labels = interpolate_labels(glucose, nir.timestamps)
    schema = FeatureSchema.from_kinds(
        list(mmwave.names) + list(nir.names),
        [MMWAVE_S21] * len(mmwave.names) + [NIR_TRANSMITTANCE] * len(nir.names),
    )
    X = np.hstack([aligned.values, nir.values])
    return DomainDataset(domain_id, X, labels, schema, nir.timestamps)


# --- raw stream files ----------------------------------------------------


def read_stream_csv(path, kind: str) -> RawStream:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "timestamp":
            raise ValueError(f"{path}: first column must be 'timestamp'")
        rows = [[float(c) if c.strip() else np.nan for c in line] for line in r if line]
    a = np.array(rows, dtype=float).reshape(-1, len(header))
    return RawStream(kind, a[:, 0], a[:, 1:], tuple(header[1:]))


def write_stream_csv(stream: RawStream, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *stream.names])
        for t, row in zip(stream.timestamps, stream.values):
            w.writerow([repr(float(t)), *("" if np.isnan(v) else repr(float(v)) for v in row)])


def load_manifest(path) -> dict[str, dict[str, RawStream]]:
    """Read a manifest ``{"streams": [{"file", "kind", "domain_id"}, ...]}``.

    Returns ``{domain_id: {kind: RawStream}}`` in manifest order; file
    paths are relative to the manifest.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    spec = json.loads(path.read_text())
    out: dict[str, dict[str, RawStream]] = {}
    for entry in spec["streams"]:
        kind = entry["kind"]
        if kind not in STREAM_KINDS:
            raise ValueError(f"manifest entry {entry['file']!r}: unknown kind {kind!r}")
        dom = out.setdefault(str(entry["domain_id"]), {})
        if kind in dom:
            raise ValueError(f"duplicate {kind} stream for domain {entry['domain_id']!r}")
        dom[kind] = read_stream_csv(path.parent / entry["file"], kind)
    for dom_id, streams in out.items():
        missing = set(STREAM_KINDS) - set(streams)
        if missing:
            raise ValueError(f"domain {dom_id!r} lacks streams: {sorted(missing)}")
    return out
