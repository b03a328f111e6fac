"""Shared domain types, seeded substreams and the sample CSV format."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyInput, SchemaMismatch

MMWAVE_S21 = "mmwave_s21"
NIR_TRANSMITTANCE = "nir_transmittance"
FEATURE_KINDS = (MMWAVE_S21, NIR_TRANSMITTANCE)
_UNIT_FOR_KIND = {MMWAVE_S21: "dB", NIR_TRANSMITTANCE: "%"}

_MASK64 = (1 << 64) - 1


def derive_substream(seed: int, stream_tag: str) -> int:
    """Child seed for a named stream.

    Hashing (rather than drawing from a shared generator) keeps every
    consumer independent of call order and thread scheduling.
    """
    if not stream_tag:
        raise ValueError("stream_tag must be nonempty")
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    h = hashlib.blake2b(digest_size=8, person=b"glucodg-rng")
    h.update(seed.to_bytes(8, "little"))
    h.update(stream_tag.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, stream_tag: str | None = None) -> np.random.Generator:
    if stream_tag is not None:
        seed = derive_substream(seed, stream_tag)
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    units: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not (len(self.names) == len(self.units) == len(self.kinds)):
            raise ValueError("names, units and kinds must have equal length")
        bad = [k for k in self.kinds if k not in FEATURE_KINDS]
        if bad:
            raise ValueError(f"unknown feature kinds: {bad}")

    @classmethod
    def from_kinds(cls, names: Sequence[str], kinds: Sequence[str]) -> "FeatureSchema":
        return cls(tuple(names), tuple(_UNIT_FOR_KIND[k] for k in kinds), tuple(kinds))

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def schema_id(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(payload).hexdigest()[:12]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def names_of_kind(self, kind: str) -> list[str]:
        return [n for n, k in zip(self.names, self.kinds) if k == kind]

    def subset(self, names: Sequence[str]) -> "FeatureSchema":
        idx = [self.index(n) for n in names]
        return FeatureSchema(
            tuple(self.names[i] for i in idx),
            tuple(self.units[i] for i in idx),
            tuple(self.kinds[i] for i in idx),
        )

    def to_dict(self) -> dict:
        return {"names": list(self.names), "units": list(self.units), "kinds": list(self.kinds)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(d["names"]), tuple(d["units"]), tuple(d["kinds"]))


def default_schema(n_mmwave: int = 21, n_nir: int = 2) -> FeatureSchema:
    """21 S21 channels at 36.50-41.50 GHz (0.25 GHz steps) plus NIR at 1370/1640 nm."""
    if n_mmwave == 21:
        mm = [f"s21_{36.5 + 0.25 * i:.2f}GHz" for i in range(21)]
    else:
        mm = [f"s21_{i:02d}" for i in range(n_mmwave)]
    nir = ["nir_1370nm", "nir_1640nm"] if n_nir == 2 else [f"nir_{i:02d}" for i in range(n_nir)]
    return FeatureSchema.from_kinds(mm + nir, [MMWAVE_S21] * n_mmwave + [NIR_TRANSMITTANCE] * n_nir)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float
    domain_id: str
    timestamp: float = math.nan


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """All samples of one subject, stored column-wise.

    ``X`` is (n, p) in schema order, ``y`` the glucose labels in mg/dL (or
    their normalized counterpart), ``timestamps`` NaN where unknown.
    """

    domain_id: str
    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1) if self.schema.n_features == 1 else X.reshape(1, -1))
        y = _frozen(self.y).reshape(-1)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyInput(f"domain {self.domain_id!r} has no samples")
        if X.shape[1] != self.schema.n_features:
            raise SchemaMismatch(
                f"domain {self.domain_id!r}: {X.shape[1]} columns, schema has {self.schema.n_features}"
            )
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y row counts differ")
        if np.any(y[~np.isnan(y)] <= 0):
            raise ValueError(f"domain {self.domain_id!r}: glucose labels must be positive")
        ts = self.timestamps
        ts = np.full(X.shape[0], np.nan) if ts is None else np.asarray(ts, dtype=float).reshape(-1)
        if ts.shape[0] != X.shape[0]:
            raise ValueError("timestamps length differs from row count")
        object.__setattr__(self, "domain_id", str(self.domain_id))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "timestamps", _frozen(ts))

    def __len__(self) -> int:
        return self.X.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.domain_id == other.domain_id
            and self.schema == other.schema
            and np.array_equal(self.X, other.X, equal_nan=True)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.timestamps, other.timestamps, equal_nan=True)
        )

    __hash__ = None

    @property
    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(self.X[i], float(self.y[i]), self.domain_id, float(self.timestamps[i]))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], schema: FeatureSchema) -> "DomainDataset":
        if not samples:
            raise EmptyInput("no samples")
        ids = {s.domain_id for s in samples}
        if len(ids) != 1:
            raise ValueError(f"samples span several domains: {sorted(ids)}")
        return cls(
            samples[0].domain_id,
            np.vstack([np.asarray(s.features, dtype=float) for s in samples]),
            np.array([s.label for s in samples]),
            schema,
            np.array([s.timestamp for s in samples]),
        )

    def select_features(self, names: Sequence[str]) -> "DomainDataset":
        idx = [self.schema.index(n) for n in names]
        return DomainDataset(self.domain_id, self.X[:, idx], self.y, self.schema.subset(names), self.timestamps)

    def take(self, rows) -> "DomainDataset":
        rows = np.asarray(rows)
        return DomainDataset(self.domain_id, self.X[rows], self.y[rows], self.schema, self.timestamps[rows])


def check_same_schema(datasets: Iterable[DomainDataset]) -> FeatureSchema:
    datasets = list(datasets)
    if not datasets:
        raise EmptyInput("no datasets")
    schema = datasets[0].schema
    for d in datasets[1:]:
        if d.schema != schema:
            raise SchemaMismatch(f"domain {d.domain_id!r} uses a different schema")
    return schema


def pool(datasets: Sequence[DomainDataset]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack datasets into (X, y, domain_ids)."""
    check_same_schema(datasets)
    X = np.vstack([d.X for d in datasets])
    y = np.concatenate([d.y for d in datasets])
    groups = np.concatenate([np.full(len(d), d.domain_id, dtype=object) for d in datasets])
    return X, y, groups


# --- serialization -------------------------------------------------------


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def _parse(cell: str) -> float:
    cell = cell.strip()
    return math.nan if cell == "" else float(cell)


def write_samples_csv(datasets: Sequence[DomainDataset], path) -> None:
    schema = check_same_schema(datasets)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain_id", "timestamp", "label", *schema.names])
        for d in datasets:
            for i in range(len(d)):
                w.writerow([d.domain_id, _fmt(d.timestamps[i]), _fmt(d.y[i]), *(_fmt(v) for v in d.X[i])])


def read_samples_csv(path, schema: FeatureSchema) -> list[DomainDataset]:
    rows: dict[str, list] = {}
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:3] != ["domain_id", "timestamp", "label"] or tuple(header[3:]) != schema.names:
            raise SchemaMismatch(f"{path}: header does not match schema")
        for line in r:
            if not line:
                continue
            rows.setdefault(line[0], []).append([_parse(c) for c in line[1:]])
    out = []
    for dom, recs in rows.items():
        a = np.array(recs, dtype=float)
        out.append(DomainDataset(dom, a[:, 2:], a[:, 1], schema, a[:, 0]))
    return out


def write_schema_json(schema: FeatureSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def read_schema_json(path) -> FeatureSchema:
    return FeatureSchema.from_dict(json.loads(Path(path).read_text()))
