"""Synthetic multi-subject data shaped like the mm-wave + NIR glucose set.

Features are Gaussian with a per-subject mean shift, labels are linear in a
planted subset of features plus a per-subject random intercept, then mapped
affinely into a physiological glucose range.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    DomainDataset,
    FeatureSchema,
    make_rng,
    default_schema,
    write_samples_csv,
    write_schema_json,
)
from .errors import InvalidConfig
from .ingest import RawStream, write_stream_csv

# one plausible split of 509 aligned samples over five subjects, largest 112
RAW_DOMAIN_SIZES = (112, 105, 97, 100, 95)


@dataclass(frozen=True)
class SynthConfig:
    n_domains: int = 5
    samples_per_domain: int = 112
    # overrides samples_per_domain when given
    domain_sizes: tuple[int, ...] | None = None
    n_mmwave_features: int = 21
    n_nir_features: int = 2
    # None -> five spread-out S21 channels plus every NIR channel
    informative_indices: tuple[int, ...] | None = None
    effect_sizes: tuple[float, ...] | None = None
    domain_intercept_sd: float = 1.0
    domain_shift_sd: float = 0.5
    noise_sd: float = 1.0
    label_range: tuple[float, float] = (37.8, 547.2)
    seed: int = 0

    def resolved(self) -> "SynthConfig":
        p = self.n_mmwave_features + self.n_nir_features
        inf = self.informative_indices
        if inf is None:
            step = max(self.n_mmwave_features // 5, 1)
            mm = tuple(range(step // 2, self.n_mmwave_features, step))[:5]
            inf = mm + tuple(range(self.n_mmwave_features, p))
        eff = self.effect_sizes
        if eff is None:
            base = (0.8, -0.6, 0.7, 0.5, -0.9, 0.6, 0.5)
            eff = tuple(base[i % len(base)] for i in range(len(inf)))
        sizes = self.domain_sizes or (self.samples_per_domain,) * self.n_domains
        cfg = SynthConfig(**{**asdict(self), "informative_indices": tuple(inf), "effect_sizes": tuple(eff), "domain_sizes": tuple(sizes)})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        p = self.n_mmwave_features + self.n_nir_features
        if self.n_domains < 1 or p < 1:
            raise InvalidConfig("need at least one domain and one feature")
        if self.domain_sizes is not None and (len(self.domain_sizes) != self.n_domains or min(self.domain_sizes) < 1):
            raise InvalidConfig("domain_sizes must give one positive size per domain")
        inf = self.informative_indices or ()
        if any(i < 0 or i >= p for i in inf) or len(set(inf)) != len(inf):
            raise InvalidConfig(f"informative_indices must be distinct indices below {p}")
        if self.effect_sizes is not None and len(self.effect_sizes) != len(inf):
            raise InvalidConfig("one effect size per informative feature required")
        if min(self.domain_intercept_sd, self.domain_shift_sd, self.noise_sd) < 0:
            raise InvalidConfig("standard deviations must be non-negative")
        lo, hi = self.label_range
        if not 0 < lo < hi:
            raise InvalidConfig("label_range must satisfy 0 < min < max")


@dataclass(frozen=True)
class GroundTruth:
    informative_indices: tuple[int, ...]
    informative_names: tuple[str, ...]
    effect_sizes: tuple[float, ...]
    domain_intercepts: dict
    domain_means: dict
    label_center: float
    label_scale: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[list[DomainDataset], GroundTruth]:
    cfg = cfg.resolved()
    schema = default_schema(cfg.n_mmwave_features, cfg.n_nir_features)
    p = schema.n_features
    inf = np.array(cfg.informative_indices, dtype=int)
    eff = np.array(cfg.effect_sizes, dtype=float)

    raw_sd = math.sqrt(
        float(eff @ eff) * (1 + cfg.domain_shift_sd**2) + cfg.domain_intercept_sd**2 + cfg.noise_sd**2
    )
    lo, hi = cfg.label_range
    center = 0.5 * (lo + hi)
    # +-3 raw standard deviations span the label range
    scale = (hi - lo) / 6.0 / raw_sd if raw_sd > 0 else 0.0

    datasets, intercepts, means = [], {}, {}
    for d, n in enumerate(cfg.domain_sizes):
        dom = f"S{d + 1}"
        rng = make_rng(cfg.seed, f"synth-{dom}")
        mu = rng.normal(0.0, cfg.domain_shift_sd, p) if cfg.domain_shift_sd > 0 else np.zeros(p)
        b = float(rng.normal(0.0, cfg.domain_intercept_sd)) if cfg.domain_intercept_sd > 0 else 0.0
        X = mu + rng.standard_normal((n, p))
        noise = rng.normal(0.0, cfg.noise_sd, n) if cfg.noise_sd > 0 else np.zeros(n)
        raw = b + X[:, inf] @ eff + noise
        y = np.clip(center + scale * raw, lo, hi)
        datasets.append(DomainDataset(dom, X, y, schema))
        intercepts[dom] = b
        means[dom] = mu.tolist()

    truth = GroundTruth(
        tuple(int(i) for i in inf),
        tuple(schema.names[i] for i in inf),
        tuple(float(e) for e in eff),
        intercepts,
        means,
        center,
        scale,
        asdict(cfg),
    )
    return datasets, truth


# --- raw-stream export ---------------------------------------------------

S21_OFFSET_DB, S21_SCALE_DB = -40.0, 1.5
NIR_OFFSET_PCT, NIR_SCALE_PCT = 55.0, 4.0


def to_physical(dataset: DomainDataset) -> DomainDataset:
    """Map unit-variance features to dB (S21) and % (NIR) ranges."""
    kinds = np.array(dataset.schema.kinds)
    offset = np.where(kinds == "mmwave_s21", S21_OFFSET_DB, NIR_OFFSET_PCT)
    scale = np.where(kinds == "mmwave_s21", S21_SCALE_DB, NIR_SCALE_PCT)
    return DomainDataset(dataset.domain_id, offset + scale * dataset.X, dataset.y, dataset.schema, dataset.timestamps)


def to_raw_streams(dataset: DomainDataset, seed: int, period: float = 60.0, missing_rate: float = 0.0):
    """Split one aligned domain into mm-wave, NIR and glucose streams.

    NIR records sit on a jittered ``period`` grid.  The mm-wave stream holds
    the true record within 2 s of each NIR time plus a decoy record half a
    period later; glucose is recorded at the NIR times.  Alignment therefore
    recovers the aligned dataset exactly when ``missing_rate`` is 0.
    """
    rng = make_rng(seed, f"raw-{dataset.domain_id}")
    n = len(dataset)
    schema = dataset.schema
    mm_idx = [i for i, k in enumerate(schema.kinds) if k == "mmwave_s21"]
    nir_idx = [i for i, k in enumerate(schema.kinds) if k == "nir_transmittance"]
    t0 = 1_700_000_000.0 + 86_400.0 * float(rng.integers(0, 365))
    t_nir = t0 + period * np.arange(n) + rng.uniform(-period / 10, period / 10, n)
    t_mm_true = t_nir + rng.uniform(-2.0, 2.0, n)
    t_mm_decoy = t_nir + period / 2
    decoy_vals = dataset.X[np.roll(np.arange(n), 1)][:, mm_idx] + rng.normal(0, 0.1, (n, len(mm_idx)))

    t_mm = np.concatenate([t_mm_true, t_mm_decoy])
    v_mm = np.vstack([dataset.X[:, mm_idx], decoy_vals])
    order = np.argsort(t_mm, kind="mergesort")
    t_mm, v_mm = t_mm[order], v_mm[order]
    v_nir = dataset.X[:, nir_idx].copy()
    if missing_rate > 0:
        v_mm[rng.random(v_mm.shape) < missing_rate] = np.nan
        v_nir[rng.random(v_nir.shape) < missing_rate] = np.nan
    names = schema.names
    return (
        RawStream("mmwave", t_mm, v_mm, tuple(names[i] for i in mm_idx)),
        RawStream("nir", t_nir, v_nir, tuple(names[i] for i in nir_idx)),
        RawStream("glucose", t_nir, dataset.y, ("glucose_mgdl",)),
    )


def write_synth(
    datasets: Sequence[DomainDataset],
    truth: GroundTruth,
    out_dir,
    seed: int = 0,
    missing_rate: float = 0.0,
) -> dict:
    """Write aligned domain CSVs, raw streams, a manifest and the ground truth."""
    out = Path(out_dir)
    (out / "domains").mkdir(parents=True, exist_ok=True)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    entries = []
    for d in datasets:
        phys = to_physical(d)
        mm, nir, glu = to_raw_streams(phys, seed, missing_rate=missing_rate)
        phys = DomainDataset(d.domain_id, phys.X, phys.y, phys.schema, nir.timestamps)
        write_samples_csv([phys], out / "domains" / f"{d.domain_id}.csv")
        for s in (mm, nir, glu):
            fname = f"raw/{d.domain_id}_{s.kind}.csv"
            write_stream_csv(s, out / fname)
            entries.append({"file": fname, "kind": s.kind, "domain_id": d.domain_id})
    schema: FeatureSchema = datasets[0].schema
    write_schema_json(schema, out / "schema.json")
    manifest = {"streams": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (out / "ground_truth.json").write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
