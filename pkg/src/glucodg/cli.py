"""Command-line entry point: ``synth``, ``prepare``, ``select``, ``experiment``.

Every parameter has a flat dotted key (``forest.n_estimators``,
``meta.portion`` ...).  Values resolve as module defaults, then an optional
``--config`` JSON file of dotted keys, then explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .augment import MixupConfig, balance_domains
from .core import (
    MMWAVE_S21,
    NIR_TRANSMITTANCE,
    derive_substream,
    read_samples_csv,
    read_schema_json,
    write_samples_csv,
    write_schema_json,
)
from .errors import GlucoDGError, InvalidConfig, RankDeficient
from .evaluation import (
    DEFAULT_PORTIONS,
    ExperimentSpec,
    canonical,
    run_experiment,
    run_portion_ablation,
    write_ablation_csv,
    write_plot_csv,
    write_table_csv,
)
from .forest import ForestConfig
from .ingest import apply_normalization, build_aligned_dataset, fit_normalization, load_manifest
from .meta import MetaConfig
from .mixedlm import FeatureSelection, pearson_per_domain, select_features
from .synth import RAW_DOMAIN_SIZES, SynthConfig, generate, write_synth

log = logging.getLogger("glucodg")


def _section(prefix: str, cls, skip=("seed",)) -> dict:
    return {f"{prefix}.{f.name}": f.default for f in fields(cls) if f.name not in skip}


COMMON = {"seed": 0}
DEFAULTS = {
    "synth": {
        **COMMON,
        **_section("synth", SynthConfig),
        "synth.domain_sizes": list(RAW_DOMAIN_SIZES),
        "synth.missing_rate": 0.0,
    },
    "prepare": {
        **COMMON,
        "mixup.alpha": MixupConfig.alpha,
        "mixup.target_count_per_domain": None,
        "prepare.augment": True,
        "prepare.global_norm": False,
    },
    "select": {**COMMON, "select.threshold": 0.05, "select.univariate": False, "select.method": "reml"},
    "experiment": {
        **COMMON,
        "experiment.number": None,
        "experiment.series": None,
        "experiment.feature_set": None,
        "experiment.model": None,
        "experiment.repeats": 10,
        "experiment.global_norm": False,
        "experiment.ablate_portion": False,
        "experiment.portions": list(DEFAULT_PORTIONS),
        **_section("forest", ForestConfig),
        **_section("meta", MetaConfig),
    },
}


def resolve_config(command: str, config_path, flags: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    if config_path:
        loaded = json.loads(Path(config_path).read_text())
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise InvalidConfig(f"unknown config keys for {command!r}: {', '.join(unknown)}")
        cfg.update(loaded)
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _pick(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_data(data_dir):
    data_dir = Path(data_dir)
    schema = read_schema_json(data_dir / "schema.json")
    return read_samples_csv(data_dir / "dataset.csv", schema)


# --- commands ------------------------------------------------------------


def cmd_synth(cfg: dict, out: Path) -> None:
    s = _pick(cfg, "synth")
    missing_rate = s.pop("missing_rate")
    for key in ("domain_sizes", "informative_indices", "effect_sizes", "label_range"):
        if s.get(key) is not None:
            s[key] = tuple(s[key])
    if s.get("domain_sizes") is not None:
        s["n_domains"] = len(s["domain_sizes"])
    datasets, truth = generate(SynthConfig(seed=cfg["seed"], **s))
    write_synth(datasets, truth, out, seed=derive_substream(cfg["seed"], "raw"), missing_rate=missing_rate)
    log.info("wrote %d domains (%s samples) to %s", len(datasets), [len(d) for d in datasets], out)


def cmd_prepare(cfg: dict, manifest: Path, out: Path) -> None:
    streams = load_manifest(manifest)
    raw_counts = {dom: {k: len(s) for k, s in kinds.items()} for dom, kinds in streams.items()}
    aligned = [build_aligned_dataset(k["mmwave"], k["nir"], k["glucose"], dom) for dom, k in streams.items()]
    provenance = {
        "config": cfg,
        "stages": {"raw": raw_counts, "aligned": {d.domain_id: len(d) for d in aligned}},
    }
    data = aligned
    stats = fit_normalization(aligned)
    provenance["zero_variance_features"] = list(stats.dropped)
    if cfg["prepare.global_norm"]:
        data = [apply_normalization(stats, d) for d in data]
        provenance["normalization"] = {"mode": "global", **stats.to_dict()}
    else:
        provenance["normalization"] = {"mode": "deferred to training rows of each fold"}
    if cfg["prepare.augment"]:
        mix = MixupConfig(
            alpha=cfg["mixup.alpha"],
            target_count_per_domain=cfg["mixup.target_count_per_domain"],
            seed=derive_substream(cfg["seed"], "mixup"),
        )
        data = balance_domains(data, mix)
        provenance["stages"]["balanced"] = {d.domain_id: len(d) for d in data}
    provenance["totals"] = {stage: sum(c.values()) for stage, c in provenance["stages"].items() if stage != "raw"}
    out.mkdir(parents=True, exist_ok=True)
    write_samples_csv(data, out / "dataset.csv")
    write_schema_json(data[0].schema, out / "schema.json")
    _dump(provenance, out / "provenance.json")
    for stage, total in provenance["totals"].items():
        log.info("%s: %d samples", stage, total)


def cmd_select(cfg: dict, data_dir: Path, out: Path) -> FeatureSelection:
    datasets = _load_data(data_dir)
    stats = fit_normalization(datasets)
    datasets = [apply_normalization(stats, d) for d in datasets]
    schema = datasets[0].schema
    kw = dict(threshold=cfg["select.threshold"], univariate=cfg["select.univariate"], method=cfg["select.method"])
    sel = select_features(datasets, schema.names_of_kind(MMWAVE_S21), **kw)
    nir = select_features(datasets, schema.names_of_kind(NIR_TRANSMITTANCE), **kw) if schema.names_of_kind(NIR_TRANSMITTANCE) else None
    report = {
        "config": cfg,
        **sel.to_dict(),
        "nir": nir.to_dict() if nir else None,
        "pearson": {
            name: pearson_per_domain(datasets, name) for name in schema.names_of_kind(MMWAVE_S21)
        },
    }
    out.mkdir(parents=True, exist_ok=True)
    _dump(report, out / "selection.json")
    with open(out / "selection.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "beta", "se", "p", "ci_low", "ci_high", "selected"])
        for r in list(sel.per_feature_report) + list(nir.per_feature_report if nir else []):
            w.writerow([r["name"], r["beta"], r["se"], r["p"], r["ci_low"], r["ci_high"], int(r["selected"])])
    log.info("selected %d of %d S21 features", len(sel.selected), len(sel.selected) + len(sel.removed))
    return sel


def _experiment_spec(cfg: dict) -> ExperimentSpec:
    forest = ForestConfig(**_pick(cfg, "forest"))
    meta = MetaConfig(**_pick(cfg, "meta"))
    common = dict(
        repeats=cfg["experiment.repeats"],
        seed=cfg["seed"],
        forest=forest,
        meta=meta,
        normalization="global" if cfg["experiment.global_norm"] else "source",
    )
    if cfg["experiment.number"] is not None:
        return canonical(int(cfg["experiment.number"]), **common)
    missing = [k for k in ("series", "feature_set", "model") if cfg[f"experiment.{k}"] is None]
    if missing:
        raise InvalidConfig(f"give --number or all of --series/--features/--model (missing {', '.join(missing)})")
    return ExperimentSpec(
        series=cfg["experiment.series"],
        feature_set=cfg["experiment.feature_set"],
        model=cfg["experiment.model"],
        **common,
    )


def cmd_experiment(cfg: dict, data_dir: Path, out: Path, selection_path, jobs: int = 1) -> dict:
    spec = _experiment_spec(cfg)
    datasets = _load_data(data_dir)
    selection = None
    if spec.feature_set != "all":
        if selection_path is None:
            raise InvalidConfig(f"feature set {spec.feature_set!r} needs --selection")
        selection = FeatureSelection.from_dict(json.loads(Path(selection_path).read_text()))
    out.mkdir(parents=True, exist_ok=True)
    if cfg["experiment.ablate_portion"]:
        if spec.model != "meta_forests":
            raise InvalidConfig("--ablate-portion needs a meta_forests experiment")
        ablation = run_portion_ablation(datasets, spec, cfg["experiment.portions"], selection, jobs)
        report = {"config": cfg, "ablation": ablation.to_dict()}
        write_ablation_csv(ablation, out / "table.csv")
        timing = {f"{p}": r.timing() for p, r in zip(ablation.portions, ablation.reports)}
    else:
        result = run_experiment(datasets, spec, selection, jobs)
        report = {"config": cfg, **result.to_dict()}
        write_table_csv(result, out / "table.csv", spec.number)
        write_plot_csv(result, out / "plot.csv")
        timing = result.timing()
    _dump(report, out / "report.json")
    _dump({"jobs": jobs, **timing}, out / "timing.json")
    return report


# --- argument parsing ----------------------------------------------------


def _csv_ints(s: str):
    return [int(v) for v in s.split(",") if v]


def _csv_floats(s: str):
    return [float(v) for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glucodg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of dotted-key overrides")
        sp.add_argument("--seed", dest="seed", type=int)
        sp.add_argument("--out", required=True, type=Path, help="output directory")

    s = sub.add_parser("synth", help="write a synthetic raw-stream dataset")
    common(s)
    s.add_argument("--sizes", dest="synth.domain_sizes", type=_csv_ints, help="samples per domain, comma separated")
    s.add_argument("--noise-sd", dest="synth.noise_sd", type=float)
    s.add_argument("--shift-sd", dest="synth.domain_shift_sd", type=float)
    s.add_argument("--intercept-sd", dest="synth.domain_intercept_sd", type=float)
    s.add_argument("--missing-rate", dest="synth.missing_rate", type=float)

    s = sub.add_parser("prepare", help="align, impute and balance raw streams")
    common(s)
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--alpha", dest="mixup.alpha", type=float)
    s.add_argument("--target-count", dest="mixup.target_count_per_domain", type=int)
    s.add_argument("--no-augment", dest="prepare.augment", action="store_const", const=False)
    s.add_argument("--paper-faithful-global-norm", dest="prepare.global_norm", action="store_const", const=True)

    s = sub.add_parser("select", help="mixed-model feature selection")
    common(s)
    s.add_argument("--data", required=True, type=Path, help="directory written by 'prepare'")
    s.add_argument("--threshold", dest="select.threshold", type=float)
    s.add_argument("--univariate", dest="select.univariate", action="store_const", const=True)
    s.add_argument("--method", dest="select.method", choices=("reml", "ml"))

    s = sub.add_parser("experiment", help="run one experiment of the 1-9 matrix or a custom one")
    common(s)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--selection", type=Path, help="selection.json written by 'select'")
    s.add_argument("--number", dest="experiment.number", type=int, choices=range(1, 10), metavar="{1..9}")
    s.add_argument("--series", dest="experiment.series", choices=("generalized", "personalized"))
    s.add_argument("--features", dest="experiment.feature_set", choices=("all", "selected", "removed"))
    s.add_argument("--model", dest="experiment.model", choices=("random_forests", "meta_forests"))
    s.add_argument("--repeats", dest="experiment.repeats", type=int)
    s.add_argument("--ablate-portion", dest="experiment.ablate_portion", action="store_const", const=True)
    s.add_argument("--portions", dest="experiment.portions", type=_csv_floats)
    s.add_argument("--portion", dest="meta.portion", type=float)
    s.add_argument("--iterations", dest="meta.iterations", type=int)
    s.add_argument("--trees-per-iteration", dest="meta.trees_per_iteration", type=int)
    s.add_argument("--n-estimators", dest="forest.n_estimators", type=int)
    s.add_argument("--max-depth", dest="forest.max_depth", type=int)
    s.add_argument("--paper-faithful-global-norm", dest="experiment.global_norm", action="store_const", const=True)
    s.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    ns = vars(args)
    flags = {k: v for k, v in ns.items() if k == "seed" or "." in k}
    try:
        cfg = resolve_config(args.command, args.config, flags)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "prepare":
            cmd_prepare(cfg, args.manifest, args.out)
        elif args.command == "select":
            cmd_select(cfg, args.data, args.out)
        else:
            cmd_experiment(cfg, args.data, args.out, args.selection, args.jobs)
    except RankDeficient as e:
        print(f"error: rank-deficient design: {e}", file=sys.stderr)
        return 1
    except (GlucoDGError, ValueError, TypeError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
