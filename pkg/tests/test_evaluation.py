import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucodg.core import DomainDataset
from glucodg.errors import LengthMismatch, ZeroReference
from glucodg.evaluation import (
    ExperimentSpec,
    canonical,
    compute_metrics,
    feature_names,
    run_generalized,
    run_lodo,
    run_portion_ablation,
    write_ablation_csv,
    write_plot_csv,
    write_table_csv,
)
from glucodg.forest import ForestConfig
from glucodg.meta import MetaConfig
from glucodg.mixedlm import FeatureSelection
from glucodg.synth import SynthConfig, generate

FAST_FOREST = ForestConfig(n_estimators=5)
FAST_META = MetaConfig(iterations=3, trees_per_iteration=3)


@pytest.fixture(scope="module")
def domains():
    return generate(SynthConfig(seed=1))[0]


def test_metric_hand_example():
    m = compute_metrics([100.0, 200.0], [110.0, 170.0])
    assert m.mae == 20.0
    assert m.rmse == pytest.approx(math.sqrt(500.0))
    assert m.mape == pytest.approx(12.5)
    assert m.n == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_rmse_dominates_mae_and_scaling(seed, c):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(40, 500, 30)
    pred = ref + rng.normal(0, 20, 30)
    m = compute_metrics(ref, pred)
    assert m.rmse >= m.mae
    s = compute_metrics(c * ref, c * pred)
    assert s.mae == pytest.approx(c * m.mae, rel=1e-12)
    assert s.rmse == pytest.approx(c * m.rmse, rel=1e-12)
    assert s.mape == pytest.approx(m.mape, rel=1e-12)


def test_metric_errors():
    with pytest.raises(LengthMismatch):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ZeroReference):
        compute_metrics([0.0, 1.0], [1.0, 1.0])


def test_canonical_experiments():
    assert canonical(8).model == "meta_forests" and canonical(8).feature_set == "selected"
    assert canonical(2).series == "generalized"
    with pytest.raises(ValueError):
        canonical(10)


def test_feature_names_keep_nir(domains):
    schema = domains[0].schema
    sel = FeatureSelection(("s21_36.50GHz",), tuple(n for n in schema.names[1:21]), 0.05)
    assert feature_names(schema, "selected", sel) == ["s21_36.50GHz", "nir_1370nm", "nir_1640nm"]
    assert len(feature_names(schema, "removed", sel)) == 22
    assert len(feature_names(schema, "all")) == 23
    with pytest.raises(ValueError):
        feature_names(schema, "selected")


def test_generalized_split_sizes(domains):
    rep = run_generalized(domains, ExperimentSpec(series="generalized", repeats=2, forest=FAST_FOREST))
    assert [f.n_train for f in rep.folds] == [392, 392]
    assert [f.metrics.n for f in rep.folds] == [168, 168]


def test_lodo_fold_count_and_std(domains):
    rep = run_lodo(domains, ExperimentSpec(forest=FAST_FOREST))
    assert [f.label for f in rep.folds] == [d.domain_id for d in domains]
    assert all(f.n_train == 448 for f in rep.folds)
    v = rep.values("mae")
    assert rep.std("mae") == pytest.approx(np.std(v, ddof=1))
    d = rep.to_dict()
    assert "train_seconds" not in json.dumps(d)


def test_poisoned_target_does_not_change_model(domains):
    spec = ExperimentSpec(model="meta_forests", meta=FAST_META)
    clean = {}
    run_lodo(domains, spec, on_fold=lambda k, m: clean.setdefault(k, json.dumps(m.to_dict())))
    for i, target in enumerate(domains):
        X = target.X.copy()
        X[0] = 1e6
        y = target.y.copy()
        y[0] = 1e6
        poisoned = list(domains)
        poisoned[i] = DomainDataset(target.domain_id, X, y, target.schema)
        seen = {}
        run_lodo(poisoned, spec, on_fold=lambda k, m: seen.setdefault(k, json.dumps(m.to_dict())))
        assert seen[target.domain_id] == clean[target.domain_id]


def test_global_normalization_runs(domains):
    rep = run_lodo(domains, ExperimentSpec(forest=FAST_FOREST, normalization="global"))
    assert len(rep.folds) == 5


def test_ablation_and_writers(domains, tmp_path):
    spec = ExperimentSpec(model="meta_forests", meta=FAST_META)
    abl = run_portion_ablation(domains, spec, portions=(0.1, 0.5))
    assert abl.mean("mae").shape == (2,)
    write_ablation_csv(abl, tmp_path / "abl.csv")
    rows = list(csv.reader(open(tmp_path / "abl.csv")))
    assert rows[0] == ["Metrics", "10%", "50%"] and len(rows) == 4
    rep = abl.reports[0]
    write_table_csv(rep, tmp_path / "t.csv", number=8)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:4] == ["Number", "Metrics", "Average Results", "Standard Deviation"]
    assert rows[1][1] == "MAE (mg/dL)" and len(rows[1]) == 4 + 5
    write_plot_csv(rep, tmp_path / "p.csv")
    assert len(list(csv.reader(open(tmp_path / "p.csv")))) == 4
    with pytest.raises(ValueError):
        run_portion_ablation(domains, ExperimentSpec(), portions=(0.1,))


def test_generalized_rejects_meta_forests(domains):
    with pytest.raises(ValueError):
        run_generalized(domains, ExperimentSpec(series="generalized", model="meta_forests"))
