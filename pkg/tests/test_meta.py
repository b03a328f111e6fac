import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucodg.errors import PortionTooSmall, SchemaMismatch, TooFewDomains
from glucodg.meta import MetaConfig, WeightedEnsemble, combine_weights, train_meta_forests
from glucodg.synth import SynthConfig, generate

SMALL = MetaConfig(iterations=4, trees_per_iteration=3, seed=5)


@pytest.fixture(scope="module")
def domains():
    return generate(SynthConfig(samples_per_domain=40, seed=3))[0]


def test_equal_scores_give_uniform_weights():
    np.testing.assert_allclose(combine_weights([2.0] * 4, [0.1] * 4), 0.25)


def test_all_zero_distance_term_is_dropped():
    w = combine_weights([1.0, 2.0], [0.0, 0.0])
    np.testing.assert_allclose(w, np.exp([-1 / 1.5, -2 / 1.5]) / np.exp([-1 / 1.5, -2 / 1.5]).sum())


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.01, 100), min_size=2, max_size=8),
    st.floats(0.01, 10),
)
def test_weights_monotone_in_error(errors, temp):
    dist = np.ones(len(errors))
    w = combine_weights(errors, dist, temp)
    assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
    order = np.argsort(errors, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-15)


def test_single_iteration_has_weight_one(domains):
    ens = train_meta_forests(domains, MetaConfig(iterations=1, trees_per_iteration=2))
    assert ens.weights.tolist() == [1.0]


def test_training_is_deterministic_and_thread_independent(domains):
    a = train_meta_forests(domains, SMALL, n_jobs=1)
    b = train_meta_forests(domains, SMALL, n_jobs=3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert abs(a.weights.sum() - 1) < 1e-12
    assert {m.meta_test_domain for m in a.members} <= {d.domain_id for d in domains}


def test_predictions_within_label_range_and_round_trip(domains):
    ens = train_meta_forests(domains, SMALL)
    X = np.random.default_rng(0).normal(0, 4, size=(50, domains[0].schema.n_features))
    pred = ens.predict(X)
    lo = min(d.y.min() for d in domains)
    hi = max(d.y.max() for d in domains)
    assert np.all(pred >= lo - 1e-9) and np.all(pred <= hi + 1e-9)
    back = WeightedEnsemble.from_dict(json.loads(json.dumps(ens.to_dict())))
    np.testing.assert_array_equal(back.predict(X), pred)
    with pytest.raises(SchemaMismatch):
        ens.predict(np.zeros((1, 3)))


def test_member_scores_recorded(domains):
    ens = train_meta_forests(domains, SMALL)
    for m in ens.members:
        assert m.meta_error > 0 and m.mmd_to_meta_test >= 0


def test_config_errors(domains):
    with pytest.raises(TooFewDomains):
        train_meta_forests(domains[:1], SMALL)
    with pytest.raises(PortionTooSmall):
        train_meta_forests(domains, MetaConfig(portion=0.001))
    with pytest.raises(ValueError):
        MetaConfig(portion=0.0)
