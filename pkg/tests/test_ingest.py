import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glucodg.core import DomainDataset, FeatureSchema
from glucodg.errors import AllMissingColumn, EmptyStream, OutOfRange, SchemaMismatch, TooFewSamples
from glucodg.ingest import (
    RawStream,
    align_nearest,
    apply_normalization,
    build_aligned_dataset,
    fit_normalization,
    impute_means,
    interpolate_labels,
    invert_normalization,
    load_manifest,
    write_stream_csv,
)


def stream(kind, t, v):
    v = np.asarray(v, float)
    return RawStream(kind, np.asarray(t, float), v.reshape(len(t), -1) if v.size else np.empty((0, 1)))


def segment_oracle(t, g, q):
    """Scan every segment; evaluate the first one whose closed span holds q."""
    for i in range(len(t) - 1):
        if t[i] <= q <= t[i + 1]:
            w = (q - t[i]) / (t[i + 1] - t[i])
            return (1 - w) * g[i] + w * g[i + 1]
    raise AssertionError("query outside span")


# --- imputation ----------------------------------------------------------


def test_impute_mean_of_present_values():
    s = impute_means(stream("nir", [0, 1, 2], [1.0, np.nan, 3.0]))
    np.testing.assert_array_equal(s.values[:, 0], [1.0, 2.0, 3.0])


def test_impute_without_missing_is_identity():
    s = stream("nir", [0, 1], [[1.0, 5.0], [2.0, 6.0]])
    assert impute_means(s) is s


def test_impute_all_missing_column():
    with pytest.raises(AllMissingColumn):
        impute_means(stream("nir", [0, 1], [np.nan, np.nan]))


# --- alignment -----------------------------------------------------------


def test_align_keeps_nearest_records():
    ref = stream("nir", [0, 10], [0, 0])
    other = stream("mmwave", [1, 9, 20], [100, 900, 2000])
    out = align_nearest(ref, other)
    np.testing.assert_array_equal(out.values[:, 0], [100, 900])
    np.testing.assert_array_equal(out.timestamps, [0, 10])


def test_align_tie_goes_to_earlier_record():
    out = align_nearest(stream("nir", [5], [0]), stream("mmwave", [0, 10], [1, 2]))
    assert out.values[0, 0] == 1


def test_align_identity_pairing():
    out = align_nearest(stream("nir", [0], [0]), stream("mmwave", [0], [7]))
    assert out.values[0, 0] == 7


def test_align_empty():
    with pytest.raises(EmptyStream):
        align_nearest(stream("nir", [], []), stream("mmwave", [0], [1]))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.integers(0, 4000), min_size=1, max_size=20, unique=True),
    st.lists(st.integers(0, 4000), min_size=1, max_size=20, unique=True),
)
def test_align_matches_brute_force_and_is_idempotent(ref_t, other_t):
    # quarter-second grid keeps distances exact, so ties are real ties
    ref_t, other_t = sorted(t / 4 for t in ref_t), sorted(t / 4 for t in other_t)
    ref = stream("nir", ref_t, np.zeros(len(ref_t)))
    other = stream("mmwave", other_t, np.arange(len(other_t), dtype=float))
    out = align_nearest(ref, other)
    for j, t in enumerate(ref_t):
        d = [abs(o - t) for o in other_t]
        assert out.values[j, 0] == d.index(min(d))
    again = align_nearest(ref, out)
    np.testing.assert_array_equal(again.values, out.values)


def test_stream_requires_strictly_increasing_times():
    with pytest.raises(ValueError):
        stream("nir", [0, 0], [1, 2])


# --- interpolation -------------------------------------------------------


def test_interpolate_midpoint():
    g = stream("glucose", [0, 10], [100, 140])
    assert interpolate_labels(g, [5])[0] == 120


def test_interpolate_endpoint_exact():
    g = stream("glucose", [0, 10], [100, 140])
    np.testing.assert_array_equal(interpolate_labels(g, [0, 10]), [100, 140])


def test_interpolate_decreasing_segment_uses_signed_slope():
    g = stream("glucose", [0, 10], [140, 100])
    assert interpolate_labels(g, [5])[0] == 120


def test_interpolate_out_of_range():
    g = stream("glucose", [0, 10], [100, 140])
    with pytest.raises(OutOfRange):
        interpolate_labels(g, [11])


def test_interpolate_needs_two_records():
    with pytest.raises(EmptyStream):
        interpolate_labels(stream("glucose", [0], [100]), [0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_interpolate_matches_segment_oracle(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 12))
    t = np.cumsum(rng.uniform(0.5, 30.0, m))
    g = rng.uniform(40, 400, m)
    q = np.concatenate([t, rng.uniform(t[0], t[-1], 20)])
    got = interpolate_labels(stream("glucose", t, g), q)
    want = np.array([segment_oracle(t, g, x) for x in q])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(got[:m], g)


# --- normalization -------------------------------------------------------

SCHEMA2 = FeatureSchema.from_kinds(["a", "b"], ["mmwave_s21", "mmwave_s21"])


def test_fit_normalization_population_std():
    d = DomainDataset("S1", [[1.0, 5.0], [3.0, 5.0]], [100.0, 110.0], SCHEMA2)
    stats = fit_normalization([d])
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
    assert stats.dropped == ("b",)


def test_constant_column_dropped_on_apply():
    d = DomainDataset("S1", [[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]], [100.0, 110.0, 90.0], SCHEMA2)
    out = apply_normalization(fit_normalization([d]), d)
    assert out.schema.names == ("a",)
    np.testing.assert_array_equal(out.y, d.y)


def test_fit_normalization_too_few():
    with pytest.raises(TooFewSamples):
        fit_normalization([DomainDataset("S1", [[1.0, 2.0]], [100.0], SCHEMA2)])


def test_normalization_values_and_round_trip():
    rng = np.random.default_rng(3)
    ds = [DomainDataset(f"S{i}", rng.normal(5, 3, (20, 2)), rng.uniform(50, 300, 20), SCHEMA2) for i in range(3)]
    stats = fit_normalization(ds)
    z = np.vstack([apply_normalization(stats, d).X for d in ds])
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)
    probe = DomainDataset("P", [stats.mean, stats.mean + stats.std], [100.0, 100.0], SCHEMA2)
    np.testing.assert_allclose(apply_normalization(stats, probe).X, [[0, 0], [1, 1]], atol=1e-12)
    for d in ds:
        back = invert_normalization(stats, apply_normalization(stats, d))
        np.testing.assert_allclose(back.X, d.X, rtol=0, atol=1e-12)


def test_normalization_schema_mismatch():
    stats = fit_normalization([DomainDataset("S1", [[1.0, 2.0], [2.0, 3.0]], [100.0, 110.0], SCHEMA2)])
    other = FeatureSchema.from_kinds(["x", "y"], ["mmwave_s21", "mmwave_s21"])
    with pytest.raises(SchemaMismatch):
        apply_normalization(stats, DomainDataset("S1", [[1.0, 2.0]], [100.0], other))


# --- aligned dataset -----------------------------------------------------


def _streams(n_nir, rng):
    t_nir = np.arange(n_nir) * 60.0 + 30.0
    t_mm = np.sort(rng.uniform(0, 60.0 * n_nir + 60, 3 * n_nir + 5))
    t_mm = np.unique(t_mm)
    mm = RawStream("mmwave", t_mm, rng.normal(-40, 1, (len(t_mm), 21)))
    nir = RawStream("nir", t_nir, rng.normal(55, 4, (n_nir, 2)))
    t_g = np.linspace(0, 60.0 * n_nir + 60, max(n_nir // 4, 2))
    glu = RawStream("glucose", t_g, rng.uniform(60, 300, len(t_g)))
    return mm, nir, glu


def test_build_aligned_dataset_full_count():
    mm, nir, glu = _streams(509, np.random.default_rng(0))
    d = build_aligned_dataset(mm, nir, glu, "S1")
    assert len(d) == 509 and d.schema.n_features == 23
    assert d.schema.kinds.count("nir_transmittance") == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 60), st.integers(0, 1000))
def test_build_aligned_size_equals_nir_length(n_nir, seed):
    mm, nir, glu = _streams(n_nir, np.random.default_rng(seed))
    assert len(build_aligned_dataset(mm, nir, glu, "S1")) == n_nir


def test_build_single_record():
    nir = RawStream("nir", [5.0], [[50.0, 60.0]])
    mm = RawStream("mmwave", [4.0, 9.0], [[1.0], [2.0]])
    glu = RawStream("glucose", [0.0, 10.0], [100.0, 200.0])
    d = build_aligned_dataset(mm, nir, glu, "S1")
    np.testing.assert_array_equal(d.X, [[1.0, 50.0, 60.0]])
    assert d.y[0] == 150.0


def test_build_glucose_not_spanning():
    nir = RawStream("nir", [5.0, 20.0], [[50.0], [51.0]])
    mm = RawStream("mmwave", [4.0], [[1.0]])
    glu = RawStream("glucose", [0.0, 10.0], [100.0, 200.0])
    with pytest.raises(OutOfRange):
        build_aligned_dataset(mm, nir, glu, "S1")


def test_build_imputes_features_and_drops_missing_glucose():
    nir = RawStream("nir", [0.0, 1.0, 2.0], [[50.0], [np.nan], [70.0]])
    mm = RawStream("mmwave", [0.0, 1.0, 2.0], [[1.0], [2.0], [3.0]])
    glu = RawStream("glucose", [0.0, 1.0, 2.0], [100.0, np.nan, 120.0])
    d = build_aligned_dataset(mm, nir, glu, "S1")
    np.testing.assert_array_equal(d.X[:, 1], [50.0, 60.0, 70.0])
    np.testing.assert_array_equal(d.y, [100.0, 110.0, 120.0])


def test_load_manifest(tmp_path):
    mm, nir, glu = _streams(10, np.random.default_rng(1))
    entries = []
    for s in (mm, nir, glu):
        write_stream_csv(s, tmp_path / f"{s.kind}.csv")
        entries.append({"file": f"{s.kind}.csv", "kind": s.kind, "domain_id": "S1"})
    import json

    (tmp_path / "manifest.json").write_text(json.dumps({"streams": entries}))
    loaded = load_manifest(tmp_path / "manifest.json")
    np.testing.assert_array_equal(loaded["S1"]["mmwave"].values, mm.values)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")
