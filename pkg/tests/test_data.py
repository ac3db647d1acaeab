import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointdp.data import (
    Dataset,
    DatasetError,
    MinMaxNormalizer,
    RandomUnderSampler,
    SMOTESampler,
    SplitSpec,
    apply_minmax,
    column_stats,
    load_csv_dataset,
    normalize_minmax,
    random_undersample,
    rng_for,
    smote_oversample,
    stratified_split,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _ds(X, y, cols=None):
    X = np.asarray(X, dtype=float)
    return Dataset(cols or tuple(f"c{i}" for i in range(X.shape[1])), X, y)


# ---------------------------------------------------------------- loading


def test_load_preserves_rows_and_records_provenance(tmp_path):
    p = _write(tmp_path, "LOC,CC,defect\n10,2,0\n20,5,1\n15,3,0\n")
    ds = load_csv_dataset(p)
    assert ds.columns == ("LOC", "CC")
    assert ds.X.tolist() == [[10, 2], [20, 5], [15, 3]]
    assert ds.y.tolist() == [0, 1, 0]
    assert str(p) in ds.provenance[0]


def test_label_column_may_sit_anywhere(tmp_path):
    ds = load_csv_dataset(_write(tmp_path, "bug,a,b\n1,0.5,2\n0,1.5,3\n"), "bug")
    assert ds.columns == ("a", "b") and ds.y.tolist() == [1, 0]


def test_defect_rate_of_highly_skewed_file(tmp_path):
    # 5589 rows with 23 defective ones: rate 0.41%
    rows = ["m1,m2,defect"] + [f"{i},{i % 7},{int(i < 23)}" for i in range(5589)]
    ds = load_csv_dataset(_write(tmp_path, "\n".join(rows) + "\n"))
    assert len(ds) == 5589 and ds.class_counts() == (5566, 23)
    assert round(100 * ds.defect_rate, 2) == 0.41


def test_label_only_file_rejected(tmp_path):
    with pytest.raises(DatasetError, match="no metric columns"):
        load_csv_dataset(_write(tmp_path, "defect\n0\n1\n"))


def test_true_false_labels(tmp_path):
    ds = load_csv_dataset(_write(tmp_path, "a,defect\n1,true\n2,false\n3,TRUE\n"))
    assert ds.y.tolist() == [1, 0, 1]


def test_custom_label_mapping(tmp_path):
    ds = load_csv_dataset(_write(tmp_path, "a,defect\n1,buggy\n2,ok\n"), label_map={"buggy": 1, "ok": 0})
    assert ds.y.tolist() == [1, 0]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("a,b\n1,2\n", "label column 'defect' not found"),
        ("a,defect\n1,0\nx,1\n", "row 3, column 'a'"),
        ("a,b,defect\n1,2,0\n1,1\n", "row 3 has 2 fields"),
        ("a,defect\n1,2\n", "row 2, column 'defect'"),
        ("", "empty"),
    ],
)
def test_malformed_files_report_coordinates(tmp_path, text, fragment):
    with pytest.raises(DatasetError, match=fragment):
        load_csv_dataset(_write(tmp_path, text))


def test_dataset_invariants_enforced():
    with pytest.raises(DatasetError):
        Dataset(("a",), np.zeros((2, 2)), [0, 1])
    with pytest.raises(DatasetError):
        Dataset(("a",), np.zeros((2, 1)), [0])
    with pytest.raises(DatasetError):
        Dataset(("a",), np.zeros((2, 1)), [0, 2])


def test_dataset_is_immutable():
    ds = _ds([[1.0], [2.0]], [0, 1])
    with pytest.raises(ValueError):
        ds.X[0, 0] = 3.0


def test_drop_and_select_columns():
    ds = _ds(np.arange(6).reshape(2, 3), [0, 1], ("a", "b", "c"))
    assert ds.drop_columns(["b"]).X.tolist() == [[0, 2], [3, 5]]
    assert ds.select_columns(["c", "a"]).columns == ("c", "a")
    with pytest.raises(DatasetError, match="zz"):
        ds.drop_columns(["zz"])


# ---------------------------------------------------------------- scaling and statistics


def test_minmax_endpoints_and_midpoint():
    out, _ = normalize_minmax(_ds([[2.0], [4.0], [6.0]], [0, 1, 0]))
    assert out.X[:, 0].tolist() == [0.0, 0.5, 1.0]


def test_constant_column_maps_to_zero():
    out, _ = normalize_minmax(_ds([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]], [0, 1, 0]))
    assert out.X[:, 0].tolist() == [0.0, 0.0, 0.0]


def test_population_std():
    stats = column_stats([[1.0], [2.0], [3.0]])
    assert stats.mean[0] == 2.0
    assert stats.std[0] == pytest.approx(np.sqrt(2 / 3), abs=1e-12)
    assert stats.std[0] == pytest.approx(0.8165, abs=1e-4)


def test_single_row_statistics():
    stats = column_stats([[4.5, -1.0]])
    assert stats.std.tolist() == [0.0, 0.0] and stats.mean.tolist() == [4.5, -1.0]


def test_stats_round_trip():
    stats = column_stats(np.random.default_rng(0).normal(size=(5, 3)))
    back = type(stats).from_dict(stats.to_dict())
    for k in ("minimum", "maximum", "mean", "std"):
        assert np.array_equal(getattr(back, k), getattr(stats, k))


def test_held_out_rows_are_clamped():
    _, stats = normalize_minmax(_ds([[0.0], [10.0]], [0, 1]))
    held = apply_minmax(_ds([[-5.0], [5.0], [20.0]], [0, 1, 0]), stats)
    assert held.X[:, 0].tolist() == [0.0, 0.5, 1.0]


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)), elements=finite))
def test_minmax_output_in_unit_interval(X):
    out, stats = normalize_minmax(_ds(X, np.zeros(len(X), dtype=int)))
    assert np.all(out.X >= 0.0) and np.all(out.X <= 1.0)
    assert np.all(stats.minimum <= stats.mean) and np.all(stats.mean <= stats.maximum)
    assert np.all(stats.std >= 0)


def test_sklearn_normalizer_matches_function():
    X = np.random.default_rng(1).normal(size=(20, 4))
    ref, _ = normalize_minmax(_ds(X, np.zeros(20, dtype=int)))
    np.testing.assert_array_equal(MinMaxNormalizer().fit_transform(X), ref.X)
    with pytest.raises(ValueError):
        MinMaxNormalizer().fit(X).transform(X[:, :3])


# ---------------------------------------------------------------- splitting


def test_largest_remainder_sizes():
    y = np.array([1] * 20 + [0] * 80)
    ds = _ds(np.arange(100.0)[:, None], y)
    train, test, val = stratified_split(ds, SplitSpec(seed=3))
    assert (len(train), len(test), len(val)) == (70, 20, 10)
    assert (train.y.sum(), test.y.sum(), val.y.sum()) == (14, 4, 2)


def test_split_is_deterministic_and_seed_dependent():
    ds = _ds(np.arange(50.0)[:, None], [0, 1] * 25)
    a = stratified_split(ds, SplitSpec(seed=5))
    b = stratified_split(ds, SplitSpec(seed=5))
    c = stratified_split(ds, SplitSpec(seed=6))
    assert all(np.array_equal(x.X, y.X) for x, y in zip(a, b))
    assert not np.array_equal(a[0].X, c[0].X)


@pytest.mark.parametrize("fr", [(1.0, 0.0, 0.0), (0.5, 0.5, 0.1), (0.7, -0.1, 0.4)])
def test_bad_fractions_rejected(fr):
    with pytest.raises(ValueError):
        SplitSpec(*fr)


def test_tiny_class_warns_but_splits():
    ds = _ds(np.arange(12.0)[:, None], [1, 1] + [0] * 10)
    with pytest.warns(UserWarning, match="class 1"):
        parts = stratified_split(ds, SplitSpec())
    assert sum(len(p) for p in parts) == 12


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 60), st.integers(3, 60), st.integers(0, 10_000))
def test_split_partitions_input(n0, n1, seed):
    y = np.array([0] * n0 + [1] * n1)
    ds = _ds(np.arange(n0 + n1, dtype=float)[:, None], y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = stratified_split(ds, SplitSpec(seed=seed))
    ids = np.concatenate([p.X[:, 0] for p in parts])
    assert sorted(ids.tolist()) == list(range(n0 + n1))


# ---------------------------------------------------------------- rebalancing


def test_smote_points_lie_on_segment():
    X = np.array([[0.0, 0.0], [1.0, 1.0]] + [[5.0, 5.0]] * 6)
    y = np.array([1, 1] + [0] * 6)
    out = smote_oversample(_ds(X, y), k_neighbors=1, seed=0)
    synth = out.X[len(X):]
    assert len(synth) == 4
    assert np.allclose(synth[:, 0], synth[:, 1])
    assert np.all((synth >= 0) & (synth <= 1))
    assert out.X[: len(X)].tolist() == X.tolist()


def test_smote_parity_and_determinism():
    rng = np.random.default_rng(0)
    ds = _ds(rng.normal(size=(12, 3)), [1, 1] + [0] * 10)
    a, b = smote_oversample(ds, 5, seed=9), smote_oversample(ds, 5, seed=9)
    assert a.class_counts() == (10, 10)
    assert np.array_equal(a.X, b.X)


def test_smote_needs_two_minority_rows():
    with pytest.raises(DatasetError, match="at least 2"):
        smote_oversample(_ds(np.zeros((4, 1)), [1, 0, 0, 0]), seed=0)


def test_rus_parity_determinism_and_noop():
    ds = _ds(np.arange(12.0)[:, None], [1, 1] + [0] * 10)
    a, b = random_undersample(ds, seed=2), random_undersample(ds, seed=2)
    assert a.class_counts() == (2, 2) and np.array_equal(a.X, b.X)
    balanced = _ds(np.arange(6.0)[:, None], [0, 1, 0, 1, 0, 1])
    assert sorted(random_undersample(balanced, 0).X[:, 0]) == list(range(6))


def test_sampler_estimators_match_functions():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(20, 2)), np.array([1] * 4 + [0] * 16)
    Xs, ys = SMOTESampler(k_neighbors=3, random_state=1).fit_resample(X, y)
    assert np.array_equal(Xs, smote_oversample(_ds(X, y), 3, seed=1).X)
    Xr, yr = RandomUnderSampler(random_state=1).fit_resample(X, y)
    assert np.bincount(yr).tolist() == [4, 4]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 15), st.integers(16, 60), st.integers(0, 10_000))
def test_smote_synthetic_rows_stay_in_minority_box(n_min, n_maj, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_min + n_maj, 3))
    y = np.array([1] * n_min + [0] * n_maj)
    out = smote_oversample(_ds(X, y), 5, seed)
    mino = X[:n_min]
    synth = out.X[len(X):]
    assert out.class_counts() == (n_maj, n_maj)
    assert np.all(synth >= mino.min(0) - 1e-12) and np.all(synth <= mino.max(0) + 1e-12)


def test_named_streams_are_independent():
    a = rng_for(1, "split").random(3)
    b = rng_for(1, "sample").random(3)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, rng_for(1, "split").random(3))
