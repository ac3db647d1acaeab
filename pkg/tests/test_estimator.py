import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from jointdp import JointDefectClassifier, ModelBundle, SplitSpec, load_model, prepare_data, save_model
from jointdp.data import Dataset
from jointdp.persistence import MODEL_SCHEMA, ModelFormatError, check_columns, config_digest, read_json
from jointdp.pipeline import evaluate_scaled, fit_prepared, run_ablation, subset_curve

from conftest import imbalanced_dataset, separable_dataset


def _fast(**kw):
    return JointDefectClassifier(learning_rate=1e-2, max_epochs=kw.pop("max_epochs", 5), **kw)


@pytest.fixture(scope="module")
def fitted():
    ds = separable_dataset(0, n=80, d=6)
    X = (ds.X - ds.X.min(0)) / (ds.X.max(0) - ds.X.min(0))
    return _fast(random_state=1).fit(X, ds.y, feature_names=ds.columns), X, ds.y


def test_params_round_trip_and_clone():
    est = JointDefectClassifier(depth=3, alpha=2.0)
    assert est.get_params()["depth"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_bad_hyperparameters_surface_at_fit():
    with pytest.raises(ValueError):
        JointDefectClassifier(depth=0).fit(np.zeros((4, 3)), [0, 1, 0, 1])


def test_unfitted_model_refuses_to_predict():
    with pytest.raises(NotFittedError):
        JointDefectClassifier().predict(np.zeros((1, 3)))


def test_output_shapes(fitted):
    est, X, y = fitted
    assert est.predict_proba(X).shape == (len(X), 2)
    assert set(np.unique(est.predict(X))) <= {0, 1}
    assert est.interpreter_proba(X).shape == (len(X), 2)
    assert est.hidden_features(X).shape == (len(X), est.hidden_width)
    assert est.n_features_in_ == 6 and est.columns_ == tuple(f"m{i}" for i in range(6))


def test_width_mismatch_rejected(fitted):
    est, X, _ = fitted
    with pytest.raises(ValueError):
        est.predict(X[:, :5])


def test_non_binary_labels_rejected():
    with pytest.raises(ValueError):
        _fast().fit(np.zeros((3, 3)), [0, 1, 2])


def test_explanations(fitted):
    est, X, _ = fitted
    rep = est.explain(X[0], instance_id=0)
    assert sorted(rep.names) == sorted(est.columns_)
    assert len(est.decision_paths()) == 2**est.depth
    assert len(est.decision_path(X[0]).nodes) == est.depth
    assert est.root_metric_ in est.columns_
    assert len(est.metric_subset(3).metrics) == 3


def test_fit_is_deterministic():
    ds = separable_dataset(2, n=60, d=5)
    a = _fast(random_state=3).fit(ds.X, ds.y)
    b = _fast(random_state=3).fit(ds.X, ds.y)
    assert all(a.params_[k].tobytes() == b.params_[k].tobytes() for k in a.params_)


def test_zero_epochs_keeps_initial_params():
    ds = separable_dataset(2, n=30, d=5)
    est = _fast(max_epochs=0, random_state=4).fit(ds.X, ds.y)
    init = est.initial_params(5)
    assert all(np.array_equal(est.params_[k], init[k]) for k in init)


# ---------------------------------------------------------------- persistence


def test_save_load_round_trip(tmp_path, fitted):
    est, X, _ = fitted
    stats = type(est.feature_stats_)(*(np.zeros(6), np.ones(6), np.zeros(6), np.ones(6)))
    path = tmp_path / "m.json"
    save_model(path, ModelBundle(est, stats, seed=1, sampler="none"))
    doc = read_json(path)
    assert doc["schema_version"] == MODEL_SCHEMA and doc["seed"] == 1
    assert doc["config_digest"] == config_digest(doc["config"]) and len(doc["config_digest"]) == 16
    back = load_model(path)
    assert back.estimator.predict_proba(X).tobytes() == est.predict_proba(X).tobytes()
    assert back.estimator.interpreter_proba(X).tobytes() == est.interpreter_proba(X).tobytes()
    assert back.columns == est.columns_ and back.sampler == "none"
    save_model(tmp_path / "again.json", back)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_foreign_schema_rejected(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"schema_version": "other"}')
    with pytest.raises(ModelFormatError, match="schema_version"):
        load_model(p)
    p.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(p)


def test_column_check_lists_differences():
    with pytest.raises(ModelFormatError, match="missing columns: b; extra columns: z"):
        check_columns(["a", "b"], ["a", "z"])
    with pytest.raises(ModelFormatError, match="order"):
        check_columns(["a", "b"], ["b", "a"])
    check_columns(["a"], ["a"])


def test_config_digest_ignores_key_order():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})


# ---------------------------------------------------------------- pipeline


def test_prepare_data_scales_with_train_statistics_and_resamples_train_only():
    ds = imbalanced_dataset(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = prepare_data(ds, SplitSpec(seed=2), "smote")
    assert data.train.X.min() >= 0 and data.train.X.max() <= 1
    np.testing.assert_array_equal(data.normalizer.minimum, data.raw_train.X.min(0))
    c0, c1 = data.fit_train.class_counts()
    assert c0 == c1 == data.train.class_counts()[0]
    assert data.test.class_counts() == data.raw_test.class_counts()
    assert len(data.test) + len(data.train) + len(data.validation) == len(ds)


def test_unknown_sampler_rejected():
    with pytest.raises(ValueError, match="sampler"):
        prepare_data(separable_dataset(0, n=40), sampler="adasyn")


def test_evaluation_agrees_with_direct_scoring():
    ds = separable_dataset(4, n=100, d=5)
    data = prepare_data(ds, SplitSpec(seed=4), "none")
    est = fit_prepared(_fast(random_state=4), data)
    ev = evaluate_scaled(est, data.test.X, data.test.y)
    pred = est.predict(data.test.X)
    assert ev.scores.fi == np.mean(pred == est.interpreter_predict(data.test.X))
    assert ev.confusion.tp == int(np.sum((pred == 1) & (data.test.y == 1)))


def _ablation_data(seed, n=200):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = np.column_stack([rng.normal(size=n) + 2.5 * (2 * y - 1), rng.normal(size=n), np.full(n, 3.0)])
    return Dataset(("strong", "noise", "const"), X, y)


def test_ablation_shape_and_uninformative_columns():
    ds = _ablation_data(0)
    run = run_ablation(_fast(max_epochs=40, kernel_width=2, random_state=0), ds, list(ds.columns), SplitSpec(seed=0), "none")
    assert [r.metric for r in run.results] == ["strong", "noise", "const"]
    for s in ("f_measure", "auc", "mcc"):
        assert sorted(r.ranks[s] for r in run.results) == [1, 2, 3]
    by = {r.metric: r for r in run.results}
    assert by["strong"].ranks == {"f_measure": 1, "auc": 1, "mcc": 1}
    for s in ("f_measure", "auc", "mcc"):
        assert by["const"].degradation[s] <= by["strong"].degradation[s]
        assert by["const"].ranks[s] > 1


def test_ablation_rejects_unknown_metric():
    with pytest.raises(ValueError, match="unknown metrics: zz"):
        run_ablation(_fast(), _ablation_data(0), ["zz"])


def test_empty_ablation_is_baseline_only():
    run = run_ablation(_fast(max_epochs=2), _ablation_data(1), [], SplitSpec(seed=1), "none")
    assert run.results == [] and set(run.base_scores) >= {"f_measure", "auc", "mcc"}


def test_subset_curve_retrains_on_prefixes():
    rows = subset_curve(_fast(max_epochs=3), _ablation_data(2), ["strong", "noise", "const"], SplitSpec(seed=2), "none")
    assert [r["k"] for r in rows] == [1, 2, 3]
    assert rows[1]["metrics"] == ["strong", "noise"]
