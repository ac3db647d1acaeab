"""End-to-end data preparation, scoring and ablation shared by the library and CLI."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from sklearn.base import clone

from .data import (
    ColumnStats,
    Dataset,
    SplitSpec,
    apply_minmax,
    column_stats,
    random_undersample,
    smote_oversample,
    stratified_split,
)
from .estimator import JointDefectClassifier
from .interpret import SCORES, AblationResult, ablation_rankings
from .metrics import ConfusionCounts, ScoreReport, confusion_counts, score_predictions


@dataclass(frozen=True)
class PreparedData:
    """Raw splits, their [0, 1]-scaled versions and the resampled training set."""

    raw_train: Dataset
    raw_test: Dataset
    raw_validation: Dataset
    train: Dataset  # scaled, before resampling
    fit_train: Dataset  # scaled and resampled; what the model is fitted on
    test: Dataset
    validation: Dataset
    normalizer: ColumnStats


def resample(train: Dataset, sampler: str, seed: int, k_neighbors: int = 5) -> Dataset:
    if sampler == "smote":
        return smote_oversample(train, k_neighbors, seed)
    if sampler == "rus":
        return random_undersample(train, seed)
    if sampler == "none":
        return train
    raise ValueError(f"unknown sampler {sampler!r}; choose smote, rus or none")


def prepare_data(dataset: Dataset, split: SplitSpec = SplitSpec(), sampler: str = "smote") -> PreparedData:
    """Split, scale with training-split min/max, then rebalance the training split only."""
    raw_train, raw_test, raw_val = stratified_split(dataset, split)
    stats = column_stats(raw_train.X)
    train, test, val = (apply_minmax(d, stats) for d in (raw_train, raw_test, raw_val))
    fit_train = resample(train, sampler, split.seed)
    return PreparedData(raw_train, raw_test, raw_val, train, fit_train, test, val, stats)


def fit_prepared(estimator: JointDefectClassifier, data: PreparedData) -> JointDefectClassifier:
    return estimator.fit(
        data.fit_train.X,
        data.fit_train.y,
        eval_set=(data.validation.X, data.validation.y),
        feature_names=data.train.columns,
        reference_X=data.train.X,
    )


@dataclass(frozen=True)
class Evaluation:
    scores: ScoreReport
    confusion: ConfusionCounts
    interpreter_confusion: ConfusionCounts


def evaluate_scaled(estimator: JointDefectClassifier, X, y) -> Evaluation:
    """Predictor scores plus interpreter agreement on already-scaled rows."""
    proba = estimator.predict_proba(X)
    f_labels = estimator.predict(X)
    g_labels = estimator.interpreter_predict(X)
    report = score_predictions(y, f_labels, proba[:, 1], g_labels)
    return Evaluation(report, confusion_counts(f_labels, y), confusion_counts(g_labels, y))


def _scores(report: ScoreReport) -> dict[str, float | None]:
    d = report.to_dict()
    return {s: d[s] for s in SCORES}


def _ablation_job(args):
    estimator, dataset, split, sampler, dropped = args
    data = prepare_data(dataset.drop_columns(dropped), split, sampler)
    est = fit_prepared(clone(estimator), data)
    return _scores(evaluate_scaled(est, data.test.X, data.test.y).scores)


@dataclass(frozen=True)
class AblationRun:
    base_scores: dict[str, float | None]
    results: list[AblationResult]


def run_ablation(
    estimator: JointDefectClassifier,
    dataset: Dataset,
    metrics: list[str],
    split: SplitSpec = SplitSpec(),
    sampler: str = "smote",
    jobs: int = 1,
) -> AblationRun:
    """Baseline run plus one retrain per removed metric, identical config and seed."""
    unknown = [m for m in metrics if m not in dataset.columns]
    if unknown:
        raise ValueError(f"unknown metrics: {', '.join(unknown)}")
    base = _ablation_job((estimator, dataset, split, sampler, []))
    jobs_args = [(estimator, dataset, split, sampler, [m]) for m in metrics]
    if jobs > 1 and len(metrics) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scored = dict(zip(metrics, pool.map(_ablation_job, jobs_args)))
    else:
        scored = {m: _ablation_job(a) for m, a in zip(metrics, jobs_args)}
    return AblationRun(base, ablation_rankings(base, scored.__getitem__, metrics))


def subset_curve(
    estimator: JointDefectClassifier,
    dataset: Dataset,
    ranked_metrics: list[str],
    split: SplitSpec = SplitSpec(),
    sampler: str = "smote",
    max_k: int = 6,
) -> list[dict]:
    """Retrain on the cumulative top-k metrics for k = 1..max_k and score each run."""
    rows = []
    for k in range(1, min(max_k, len(ranked_metrics)) + 1):
        names = list(ranked_metrics[:k])
        data = prepare_data(dataset.select_columns(names), split, sampler)
        est = clone(estimator)
        # very small subsets cannot fit the default kernel or pool window
        est.set_params(kernel_width=min(est.kernel_width, k), pool_width=min(est.pool_width, k))
        fit_prepared(est, data)
        rows.append({"k": k, "metrics": names, **_scores(evaluate_scaled(est, data.test.X, data.test.y).scores)})
    return rows


__all__ = [
    "PreparedData",
    "prepare_data",
    "resample",
    "fit_prepared",
    "Evaluation",
    "evaluate_scaled",
    "AblationRun",
    "run_ablation",
    "subset_curve",
]
