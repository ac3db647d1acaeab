"""CSV ingestion, min-max scaling, stratified 7:2:1 splits and class rebalancing."""

from __future__ import annotations

import csv
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

__all__ = [
    "Dataset",
    "SplitSpec",
    "ColumnStats",
    "DatasetError",
    "rng_for",
    "load_csv_dataset",
    "column_stats",
    "normalize_minmax",
    "apply_minmax",
    "stratified_split",
    "smote_oversample",
    "random_undersample",
    "smote_arrays",
    "undersample_arrays",
    "MinMaxNormalizer",
    "SMOTESampler",
    "RandomUnderSampler",
]


class DatasetError(ValueError):
    """Raised for malformed input files or datasets."""


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stage (``split``, ``sample``, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())]))


@dataclass(frozen=True)
class Dataset:
    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(len(X), -1)
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", tuple(self.columns))
        if X.shape[1] != len(self.columns):
            raise DatasetError(f"rows have {X.shape[1]} values but {len(self.columns)} columns are named")
        if len(y) != X.shape[0]:
            raise DatasetError(f"{len(y)} labels for {X.shape[0]} rows")
        if not np.isin(y, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def defect_rate(self) -> float:
        return float(self.y.mean()) if len(self) else 0.0

    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.y.sum())
        return len(self) - n1, n1

    def derive(self, X, y, step: str) -> "Dataset":
        return replace(self, X=X, y=y, provenance=self.provenance + (step,))

    def subset(self, index, step: str) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return self.derive(self.X[index], self.y[index], step)

    def drop_columns(self, names: Sequence[str]) -> "Dataset":
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise DatasetError(f"unknown columns: {', '.join(missing)}")
        keep = [i for i, c in enumerate(self.columns) if c not in set(names)]
        return replace(
            self,
            columns=tuple(self.columns[i] for i in keep),
            X=self.X[:, keep],
            provenance=self.provenance + (f"drop:{','.join(names)}",),
        )

    def select_columns(self, names: Sequence[str]) -> "Dataset":
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise DatasetError(f"unknown columns: {', '.join(missing)}")
        idx = [self.columns.index(n) for n in names]
        return replace(
            self,
            columns=tuple(names),
            X=self.X[:, idx],
            provenance=self.provenance + (f"select:{','.join(names)}",),
        )


_TRUE = {"1", "true", "yes", "y", "t", "buggy", "defective"}
_FALSE = {"0", "false", "no", "n", "f", "clean"}


def load_csv_dataset(
    path: str | Path,
    label_column: str = "defect",
    label_map: Mapping[str, int] | None = None,
) -> Dataset:
    """Read a header-first CSV with one binary label column.

    ``label_map`` maps label strings (case-insensitive) to 0/1. Without it,
    the usual spellings (0/1, true/false, yes/no) are accepted.
    """
    path = Path(path)
    if label_map is None:
        label_map = {**{k: 1 for k in _TRUE}, **{k: 0 for k in _FALSE}}
    else:
        label_map = {str(k).strip().lower(): int(v) for k, v in label_map.items()}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetError(f"{path}: label column {label_column!r} not found in header")
        li = header.index(label_column)
        columns = [h for i, h in enumerate(header) if i != li]
        if not columns:
            raise DatasetError(f"{path}: no metric columns besides {label_column!r}")
        rows, labels = [], []
        for r, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DatasetError(f"{path}: row {r} has {len(record)} fields, expected {len(header)}")
            raw = record[li].strip().lower()
            if raw not in label_map:
                try:
                    val = float(raw)
                except ValueError:
                    val = None
                if val in (0.0, 1.0):
                    labels.append(int(val))
                else:
                    raise DatasetError(f"{path}: row {r}, column {label_column!r}: bad label {record[li]!r}")
            else:
                labels.append(label_map[raw])
            values = []
            for i, cell in enumerate(record):
                if i == li:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"{path}: row {r}, column {header[i]!r}: non-numeric value {cell!r}"
                    ) from None
            rows.append(values)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return Dataset(tuple(columns), X, np.array(labels), (f"load:{path}",))


# --------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ColumnStats:
    """Column-wise min, max, mean and population (1/N) standard deviation."""

    minimum: np.ndarray
    maximum: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("minimum", "maximum", "mean", "std")}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("minimum", "maximum", "mean", "std")))


def column_stats(X) -> ColumnStats:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DatasetError("cannot compute statistics of an empty dataset")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    # clamp rounding so min <= mean <= max holds exactly
    mean = np.clip(mean, X.min(axis=0), X.max(axis=0))
    return ColumnStats(X.min(axis=0), X.max(axis=0), mean, std)


def _scale(X, stats: ColumnStats, clamp: bool) -> np.ndarray:
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (X - stats.minimum) / safe, 0.0)
    return np.clip(out, 0.0, 1.0) if clamp else out


def normalize_minmax(dataset: Dataset) -> tuple[Dataset, ColumnStats]:
    stats = column_stats(dataset.X)
    return dataset.derive(_scale(dataset.X, stats, clamp=False), dataset.y, "minmax"), stats


def apply_minmax(dataset: Dataset, stats: ColumnStats) -> Dataset:
    """Scale held-out rows with previously fitted stats, clamped to [0, 1]."""
    return dataset.derive(_scale(dataset.X, stats, clamp=True), dataset.y, "minmax:apply")


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Column-wise min-max scaler; constant columns map to 0.

    With ``clip=True`` rows outside the fitted range are clamped to [0, 1].
    """

    def __init__(self, clip: bool = True):
        self.clip = clip

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        self.stats_ = column_stats(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return _scale(X, self.stats_, clamp=self.clip)


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    test_fraction: float = 0.2
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if any(not f > 0 for f in fr):
            raise ValueError(f"split fractions must all be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.test_fraction, self.validation_fraction)


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratified_split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Per-class largest-remainder allocation into (train, test, validation).

    Rows keep their original relative order inside each part.
    """
    rng = rng_for(spec.seed, "split")
    parts: list[list[int]] = [[], [], []]
    for cls in (0, 1):
        idx = np.flatnonzero(dataset.y == cls)
        if len(idx) == 0:
            raise DatasetError(f"class {cls} has no instances; stratified split needs both")
        if len(idx) < 3:
            warnings.warn(f"class {cls} has only {len(idx)} instance(s); some parts get none", stacklevel=2)
        idx = rng.permutation(idx)
        start = 0
        for p, c in enumerate(_largest_remainder(len(idx), spec.fractions)):
            parts[p].extend(idx[start : start + c].tolist())
            start += c
    names = ("split:train", "split:test", "split:validation")
    return tuple(dataset.subset(sorted(p), f"{n}(seed={spec.seed})") for p, n in zip(parts, names))


# --------------------------------------------------------------------------
# rebalancing


def _minority(y) -> tuple[int, int]:
    n1 = int(np.sum(y))
    n0 = len(y) - n1
    return (1, 0) if n1 <= n0 else (0, 1)


def smote_arrays(X, y, k_neighbors: int = 5, rng: np.random.Generator | None = None):
    """SMOTE up to class parity; synthetic rows are appended after the originals."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    minority, majority = _minority(y)
    mino = X[y == minority]
    n_new = int(np.sum(y == majority)) - len(mino)
    if len(mino) < 2:
        raise DatasetError(f"SMOTE needs at least 2 minority instances, found {len(mino)}")
    if n_new == 0:
        return X.copy(), y.copy()
    k = min(k_neighbors, len(mino) - 1)
    d2 = ((mino[:, None, :] - mino[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    base = rng.integers(0, len(mino), size=n_new)
    pick = neighbours[base, rng.integers(0, k, size=n_new)]
    u = rng.random(n_new)[:, None]
    synth = mino[base] + u * (mino[pick] - mino[base])
    return np.vstack([X, synth]), np.concatenate([y, np.full(n_new, minority)])


def undersample_arrays(X, y, rng: np.random.Generator | None = None):
    """Drop majority rows at random (without replacement) down to minority size."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng(0)
    minority, majority = _minority(y)
    n_min = int(np.sum(y == minority))
    if n_min == 0:
        raise DatasetError("random undersampling needs both classes present")
    maj_idx = np.flatnonzero(y == majority)
    kept = rng.choice(maj_idx, size=n_min, replace=False)
    index = np.sort(np.concatenate([np.flatnonzero(y == minority), kept]))
    return X[index], y[index]


def smote_oversample(train: Dataset, k_neighbors: int = 5, seed: int = 0) -> Dataset:
    X, y = smote_arrays(train.X, train.y, k_neighbors, rng_for(seed, "sample"))
    return train.derive(X, y, f"smote(k={k_neighbors},seed={seed})")


def random_undersample(train: Dataset, seed: int = 0) -> Dataset:
    X, y = undersample_arrays(train.X, train.y, rng_for(seed, "sample"))
    return train.derive(X, y, f"rus(seed={seed})")


class SMOTESampler(BaseEstimator):
    """``fit_resample`` wrapper around :func:`smote_arrays`."""

    def __init__(self, k_neighbors: int = 5, random_state: int = 0):
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def fit_resample(self, X, y):
        return smote_arrays(X, y, self.k_neighbors, rng_for(self.random_state, "sample"))


class RandomUnderSampler(BaseEstimator):
    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit_resample(self, X, y):
        return undersample_arrays(X, y, rng_for(self.random_state, "sample"))
