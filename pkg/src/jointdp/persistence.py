"""Model files and report writers with stable, byte-reproducible output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .data import ColumnStats, Dataset, apply_minmax
from .estimator import JointDefectClassifier
from .tree import node_labels

MODEL_SCHEMA = "jointdp-model-v1"
REPORT_SCHEMA = "jointdp-report-v1"


class ModelFormatError(ValueError):
    pass


def config_digest(config: Mapping[str, Any]) -> str:
    """Short SHA-256 of the canonical JSON form of a configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# model files


@dataclass
class ModelBundle:
    """A fitted classifier plus the scaling it expects its raw inputs to go through."""

    estimator: JointDefectClassifier
    normalizer: ColumnStats
    label_column: str = "defect"
    seed: int = 0
    sampler: str = "smote"

    @property
    def columns(self) -> tuple[str, ...]:
        return self.estimator.columns_

    @property
    def config(self) -> dict:
        return {
            "estimator": self.estimator.get_params(),
            "label_column": self.label_column,
            "sampler": self.sampler,
            "columns": list(self.columns),
        }

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    def scale(self, dataset: Dataset) -> np.ndarray:
        check_columns(self.columns, dataset.columns)
        return apply_minmax(dataset, self.normalizer).X


def check_columns(expected: Sequence[str], found: Sequence[str]) -> None:
    if tuple(expected) == tuple(found):
        return
    missing = [c for c in expected if c not in found]
    extra = [c for c in found if c not in expected]
    parts = []
    if missing:
        parts.append("missing columns: " + ", ".join(missing))
    if extra:
        parts.append("extra columns: " + ", ".join(extra))
    if not parts:
        parts.append("columns are in a different order than the model expects")
    raise ModelFormatError("; ".join(parts))


def model_document(bundle: ModelBundle) -> dict:
    est = bundle.estimator
    return {
        "schema_version": MODEL_SCHEMA,
        "config": bundle.config,
        "config_digest": bundle.digest,
        "seed": bundle.seed,
        "input_dim": int(est.n_features_in_),
        "columns": list(est.columns_),
        "normalizer": bundle.normalizer.to_dict(),
        "feature_stats": est.feature_stats_.to_dict(),
        "node_labels": node_labels(est.tree_params_, est.columns_),
        "params": {k: v.tolist() for k, v in sorted(est.params_.items())},
    }


def save_model(path: str | Path, bundle: ModelBundle) -> None:
    write_json(path, model_document(bundle))


def load_model(path: str | Path) -> ModelBundle:
    try:
        doc = read_json(path)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("schema_version") != MODEL_SCHEMA:
        raise ModelFormatError(
            f"{path}: schema_version {doc.get('schema_version')!r}, expected {MODEL_SCHEMA!r}"
        )
    cfg = doc["config"]
    est = JointDefectClassifier(**cfg["estimator"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in doc["params"].items()}
    est._restore(params, doc["columns"], ColumnStats.from_dict(doc["feature_stats"]))
    if est.n_features_in_ != doc["input_dim"]:
        raise ModelFormatError(f"{path}: parameters disagree with input_dim {doc['input_dim']}")
    return ModelBundle(est, ColumnStats.from_dict(doc["normalizer"]), cfg["label_column"], doc["seed"], cfg["sampler"])


# --------------------------------------------------------------------------
# CSV helpers


def csv_text(header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def write_csv(path: str | Path, header, rows, comment: str | None = None) -> None:
    Path(path).write_text(csv_text(header, rows, comment))


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_dataset(path: str | Path, dataset: Dataset, label_column: str = "defect") -> None:
    rows = (list(map(float, x)) + [int(y)] for x, y in zip(dataset.X, dataset.y))
    write_csv(path, list(dataset.columns) + [label_column], rows)
