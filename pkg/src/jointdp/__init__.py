"""Joint training of a CNN defect predictor and a soft-decision-tree interpreter."""

from .data import Dataset, DatasetError, MinMaxNormalizer, SplitSpec, load_csv_dataset, stratified_split
from .estimator import JointDefectClassifier
from .interpret import SensitivityReport, global_decision_paths, local_sensitivity, top_k_metric_subset
from .metrics import ScoreReport, classification_metrics, coincidence_degree, confusion_counts, score_predictions
from .persistence import ModelBundle, load_model, save_model
from .pipeline import prepare_data, run_ablation

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "MinMaxNormalizer",
    "SplitSpec",
    "load_csv_dataset",
    "stratified_split",
    "JointDefectClassifier",
    "SensitivityReport",
    "local_sensitivity",
    "global_decision_paths",
    "top_k_metric_subset",
    "ScoreReport",
    "classification_metrics",
    "coincidence_degree",
    "confusion_counts",
    "score_predictions",
    "ModelBundle",
    "load_model",
    "save_model",
    "prepare_data",
    "run_ablation",
]
