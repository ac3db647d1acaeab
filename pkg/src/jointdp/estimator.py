"""Scikit-learn style wrapper around joint predictor/interpreter training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import column_stats
from .interpret import (
    SensitivityReport,
    global_decision_paths,
    local_sensitivity,
    root_metric,
    top_k_metric_subset,
)
from .predictor import PredictorConfig, predict_label, predictor_forward
from .trainer import LossWeights, TrainingConfig, init_joint, merge_params, train_joint
from .tree import TreeConfig, extract_max_path, sdt_forward


class JointDefectClassifier(ClassifierMixin, BaseEstimator):
    """CNN defect predictor trained jointly with a soft decision tree interpreter.

    Inputs are expected already scaled to [0, 1]. ``predict``/``predict_proba``
    use the predictor; the ``interpreter_*`` methods use the tree.
    Defaults follow the published settings, whose learning rate (1e-6) is
    far too small to move the weights in a few dozen epochs; raise it for
    real use.
    """

    def __init__(
        self,
        filters: int = 16,
        kernel_width: int = 3,
        pool_width: int = 2,
        hidden_width: int = 32,
        depth: int = 4,
        penalty_strength: float = 10.0,
        penalty_decay: float = 0.25,
        alpha: float = 1.4,
        beta: float = 0.6,
        lam: float = 0.5,
        gamma: float = 0.8,
        temperature: float = 100.0,
        learning_rate: float = 1e-6,
        batch_size: int = 16,
        momentum: float = 0.9,
        max_epochs: int = 40,
        early_stop_patience: int = 10,
        ema_window: int = 1000,
        random_state: int = 0,
    ):
        self.filters = filters
        self.kernel_width = kernel_width
        self.pool_width = pool_width
        self.hidden_width = hidden_width
        self.depth = depth
        self.penalty_strength = penalty_strength
        self.penalty_decay = penalty_decay
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.gamma = gamma
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.momentum = momentum
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.ema_window = ema_window
        self.random_state = random_state

    # configuration objects -------------------------------------------------

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(self.filters, self.kernel_width, self.pool_width, self.hidden_width)

    def tree_config(self) -> TreeConfig:
        return TreeConfig(self.depth, self.penalty_strength, self.penalty_decay)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.lam, self.gamma, self.temperature)

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            momentum=self.momentum,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            ema_window=self.ema_window,
            seed=self.random_state,
        )

    # fitting ----------------------------------------------------------------

    def fit(self, X, y, eval_set=None, feature_names=None, reference_X=None):
        """Train on (X, y).

        ``eval_set=(X_val, y_val)`` drives early stopping; without it the
        training data doubles as the validation set. ``reference_X`` supplies
        the rows whose per-metric mean and spread set the sensitivity probe
        size (defaults to ``X``; pass the un-resampled training split when
        ``X`` has been oversampled).
        """
        X, y = validate_data(self, X, y, dtype=np.float64)
        y = np.asarray(y)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        y = y.astype(np.int64)
        if eval_set is None:
            X_val, y_val = X, y
        else:
            X_val = validate_data(self, eval_set[0], dtype=np.float64, reset=False)
            y_val = np.asarray(eval_set[1]).astype(np.int64)
        self.classes_ = np.array([0, 1])
        self.columns_ = self._column_names(feature_names)
        ref = X if reference_X is None else validate_data(self, reference_X, dtype=np.float64, reset=False)
        self.feature_stats_ = column_stats(ref)
        f, g, d, history = train_joint(
            X, y, X_val, y_val,
            predictor_config=self.predictor_config(),
            tree_config=self.tree_config(),
            weights=self.loss_weights(),
            config=self.training_config(),
        )
        self.predictor_params_, self.tree_params_, self.adapter_params_ = f, g, d
        self.history_ = history
        return self

    def _column_names(self, feature_names):
        if feature_names is not None:
            names = tuple(str(n) for n in feature_names)
        elif hasattr(self, "feature_names_in_"):
            names = tuple(str(n) for n in self.feature_names_in_)
        else:
            names = tuple(f"x{i}" for i in range(self.n_features_in_))
        if len(names) != self.n_features_in_ or len(set(names)) != len(names):
            raise ValueError(f"need {self.n_features_in_} distinct feature names, got {len(names)}")
        return names

    def _restore(self, params: dict, columns, feature_stats, history=None):
        """Install trained parameters without fitting (used when loading a model file)."""
        self.n_features_in_ = int(np.shape(params["g.inner.weight"])[1])
        self.classes_ = np.array([0, 1])
        self.columns_ = tuple(columns)
        self.feature_stats_ = feature_stats
        sub = lambda p: {k[2:]: np.asarray(v, dtype=np.float64) for k, v in params.items() if k.startswith(p)}
        self.predictor_params_, self.tree_params_, self.adapter_params_ = sub("f."), sub("g."), sub("d.")
        self.history_ = history
        return self

    @property
    def params_(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "predictor_params_")
        return merge_params(self.predictor_params_, self.tree_params_, self.adapter_params_)

    def initial_params(self, input_dim: int) -> dict[str, np.ndarray]:
        """Parameters as they stand before the first update, for this seed."""
        return init_joint(self.predictor_config(), self.tree_config(), input_dim, self.random_state)

    # predictor --------------------------------------------------------------

    def _check(self, X):
        check_is_fitted(self, "predictor_params_")
        return validate_data(self, X, dtype=np.float64, reset=False)

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        return predictor_forward(self.predictor_params_, X, self.pool_width).probabilities

    def predict(self, X) -> np.ndarray:
        return predict_label(self.predict_proba(X))

    def hidden_features(self, X) -> np.ndarray:
        return predictor_forward(self.predictor_params_, self._check(X), self.pool_width).features

    # interpreter ------------------------------------------------------------

    def interpreter_proba(self, X) -> np.ndarray:
        return sdt_forward(self.tree_params_, self._check(X)).distribution

    def interpreter_predict(self, X) -> np.ndarray:
        return predict_label(self.interpreter_proba(X))

    def explain(self, x, instance_id=0) -> SensitivityReport:
        check_is_fitted(self, "tree_params_")
        return local_sensitivity(self.tree_params_, self.feature_stats_, x, self.columns_, instance_id)

    def decision_path(self, x):
        check_is_fitted(self, "tree_params_")
        return extract_max_path(self.tree_params_, x, self.columns_)

    def decision_paths(self):
        check_is_fitted(self, "tree_params_")
        return global_decision_paths(self.tree_params_, self.columns_)

    @property
    def root_metric_(self) -> str:
        check_is_fitted(self, "tree_params_")
        return root_metric(self.tree_params_, self.columns_)

    def metric_subset(self, k: int, dataset_id: str = ""):
        check_is_fitted(self, "tree_params_")
        return top_k_metric_subset(self.tree_params_, k, self.columns_, self.penalty_decay, dataset_id)
