"""Four-term joint loss and the simultaneous training loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, SGDMomentum, Tensor
from .data import rng_for
from .metrics import classification_metrics, confusion_counts
from .predictor import PredictorConfig, build_predictor, init_predictor, predict_label, predictor_forward
from .tree import TreeConfig, build_tree, init_sdt, n_inner, penalty_graph

SAMPLERS = ("none", "smote", "rus")
# The adapter starts as the constant map to the sigmoid midpoint: a random
# start couples tree and predictor features into a collapsed state, and a
# zero bias makes the feature term blow up the tree bias at lr 1e-2.
ADAPTER_BIAS = 0.5


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.4
    beta: float = 0.6
    lam: float = 0.5
    gamma: float = 0.8
    temperature: float = 100.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"loss weight {k} must be positive, got {v}")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-6
    batch_size: int = 16
    momentum: float = 0.9
    max_epochs: int = 40
    early_stop_patience: int = 10
    ema_window: int = 1000
    seed: int = 0
    sampler: str = "none"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.early_stop_patience < 1 or self.ema_window < 1:
            raise ValueError("batch_size, early_stop_patience and ema_window must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")


@dataclass(frozen=True)
class LossBreakdown:
    l_pred_f: float
    l_pred_g: float
    l_of: float
    l_fef: float
    penalty: float
    total: float


class TrainingDiverged(FloatingPointError):
    """Raised when a loss turns non-finite; carries the history so far."""

    def __init__(self, message: str, history: "TrainingHistory | None" = None):
        super().__init__(message)
        self.history = history


# --------------------------------------------------------------------------
# parameters


def init_adapter(n_nodes: int, width: int) -> dict[str, np.ndarray]:
    return {"weight": np.zeros((n_nodes, width)), "bias": np.full(width, ADAPTER_BIAS)}


def init_joint(
    predictor_config: PredictorConfig, tree_config: TreeConfig, input_dim: int, seed: int
) -> dict[str, np.ndarray]:
    """All trainable arrays, keyed ``f.*`` (predictor), ``g.*`` (tree), ``d.*`` (adapter)."""
    f = init_predictor(predictor_config, input_dim, rng_for(seed, "init.predictor"))
    g = init_sdt(tree_config.depth, input_dim, rng_for(seed, "init.tree"))
    d = init_adapter(n_inner(tree_config.depth), predictor_config.hidden_width)
    params = {}
    for prefix, group in (("f", f), ("g", g), ("d", d)):
        params.update({f"{prefix}.{k}": v for k, v in group.items()})
    return params


def split_params(params: dict[str, np.ndarray]):
    """Return (predictor, tree, adapter) parameter dicts without prefixes."""
    out = ({}, {}, {})
    for k, v in params.items():
        prefix, name = k.split(".", 1)
        out["fgd".index(prefix)][name] = v
    return out


def merge_params(f, g, d) -> dict[str, np.ndarray]:
    params = {}
    for prefix, group in (("f", f), ("g", g), ("d", d)):
        params.update({f"{prefix}.{k}": v for k, v in group.items()})
    return params


# --------------------------------------------------------------------------
# loss


def loss_graph(
    tape,
    p: dict[str, Tensor],
    X: Tensor,
    y: Tensor,
    weights: LossWeights,
    tree_config: TreeConfig,
    pool_width: int,
    include_penalty: bool = True,
):
    """Build the joint objective; returns (total, component tensors)."""
    sub = lambda prefix: {k.split(".", 1)[1]: t for k, t in p.items() if k.startswith(prefix + ".")}
    f = build_predictor(tape, sub("f"), X, pool_width)
    g = build_tree(tape, sub("g"), X)
    d = sub("d")

    f_pos = ad.take(tape, f.probabilities, 1)
    g_pos = ad.take(tape, g.distribution, 1)
    l_pred_f = ad.tsum(tape, ad.square(tape, ad.sub(tape, f_pos, y)))
    l_pred_g = ad.tsum(tape, ad.square(tape, ad.sub(tape, g_pos, y)))

    # interpreter logits are the log of its mixture distribution
    q = ad.softmax(tape, ad.log(tape, g.distribution), weights.temperature)
    log_p = ad.log(tape, ad.softmax(tape, f.logits, weights.temperature))
    l_of = ad.mul_scalar(tape, ad.tsum(tape, ad.mul(tape, q, log_p)), -1.0)

    adapted = ad.dense(tape, g.inner_activations, d["weight"], d["bias"])
    l_fef = ad.tsum(tape, ad.square(tape, ad.sub(tape, adapted, f.features)))

    terms = [
        ad.mul_scalar(tape, l_pred_f, weights.alpha),
        ad.mul_scalar(tape, l_pred_g, weights.beta),
        ad.mul_scalar(tape, l_of, weights.lam),
        ad.mul_scalar(tape, l_fef, weights.gamma),
    ]
    if include_penalty:
        penalty = penalty_graph(tape, g, tree_config.penalty_strength, tree_config.penalty_decay)
        terms.append(penalty)
    else:
        penalty = Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(tape, total, t)
    return total, (l_pred_f, l_pred_g, l_of, l_fef, penalty)


def compute_losses(
    params: dict[str, np.ndarray],
    X,
    y,
    weights: LossWeights = LossWeights(),
    tree_config: TreeConfig = TreeConfig(),
    pool_width: int = 2,
    include_penalty: bool = True,
    tape: GradientTape | None = None,
) -> tuple[LossBreakdown, Tensor, dict[str, Tensor]]:
    """Evaluate the joint loss on one batch.

    Returns the breakdown, the total as a tensor, and the parameter tensors
    (so a caller holding ``tape`` can run :func:`backprop` against them).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("compute_losses needs a non-empty [B, n] batch")
    tensors = {k: Tensor(v, name=k) for k, v in params.items()}
    total, parts = loss_graph(
        tape, tensors, Tensor(X), Tensor(np.asarray(y, dtype=np.float64)), weights, tree_config, pool_width,
        include_penalty,
    )
    vals = [float(t.data) for t in parts]
    return LossBreakdown(*vals, total=float(total.data)), total, tensors


# --------------------------------------------------------------------------
# training loop


def ema_update(previous: float | None, value: float, window: int) -> float:
    """EMA with k = 2/(window+1); the first value passes through."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if previous is None:
        return value
    k = 2.0 / (window + 1)
    return k * value + (1.0 - k) * previous


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    ema_loss: float
    val_loss: float
    val_f_measure: float | None


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "ema_loss", "val_loss", "val_f_measure"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.ema_loss), repr(r.val_loss),
                        "" if r.val_f_measure is None else repr(r.val_f_measure)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"epochs": [asdict(r) for r in self.epochs], "stop_reason": self.stop_reason,
                "best_epoch": self.best_epoch}


def _val_f_measure(params, X, y, pool_width) -> float | None:
    f, _, _ = split_params(params)
    pred = predict_label(predictor_forward(f, X, pool_width).probabilities)
    return classification_metrics(confusion_counts(pred, y)).f_measure


def train_joint(
    X_train,
    y_train,
    X_val,
    y_val,
    *,
    predictor_config: PredictorConfig = PredictorConfig(),
    tree_config: TreeConfig = TreeConfig(),
    weights: LossWeights = LossWeights(),
    config: TrainingConfig = TrainingConfig(),
    initial_params: dict[str, np.ndarray] | None = None,
):
    """Train predictor, tree and adapter together with one momentum-SGD optimiser.

    Returns ``(predictor_params, tree_params, adapter_params, history)`` taken
    from the epoch with the lowest validation loss (tree penalty excluded).
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    params = initial_params or init_joint(predictor_config, tree_config, X_train.shape[1], config.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    history = TrainingHistory()
    if config.max_epochs == 0:
        history.stop_reason = "max_epochs"
        return (*split_params(params), history)

    pool = predictor_config.pool_width
    opt = SGDMomentum(config.learning_rate, config.momentum)
    shuffle_rng = rng_for(config.seed, "shuffle")
    best_params, best_loss, best_epoch, stale = params, math.inf, 0, 0
    ema = None
    n = len(X_train)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            tape = GradientTape()
            parts, total, tensors = compute_losses(
                params, X_train[idx], y_train[idx], weights, tree_config, pool, tape=tape
            )
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, batch {bi}", history)
            grads = ad.backprop(tape, total, tensors)
            try:
                params = opt.step(params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {bi}: {exc}", history) from exc
            batch_losses.append(parts.total)
            ema = ema_update(ema, parts.total, config.ema_window)

        val = compute_losses(params, X_val, y_val, weights, tree_config, pool, include_penalty=False)[0]
        history.epochs.append(
            EpochRecord(epoch, float(np.mean(batch_losses)), ema, val.total,
                        _val_f_measure(params, X_val, y_val.astype(np.int64), pool))
        )
        if not math.isfinite(val.total):
            history.stop_reason = "diverged"
            raise TrainingDiverged(f"validation loss is not finite at epoch {epoch}", history)
        if val.total < best_loss - 1e-6:
            best_params, best_loss, best_epoch, stale = params, val.total, epoch, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                history.stop_reason = "early_stopping"
                break
    else:
        history.stop_reason = "max_epochs"
    history.best_epoch = best_epoch
    return (*split_params(best_params), history)
