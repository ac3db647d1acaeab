"""DP-CNN defect predictor: conv -> max-pool -> attention -> dense -> softmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PARAM_NAMES = (
    "conv.weight",
    "conv.bias",
    "attention.weight",
    "hidden.weight",
    "hidden.bias",
    "output.weight",
    "output.bias",
)


@dataclass(frozen=True)
class PredictorConfig:
    filters: int = 16
    kernel_width: int = 3
    pool_width: int = 2
    hidden_width: int = 32
    classes: int = 2

    def __post_init__(self):
        for name in ("filters", "kernel_width", "pool_width", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.classes != 2:
            raise ValueError("only binary prediction is supported")


@dataclass(frozen=True)
class PredictorOutput:
    """Batched outputs; ``features`` is the penultimate (hidden) layer."""

    features: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray


def _glorot(rng, shape, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_predictor(config: PredictorConfig, input_dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if input_dim < config.kernel_width:
        raise ValueError(f"input_dim {input_dim} is smaller than kernel_width {config.kernel_width}")
    if input_dim < config.pool_width:
        raise ValueError(f"input_dim {input_dim} is smaller than pool_width {config.pool_width}")
    f, k, h = config.filters, config.kernel_width, config.hidden_width
    return {
        "conv.weight": _glorot(rng, (f, 1, k), k, f * k),
        "conv.bias": np.zeros(f),
        "attention.weight": _glorot(rng, (f,), f, 1),
        "hidden.weight": _glorot(rng, (f, h), f, h),
        "hidden.bias": np.zeros(h),
        "output.weight": _glorot(rng, (h, 2), h, 2),
        "output.bias": np.zeros(2),
    }


@dataclass
class PredictorGraph:
    features: Tensor
    logits: Tensor
    probabilities: Tensor


def build_predictor(tape, p: dict[str, Tensor], X: Tensor, pool_width: int) -> PredictorGraph:
    """Record the forward pass for a batch ``X`` of shape [B, n]."""
    b, n = X.shape
    x = ad.reshape(tape, X, (b, 1, n))
    h = ad.conv1d(tape, x, p["conv.weight"], p["conv.bias"])
    h = ad.maxpool1d(tape, h, pool_width)
    h = ad.attention(tape, h, p["attention.weight"])
    hidden = ad.sigmoid(tape, ad.dense(tape, h, p["hidden.weight"], p["hidden.bias"]))
    logits = ad.dense(tape, hidden, p["output.weight"], p["output.bias"])
    return PredictorGraph(hidden, logits, ad.softmax(tape, logits))


def predictor_forward(
    params: dict[str, np.ndarray], x, pool_width: int = 2, input_dim: int | None = None
) -> PredictorOutput:
    """Forward pass for one metric vector or a batch of them.

    The convolution is length-agnostic, so pass ``input_dim`` to reject inputs
    whose width differs from the training data.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    expected = params["conv.weight"].shape
    if X.ndim != 2:
        raise ValueError(f"expected a vector or [B, n] batch, got shape {x.shape}")
    if input_dim is not None and X.shape[1] != input_dim:
        raise ValueError(f"input has {X.shape[1]} metrics, model expects {input_dim}")
    if X.shape[1] < expected[2] or X.shape[1] < pool_width:
        raise ValueError(f"input with {X.shape[1]} metrics is too short for this predictor")
    g = build_predictor(None, {k: Tensor(v) for k, v in params.items()}, Tensor(X), pool_width)
    out = PredictorOutput(g.features.data, g.logits.data, g.probabilities.data)
    if single:
        return PredictorOutput(out.features[0], out.logits[0], out.probabilities[0])
    return out


def predict_label(probabilities) -> np.ndarray | int:
    """Arg-max class; an exact tie goes to class 0."""
    p = np.asarray(probabilities, dtype=np.float64)
    labels = (p[..., 1] > p[..., 0]).astype(np.int64)
    return int(labels) if labels.ndim == 0 else labels
