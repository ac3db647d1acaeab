"""Small reverse-mode differentiation core.

Every op takes an optional :class:`GradientTape` as its first argument. When a
tape is given, the op appends a record holding its inputs and a closure that
maps the output gradient to input gradients. Passing ``tape=None`` evaluates
the op without recording, which is what inference paths use.

All arrays are float64. Tensors are read-only once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "LayerSpec",
    "SGDMomentum",
    "GradientCheckReport",
    "add",
    "sub",
    "mul",
    "div",
    "add_scalar",
    "mul_scalar",
    "rsub_scalar",
    "add_bias",
    "matmul",
    "transpose",
    "tsum",
    "log",
    "sigmoid",
    "softmax",
    "square",
    "clip",
    "reshape",
    "columns",
    "take",
    "interleave",
    "conv1d",
    "maxpool1d",
    "attention",
    "dense",
    "apply_layer",
    "backprop",
    "gradient_check",
]


class Tensor:
    """Immutable float64 array, optionally named as a trainable parameter."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


Backward = Callable[[np.ndarray], tuple]


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Backward


class GradientTape:
    """Ordered log of ops executed during one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)


def _emit(tape, data, inputs, backward) -> Tensor:
    out = Tensor(data)
    if tape is not None:
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise and reductions


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(tape, a.data + b.data, (a, b), lambda g: (g, g))


def sub(tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(tape, a.data - b.data, (a, b), lambda g: (g, -g))


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return _emit(tape, x * y, (a, b), lambda g: (g * y, g * x))


def div(tape, a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    x, y = a.data, b.data
    return _emit(tape, x / y, (a, b), lambda g: (g / y, -g * x / (y * y)))


def add_scalar(tape, a: Tensor, c: float) -> Tensor:
    return _emit(tape, a.data + c, (a,), lambda g: (g,))


def mul_scalar(tape, a: Tensor, c: float) -> Tensor:
    return _emit(tape, a.data * c, (a,), lambda g: (g * c,))


def rsub_scalar(tape, c: float, a: Tensor) -> Tensor:
    """``c - a``."""
    return _emit(tape, c - a.data, (a,), lambda g: (-g,))


def add_bias(tape, x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis of ``x``."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ValueError(f"add_bias: cannot add bias {bias.shape} to {x.shape}")

    def backward(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return _emit(tape, x.data + bias.data, (x, bias), backward)


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return _emit(tape, x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def transpose(tape, a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got {a.shape}")
    return _emit(tape, a.data.T, (a,), lambda g: (g.T,))


def tsum(tape, a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over all entries, or over one axis."""
    x = a.data
    if axis is None:
        return _emit(tape, x.sum(), (a,), lambda g: (np.full_like(x, g),))
    axis = axis % x.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit(tape, x.sum(axis=axis), (a,), backward)


def log(tape, a: Tensor) -> Tensor:
    x = a.data
    return _emit(tape, np.log(x), (a,), lambda g: (g / x,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(tape, a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _emit(tape, s, (a,), lambda g: (g * s * (1.0 - s),))


def _softmax(x: np.ndarray, temperature: float) -> np.ndarray:
    z = x / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(tape, a: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``a / temperature``."""
    if not temperature > 0:
        raise ValueError(f"softmax: temperature must be positive, got {temperature}")
    s = _softmax(a.data, temperature)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner) / temperature,)

    return _emit(tape, s, (a,), backward)


def square(tape, a: Tensor) -> Tensor:
    x = a.data
    return _emit(tape, x * x, (a,), lambda g: (2.0 * g * x,))


def clip(tape, a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _emit(tape, np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def reshape(tape, a: Tensor, shape) -> Tensor:
    src = a.shape
    out = a.data.reshape(shape)
    return _emit(tape, out, (a,), lambda g: (g.reshape(src),))


def columns(tape, a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` along the last axis."""
    src = a.shape

    def backward(g):
        full = np.zeros(src)
        full[..., start:stop] = g
        return (full,)

    return _emit(tape, a.data[..., start:stop], (a,), backward)


def take(tape, a: Tensor, index: int) -> Tensor:
    """Select one entry along the last axis (drops that axis)."""
    src = a.shape

    def backward(g):
        full = np.zeros(src)
        full[..., index] = g
        return (full,)

    return _emit(tape, a.data[..., index], (a,), backward)


def interleave(tape, a: Tensor, b: Tensor) -> Tensor:
    """out[..., 2i] = a[..., i]; out[..., 2i+1] = b[..., i]."""
    _same_shape("interleave", a, b)
    out = np.stack([a.data, b.data], axis=-1).reshape(*a.shape[:-1], 2 * a.shape[-1])
    return _emit(tape, out, (a, b), lambda g: (g[..., 0::2], g[..., 1::2]))


# --------------------------------------------------------------------------
# layers (batch-first)


def conv1d(tape, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 convolution with zero same-padding.

    x: [B, C, L], weight: [F, C, K], bias: [F] -> [B, F, L].
    """
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv1d: input {x.shape} incompatible with kernel {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"conv1d: bias {bias.shape} does not match kernel {weight.shape}")
    k = weight.shape[2]
    left = (k - 1) // 2
    right = k - 1 - left
    length = x.shape[2]
    padded = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)  # [B,C,L,K]
    w = weight.data
    out = np.einsum("bclk,fck->bfl", windows, w) + bias.data[None, :, None]

    def backward(g):
        gw = np.einsum("bclk,bfl->fck", windows, g)
        gb = g.sum(axis=(0, 2))
        gpad = np.zeros_like(padded)
        for j in range(k):
            gpad[:, :, j : j + length] += np.einsum("bfl,fc->bcl", g, w[:, :, j])
        return gpad[:, :, left : left + length], gw, gb

    return _emit(tape, out, (x, weight, bias), backward)


def maxpool1d(tape, x: Tensor, width: int) -> Tensor:
    """Non-overlapping max pool (stride == width); trailing remainder dropped."""
    if width < 1:
        raise ValueError(f"maxpool1d: width must be >= 1, got {width}")
    if x.data.ndim != 3 or x.shape[2] < width:
        raise ValueError(f"maxpool1d: input {x.shape} too short for width {width}")
    b, c, length = x.shape
    n_out = length // width
    blocks = x.data[:, :, : n_out * width].reshape(b, c, n_out, width)
    arg = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(g):
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=3)
        full = np.zeros(x.shape)
        full[:, :, : n_out * width] = gblocks.reshape(b, c, n_out * width)
        return (full,)

    return _emit(tape, out, (x,), backward)


def attention(tape, x: Tensor, weight: Tensor) -> Tensor:
    """Single-head additive attention pooling over positions.

    x: [B, F, P], weight: [F]. Scores s_j = weight . x[:, :, j], a = softmax(s),
    output = sum_j a_j x[:, :, j] -> [B, F].
    """
    if x.data.ndim != 3 or weight.shape != (x.shape[1],):
        raise ValueError(f"attention: input {x.shape} incompatible with weight {weight.shape}")
    xs, w = x.data, weight.data
    scores = np.einsum("f,bfp->bp", w, xs)
    a = _softmax(scores, 1.0)
    out = np.einsum("bp,bfp->bf", a, xs)

    def backward(g):
        gx = a[:, None, :] * g[:, :, None]
        ga = np.einsum("bf,bfp->bp", g, xs)
        gs = a * (ga - (a * ga).sum(axis=1, keepdims=True))
        gw = np.einsum("bp,bfp->f", gs, xs)
        gx = gx + w[None, :, None] * gs[:, None, :]
        return gx, gw

    return _emit(tape, out, (x, weight), backward)


def dense(tape, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: [B, n] @ weight: [n, m] + bias: [m]."""
    return add_bias(tape, matmul(tape, x, weight), bias)


# --------------------------------------------------------------------------
# layer dispatch


_LAYER_KINDS = ("conv1d", "maxpool1d", "attention", "dense", "sigmoid", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One predictor layer.

    Parametrised kinds carry their tensors; sizes (filters, kernel width,
    output width) are read off the tensor shapes. ``width`` is the pool width
    and ``temperature`` applies to ``softmax`` only.
    """

    kind: str
    weight: Tensor | None = None
    bias: Tensor | None = None
    width: int = 2
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise ValueError("pool width must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.kind in ("conv1d", "dense") and (self.weight is None or self.bias is None):
            raise ValueError(f"{self.kind} layer needs weight and bias")
        if self.kind == "attention" and self.weight is None:
            raise ValueError("attention layer needs a weight vector")


def apply_layer(layer: LayerSpec, x: Tensor, tape: GradientTape | None = None) -> Tensor:
    """Run one layer on a single instance or a batch.

    conv1d/maxpool1d take [channels, length] (or [B, channels, length]),
    attention takes [filters, positions], dense takes a vector (or [B, n]).
    Shape errors name the layer and both shapes involved.
    """
    kind = layer.kind
    if kind in ("conv1d", "maxpool1d", "attention"):
        batched = x.data.ndim == 3
        if x.data.ndim not in (2, 3):
            raise ValueError(f"{kind}: expected [channels, length] input, got {x.shape}")
        xb = x if batched else reshape(tape, x, (1,) + x.shape)
        if kind == "conv1d":
            if xb.shape[1] != layer.weight.shape[1] or xb.shape[2] < 1:
                raise ValueError(f"conv1d: input {x.shape} does not match kernel {layer.weight.shape}")
            out = conv1d(tape, xb, layer.weight, layer.bias)
        elif kind == "maxpool1d":
            if xb.shape[2] < layer.width:
                raise ValueError(f"maxpool1d: input {x.shape} shorter than pool width {layer.width}")
            out = maxpool1d(tape, xb, layer.width)
        else:
            if layer.weight.shape != (xb.shape[1],):
                raise ValueError(f"attention: input {x.shape} does not match weight {layer.weight.shape}")
            out = attention(tape, xb, layer.weight)
        return out if batched else reshape(tape, out, out.shape[1:])
    if kind == "dense":
        batched = x.data.ndim == 2
        if x.data.ndim not in (1, 2) or x.shape[-1] != layer.weight.shape[0]:
            raise ValueError(f"dense: input {x.shape} does not match weight {layer.weight.shape}")
        xb = x if batched else reshape(tape, x, (1, x.shape[0]))
        out = dense(tape, xb, layer.weight, layer.bias)
        return out if batched else reshape(tape, out, (out.shape[1],))
    if kind == "sigmoid":
        return sigmoid(tape, x)
    return softmax(tape, x, layer.temperature)


# --------------------------------------------------------------------------
# backward pass


def backprop(
    tape: GradientTape,
    loss: Tensor,
    params: Mapping[str, Tensor] | None = None,
) -> dict[str, np.ndarray]:
    """Reverse pass from a scalar ``loss``.

    Returns a gradient for every tensor in ``params`` (zeros where the loss
    does not depend on it). Without ``params``, every named tensor that was an
    input to some recorded op is reported.
    """
    if loss.data.size != 1:
        raise ValueError(f"backprop: loss must be scalar, got shape {loss.shape}")
    if len(tape) == 0:
        raise ValueError("backprop: tape is empty")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
    if params is None:
        params = {}
        for rec in tape.records:
            for t in rec.inputs:
                if t.name is not None:
                    params[t.name] = t
    return {
        name: grads[id(t)].reshape(t.shape) if id(t) in grads else np.zeros(t.shape)
        for name, t in params.items()
    }


# --------------------------------------------------------------------------
# optimiser


@dataclass
class SGDMomentum:
    """Classical momentum: v <- m*v + g; p <- p - lr*v."""

    learning_rate: float
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def step(
        self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
    ) -> dict[str, np.ndarray]:
        if set(params) != set(grads):
            raise ValueError("gradients are not aligned with parameters")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        updated = {}
        for name, p in params.items():
            g = grads[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            updated[name] = p - self.learning_rate * v
        return updated


# --------------------------------------------------------------------------
# finite-difference check


@dataclass
class GradientCheckReport:
    max_relative_error: float
    per_parameter: dict[str, float]
    flagged: list[tuple[str, tuple[int, ...], float, float, float]]
    tolerance: float

    @property
    def passed(self) -> bool:
        return not self.flagged


def gradient_check(
    fn: Callable[[GradientTape | None, dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradientCheckReport:
    """Compare analytic gradients of ``fn`` with central differences.

    ``fn(tape, tensors)`` must build a scalar from the named tensors. The
    relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = GradientTape()
    tensors = {k: Tensor(v, name=k) for k, v in base.items()}
    loss = fn(tape, tensors)
    analytic = backprop(tape, loss, tensors) if len(tape) else {
        k: np.zeros(v.shape) for k, v in base.items()
    }

    def evaluate(name, idx, delta):
        shifted = dict(base)
        arr = base[name].copy()
        arr[idx] += delta
        shifted[name] = arr
        return float(fn(None, {k: Tensor(v, name=k) for k, v in shifted.items()}).data)

    flagged = []
    per_param = {}
    worst = 0.0
    for name, arr in base.items():
        worst_here = 0.0
        for idx in np.ndindex(arr.shape):
            numeric = (evaluate(name, idx, epsilon) - evaluate(name, idx, -epsilon)) / (2 * epsilon)
            a = float(analytic[name][idx])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst_here = max(worst_here, rel)
            if rel > tolerance:
                flagged.append((name, idx, a, numeric, rel))
        per_param[name] = worst_here
        worst = max(worst, worst_here)
    return GradientCheckReport(worst, per_param, flagged, tolerance)
