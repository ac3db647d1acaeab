"""Soft decision tree interpreter.

Inner nodes are stored breadth-first: node ``i`` has children ``2i+1`` (left)
and ``2i+2`` (right), and leaves are numbered left to right. A node's sigmoid
gate is the probability of taking the right branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MAX_DEPTH = 10
ALPHA_CLAMP = 1e-6


@dataclass(frozen=True)
class TreeConfig:
    depth: int = 4
    penalty_strength: float = 10.0
    penalty_decay: float = 0.25

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must lie in [1, {MAX_DEPTH}], got {self.depth}")
        if self.penalty_strength < 0:
            raise ValueError("penalty_strength must be non-negative")
        if not 0 < self.penalty_decay <= 1:
            raise ValueError("penalty_decay must lie in (0, 1]")


def n_inner(depth: int) -> int:
    return 2**depth - 1


def tree_depth(params: dict[str, np.ndarray]) -> int:
    return int(np.log2(params["leaf.logits"].shape[0]))


def node_depth(index: int) -> int:
    return int(np.floor(np.log2(index + 1)))


def init_sdt(depth: int, input_dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > MAX_DEPTH:
        raise ValueError(f"depth {depth} exceeds the limit of {MAX_DEPTH}")
    n = n_inner(depth)
    return {
        "inner.weight": rng.uniform(-0.1, 0.1, size=(n, input_dim)),
        "inner.bias": rng.uniform(-0.1, 0.1, size=n),
        "leaf.logits": rng.uniform(-0.1, 0.1, size=(n + 1, 2)),
    }


@dataclass
class TreeGraph:
    inner_activations: Tensor  # [B, nodes] pre-activations
    gates: list[Tensor]  # per level, [B, 2**level]
    arrivals: list[Tensor]  # per level, probability of reaching each node
    path_probs: Tensor  # [B, leaves]
    leaf_probs: Tensor  # [leaves, 2]
    distribution: Tensor  # [B, 2]


def build_tree(tape, p: dict[str, Tensor], X: Tensor) -> TreeGraph:
    depth = int(np.log2(p["leaf.logits"].shape[0]))
    pre = ad.add_bias(tape, ad.matmul(tape, X, ad.transpose(tape, p["inner.weight"])), p["inner.bias"])
    gate = ad.sigmoid(tape, pre)
    mu = Tensor(np.ones((X.shape[0], 1)))
    gates, arrivals = [], []
    for level in range(depth):
        lo = 2**level - 1
        g = ad.columns(tape, gate, lo, lo + 2**level)
        gates.append(g)
        arrivals.append(mu)
        left = ad.mul(tape, mu, ad.rsub_scalar(tape, 1.0, g))
        right = ad.mul(tape, mu, g)
        mu = ad.interleave(tape, left, right)
    leaf = ad.softmax(tape, p["leaf.logits"])
    dist = ad.matmul(tape, mu, leaf)
    return TreeGraph(pre, gates, arrivals, mu, leaf, dist)


def penalty_graph(tape, graph: TreeGraph, strength: float, decay: float) -> Tensor:
    """Balance regulariser: cross-entropy of each node's routed split to 0.5."""
    total = Tensor(0.0)
    for level, (g, mu) in enumerate(zip(graph.gates, graph.arrivals)):
        num = ad.tsum(tape, ad.mul(tape, mu, g), axis=0)
        den = ad.tsum(tape, mu, axis=0)
        alpha = ad.clip(tape, ad.div(tape, num, den), ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
        cost = ad.add(tape, ad.log(tape, alpha), ad.log(tape, ad.rsub_scalar(tape, 1.0, alpha)))
        level_cost = ad.mul_scalar(tape, ad.tsum(tape, cost), -0.5 * strength * decay**level)
        total = ad.add(tape, total, level_cost)
    return total


@dataclass(frozen=True)
class TreeForward:
    gate_probs: np.ndarray
    path_probs: np.ndarray
    distribution: np.ndarray
    inner_activations: np.ndarray

    @property
    def output(self):
        """Soft-mixture probability of the defective class (g(x))."""
        return self.distribution[..., 1]


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    n = params["inner.weight"].shape[1]
    if X.ndim != 2 or X.shape[1] != n:
        raise ValueError(f"tree expects {n} metrics, got input of shape {x.shape}")
    return X, single


def sdt_forward(params: dict[str, np.ndarray], x) -> TreeForward:
    X, single = _as_batch(params, x)
    g = build_tree(None, {k: Tensor(v) for k, v in params.items()}, Tensor(X))
    gate = np.concatenate([t.data for t in g.gates], axis=1)
    out = TreeForward(gate, g.path_probs.data, g.distribution.data, g.inner_activations.data)
    if single:
        return TreeForward(*(a[0] for a in (out.gate_probs, out.path_probs, out.distribution, out.inner_activations)))
    return out


def interpreter_output(params: dict[str, np.ndarray], x) -> np.ndarray | float:
    """g(x): probability of class 1 under the soft mixture."""
    out = sdt_forward(params, x).output
    return float(out) if np.ndim(out) == 0 else out


def sdt_penalty(params: dict[str, np.ndarray], batch, strength: float = 10.0, decay: float = 0.25) -> float:
    X, _ = _as_batch(params, batch)
    if X.shape[0] == 0:
        raise ValueError("penalty needs a non-empty batch")
    g = build_tree(None, {k: Tensor(v) for k, v in params.items()}, Tensor(X))
    return float(penalty_graph(None, g, strength, decay).data)


def leaf_classes(params: dict[str, np.ndarray]) -> np.ndarray:
    """Arg-max class of each leaf's softmax; ties go to class 0."""
    phi = params["leaf.logits"]
    return (phi[:, 1] > phi[:, 0]).astype(np.int64)


def node_labels(params: dict[str, np.ndarray], column_names) -> list[str]:
    """Metric name with the largest |weight| at each inner node."""
    idx = np.abs(params["inner.weight"]).argmax(axis=1)
    return [column_names[i] for i in idx]


@dataclass(frozen=True)
class DecisionPath:
    nodes: tuple[str, ...]
    directions: tuple[str, ...]  # "left" / "right" per node
    leaf_class: int
    node_indices: tuple[int, ...] = ()
    leaf_index: int = -1

    def __len__(self) -> int:
        return len(self.nodes) + 1

    def __str__(self) -> str:
        return " -> ".join(list(self.nodes) + [str(self.leaf_class)])

    def as_rule(self) -> str:
        parts = [f"{n} goes {d}" for n, d in zip(self.nodes, self.directions)]
        return "IF " + " AND ".join(parts) + f" THEN {self.leaf_class}"

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "directions": list(self.directions),
            "leaf_class": self.leaf_class,
            "node_indices": list(self.node_indices),
            "leaf_index": self.leaf_index,
        }


def path_to_leaf(params: dict[str, np.ndarray], leaf: int, column_names) -> DecisionPath:
    depth = tree_depth(params)
    labels = node_labels(params, column_names)
    node, nodes, dirs, idx = 0, [], [], []
    for level in reversed(range(depth)):
        right = (leaf >> level) & 1
        nodes.append(labels[node])
        dirs.append("right" if right else "left")
        idx.append(node)
        node = 2 * node + 1 + right
    return DecisionPath(tuple(nodes), tuple(dirs), int(leaf_classes(params)[leaf]), tuple(idx), leaf)


def extract_max_path(params: dict[str, np.ndarray], x, column_names) -> DecisionPath:
    """Greedy descent: go right whenever the gate probability is >= 0.5."""
    gates = sdt_forward(params, np.asarray(x, dtype=np.float64)).gate_probs
    if gates.ndim != 1:
        raise ValueError("extract_max_path takes a single instance")
    depth = tree_depth(params)
    node, leaf = 0, 0
    for _ in range(depth):
        right = int(gates[node] >= 0.5)
        leaf = 2 * leaf + right
        node = 2 * node + 1 + right
    return path_to_leaf(params, leaf, column_names)
