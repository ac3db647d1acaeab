"""Local sensitivity ranking, global decision paths, metric subsets and ablation."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import ColumnStats, column_stats
from .tree import DecisionPath, interpreter_output, node_depth, node_labels, path_to_leaf, tree_depth


@dataclass(frozen=True)
class MetricSensitivity:
    name: str
    sensitivity: float
    rank: int


@dataclass(frozen=True)
class SensitivityReport:
    instance_id: int | str
    entries: tuple[MetricSensitivity, ...]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def top(self, k: int) -> list[str]:
        return self.names[:k]

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "metrics": [asdict(e) for e in self.entries]}

    def to_csv(self) -> str:
        lines = ["metric,sensitivity,rank"]
        lines += [f"{e.name},{e.sensitivity!r},{e.rank}" for e in self.entries]
        return "\n".join(lines) + "\n"


def metric_statistics(X) -> ColumnStats:
    """Mean and population standard deviation of each metric over the training rows."""
    return column_stats(X)


def local_sensitivity(
    tree_params: Mapping[str, np.ndarray],
    stats: ColumnStats,
    x,
    column_names: Sequence[str],
    instance_id: int | str = 0,
) -> SensitivityReport:
    """Rank metrics by |g(x) - g(x + std_i e_i)| / std_i.

    Metrics with zero spread in the training data get sensitivity 0.
    Ties keep column order.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = len(x)
    if len(column_names) != d or len(stats.std) != d:
        raise ValueError("instance, column names and statistics disagree on the metric count")
    step = stats.std
    probes = np.repeat(x[None, :], d + 1, axis=0)
    probes[1:] += np.diag(step)
    g = interpreter_output(dict(tree_params), probes)
    base, moved = g[0], g[1:]
    live = step > 0
    sens = np.zeros(d)
    sens[live] = np.abs(base - moved[live]) / step[live]
    order = sorted(range(d), key=lambda i: (-sens[i], i))
    entries = tuple(
        MetricSensitivity(column_names[i], float(sens[i]), r) for r, i in enumerate(order, start=1)
    )
    return SensitivityReport(instance_id, entries)


def global_decision_paths(tree_params: Mapping[str, np.ndarray], column_names: Sequence[str]) -> list[DecisionPath]:
    """Every root-to-leaf path, leaves in left-to-right order."""
    depth = tree_depth(tree_params)
    return [path_to_leaf(tree_params, leaf, column_names) for leaf in range(2**depth)]


def root_metric(tree_params: Mapping[str, np.ndarray], column_names: Sequence[str]) -> str:
    """The metric at the root node, read as the most important one."""
    return node_labels(tree_params, column_names)[0]


def render_tree(tree_params: Mapping[str, np.ndarray], column_names: Sequence[str]) -> str:
    """Indented plain-text view; right branches (gate >= 0.5) listed first."""
    labels = node_labels(tree_params, column_names)
    leaves = [path_to_leaf(tree_params, i, column_names).leaf_class for i in range(2 ** tree_depth(tree_params))]
    n_inner = len(labels)
    lines: list[str] = []

    def walk(node: int, indent: str, edge: str):
        if node >= n_inner:
            lines.append(f"{indent}{edge}leaf {node - n_inner}: class {leaves[node - n_inner]}")
            return
        lines.append(f"{indent}{edge}[{node}] {labels[node]}")
        walk(2 * node + 2, indent + "    ", "right: ")
        walk(2 * node + 1, indent + "    ", "left:  ")

    walk(0, "", "")
    return "\n".join(lines) + "\n"


def global_importance(
    tree_params: Mapping[str, np.ndarray], decay: float = 0.25
) -> np.ndarray:
    """Per-metric score: sum over inner nodes of decay**depth * |weight|."""
    w = np.abs(tree_params["inner.weight"])
    scale = np.array([decay ** node_depth(i) for i in range(w.shape[0])])
    return scale @ w


@dataclass(frozen=True)
class MetricSubset:
    dataset_id: str
    k: int
    metrics: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"dataset_id": self.dataset_id, "k": self.k, "metrics": list(self.metrics)}


def top_k_metric_subset(
    source: SensitivityReport | Mapping[str, np.ndarray],
    k: int,
    column_names: Sequence[str] | None = None,
    decay: float = 0.25,
    dataset_id: str = "",
) -> MetricSubset:
    """Top-k metrics from a sensitivity report or from trained tree weights."""
    if isinstance(source, SensitivityReport):
        ranked = source.names
    else:
        if column_names is None:
            raise ValueError("column_names are required when ranking from tree weights")
        score = global_importance(source, decay)
        ranked = [column_names[i] for i in sorted(range(len(score)), key=lambda i: (-score[i], i))]
    if not 1 <= k <= len(ranked):
        raise ValueError(f"k must lie in [1, {len(ranked)}], got {k}")
    return MetricSubset(dataset_id, k, tuple(ranked[:k]))


# --------------------------------------------------------------------------
# ablation

SCORES = ("f_measure", "auc", "mcc")


@dataclass(frozen=True)
class AblationResult:
    metric: str
    scores: dict[str, float | None]
    degradation: dict[str, float | None]
    ranks: dict[str, int]

    def row(self) -> dict:
        out = {"metric": self.metric}
        for s in SCORES:
            out[f"{s}_rank"] = self.ranks[s]
        for s in SCORES:
            out[s] = self.scores[s]
            out[f"{s}_degradation"] = self.degradation[s]
        return out


def rank_degradations(values: Sequence[float | None]) -> list[int]:
    """Rank 1 = largest degradation; undefined values rank last, ties by order."""
    key = [(-v if v is not None else np.inf) for v in values]
    order = sorted(range(len(values)), key=lambda i: (key[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def ablation_rankings(
    base_scores: Mapping[str, float | None],
    retrain_and_score: Callable[[str], Mapping[str, float | None]],
    metrics_to_remove: Sequence[str],
) -> list[AblationResult]:
    """Drop each metric in turn, retrain, and rank metrics by score loss.

    ``retrain_and_score(metric)`` must retrain with that single column
    removed (same config and seed) and return F-measure, AUC and MCC on the
    fixed test split.
    """
    scored = [(m, dict(retrain_and_score(m))) for m in metrics_to_remove]
    degr = {
        s: [
            None if base_scores.get(s) is None or sc.get(s) is None else base_scores[s] - sc[s]
            for _, sc in scored
        ]
        for s in SCORES
    }
    ranks = {s: rank_degradations(degr[s]) for s in SCORES}
    return [
        AblationResult(
            metric=m,
            scores={s: sc.get(s) for s in SCORES},
            degradation={s: degr[s][i] for s in SCORES},
            ranks={s: ranks[s][i] for s in SCORES},
        )
        for i, (m, sc) in enumerate(scored)
    ]
