"""``jointdp`` command line: train, evaluate, explain, ablate, compare."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetError, SplitSpec, load_csv_dataset
from .estimator import JointDefectClassifier
from .interpret import SCORES, global_decision_paths, render_tree, root_metric
from .metrics import cohens_d, top_k_count
from .persistence import (
    REPORT_SCHEMA,
    ModelBundle,
    ModelFormatError,
    config_digest,
    file_digest,
    load_model,
    read_table,
    save_model,
    write_csv,
    write_dataset,
    write_json,
)
from .pipeline import evaluate_scaled, fit_prepared, prepare_data, run_ablation, subset_curve
from .trainer import SAMPLERS, TrainingDiverged

log = logging.getLogger("jointdp")

# option name -> (estimator parameter or None, default)
TRAIN_OPTIONS = {
    "label": (None, "defect"),
    "sampler": (None, "smote"),
    "split": (None, [0.7, 0.2, 0.1]),
    "lr": ("learning_rate", 1e-6),
    "batch_size": ("batch_size", 16),
    "epochs": ("max_epochs", 40),
    "patience": ("early_stop_patience", 10),
    "momentum": ("momentum", 0.9),
    "ema_window": ("ema_window", 1000),
    "depth": ("depth", 4),
    "filters": ("filters", 16),
    "kernel_width": ("kernel_width", 3),
    "pool_width": ("pool_width", 2),
    "hidden": ("hidden_width", 32),
    "alpha": ("alpha", 1.4),
    "beta": ("beta", 0.6),
    "lam": ("lam", 0.5),
    "gamma": ("gamma", 0.8),
    "temperature": ("temperature", 100.0),
    "penalty_strength": ("penalty_strength", 10.0),
    "penalty_decay": ("penalty_decay", 0.25),
}


class CommandError(Exception):
    """A user-facing failure; reported on stderr with a nonzero exit."""


def _default_seed() -> int:
    raw = os.environ.get("JOINTDP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"JOINTDP_SEED must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# configuration


def resolve_run_config(args) -> dict:
    """Merge documented defaults, an optional JSON config file and explicit flags."""
    merged = {k: v for k, (_, v) in TRAIN_OPTIONS.items()}
    merged["seed"] = None
    merged["data"] = None
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read config file {args.config}: {exc}") from None
        unknown = sorted(set(loaded) - set(merged))
        if unknown:
            raise CommandError(f"unknown keys in config file: {', '.join(unknown)}")
        merged.update(loaded)
    for key in merged:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["seed"] is None:
        merged["seed"] = _default_seed()
    if merged["data"] is None:
        raise CommandError("no dataset given (use --data or a config file)")
    if merged["sampler"] not in SAMPLERS:
        raise CommandError(f"sampler must be one of {', '.join(SAMPLERS)}")
    return merged


def build_estimator(run: dict) -> JointDefectClassifier:
    params = {est: run[opt] for opt, (est, _) in TRAIN_OPTIONS.items() if est is not None}
    return JointDefectClassifier(random_state=int(run["seed"]), **params)


def split_spec(run: dict) -> SplitSpec:
    fr = [float(v) for v in run["split"]]
    if len(fr) != 3:
        raise CommandError("--split takes three fractions: train test validation")
    return SplitSpec(*fr, seed=int(run["seed"]))


def _load(path, label) -> Dataset:
    if not Path(path).is_file():
        raise CommandError(f"data file not found: {path}")
    return load_csv_dataset(path, label)


def _stamp(run_seed: int, digest: str) -> dict:
    return {"schema_version": REPORT_SCHEMA, "seed": run_seed, "config_digest": digest}


def _comment(seed: int, digest: str) -> str:
    return f"seed={seed} config_digest={digest}"


def _attach_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _scores_row(scores: dict) -> tuple[list[str], list]:
    keys = ["precision", "recall", "f_measure", "auc", "ppc", "pnpc", "for_rate", "mcc", "ai", "fi"]
    return keys, [scores[k] for k in keys]


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    run = resolve_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out)
    try:
        started = time.time()
        dataset = _load(run["data"], run["label"])
        data = prepare_data(dataset, split_spec(run), run["sampler"])
        est = build_estimator(run)
        log.info("training on %d rows (%d after %s), seed %s", len(data.train), len(data.fit_train),
                 run["sampler"], run["seed"])
        fit_prepared(est, data)
        bundle = ModelBundle(est, data.normalizer, run["label"], int(run["seed"]), run["sampler"])
        digest = bundle.digest
        save_model(out / "model.json", bundle)
        (out / "history.csv").write_text(f"# {_comment(bundle.seed, digest)}\n" + est.history_.to_csv())
        for name, part in (("train", data.raw_train), ("test", data.raw_test), ("validation", data.raw_validation)):
            write_dataset(out / f"{name}.csv", part, run["label"])
        test_eval = evaluate_scaled(est, data.test.X, data.test.y)
        report = {
            **_stamp(bundle.seed, digest),
            "run_config": {k: v for k, v in run.items() if k != "data"},
            "data": {"file": Path(run["data"]).name, "sha256": file_digest(run["data"]),
                     "rows": len(dataset), "columns": list(dataset.columns)},
            "splits": {
                "train": len(data.train), "train_resampled": len(data.fit_train),
                "test": len(data.test), "validation": len(data.validation),
                "train_defect_rate": data.train.defect_rate,
            },
            "provenance": list(data.fit_train.provenance),
            "training": {
                "epochs_run": len(est.history_), "best_epoch": est.history_.best_epoch,
                "stop_reason": est.history_.stop_reason,
            },
            "root_metric": est.root_metric_,
            "test_scores": test_eval.scores.to_dict(),
        }
        write_json(out / "report.json", report)
        log.info("wrote model to %s in %.2fs (digest %s)", out / "model.json", time.time() - started, digest)
    finally:
        log.removeHandler(handler)
        handler.close()
    print(f"model written to {out / 'model.json'}")
    return 0


def _model_and_data(args) -> tuple[ModelBundle, Dataset, Path]:
    model_path = Path(args.model)
    if not model_path.is_file():
        raise CommandError(f"model file not found: {model_path}")
    bundle = load_model(model_path)
    data_path = Path(args.data) if args.data else model_path.parent / "test.csv"
    dataset = _load(data_path, args.label or bundle.label_column)
    out = Path(args.out) if args.out else model_path.parent
    out.mkdir(parents=True, exist_ok=True)
    return bundle, dataset, out


def cmd_evaluate(args) -> int:
    bundle, dataset, out = _model_and_data(args)
    X = bundle.scale(dataset)
    ev = evaluate_scaled(bundle.estimator, X, dataset.y)
    stamp = _stamp(bundle.seed, bundle.digest)
    write_json(out / "scores.json", {
        **stamp,
        "n": len(dataset),
        "scores": ev.scores.to_dict(),
        "confusion": vars(ev.confusion),
        "interpreter_confusion": vars(ev.interpreter_confusion),
    })
    c = ev.confusion
    write_csv(out / "confusion.csv", ["", "predicted_1", "predicted_0"],
              [["actual_1", c.tp, c.fn], ["actual_0", c.fp, c.tn]], _comment(bundle.seed, bundle.digest))
    keys, row = _scores_row(ev.scores.to_dict())
    write_csv(out / "scores.csv", ["seed"] + keys, [[bundle.seed] + row], _comment(bundle.seed, bundle.digest))
    print(json.dumps(ev.scores.to_dict(), sort_keys=True))
    return 0


def cmd_explain(args) -> int:
    bundle, dataset, out = _model_and_data(args)
    est = bundle.estimator
    stamp = _stamp(bundle.seed, bundle.digest)
    comment = _comment(bundle.seed, bundle.digest)
    if args.global_:
        paths = global_decision_paths(est.tree_params_, est.columns_)
        root = root_metric(est.tree_params_, est.columns_)
        text = [f"# {comment}", f"root (most important) metric: {root}", "", render_tree(est.tree_params_, est.columns_)]
        text += ["paths:"] + [f"  {p}    {p.as_rule()}" for p in paths]
        (out / "paths.txt").write_text("\n".join(text) + "\n")
        write_json(out / "paths.json", {**stamp, "root_metric": root, "depth": est.depth,
                                        "paths": [p.to_dict() for p in paths]})
        d = len(est.columns_)
        dataset_id = Path(args.data or "test.csv").stem
        subsets = [est.metric_subset(k, dataset_id).to_dict() for k in range(1, min(6, d) + 1)]
        write_json(out / "subsets.json", {**stamp, "subsets": subsets})
        print(f"{len(paths)} decision paths written to {out / 'paths.txt'}")
        return 0

    i = args.instance
    if i is None:
        raise CommandError("choose --instance N or --global")
    if not 0 <= i < len(dataset):
        raise CommandError(f"instance {i} is out of range for {len(dataset)} rows")
    x = bundle.scale(dataset)[i]
    report = est.explain(x, instance_id=i)
    k = top_k_count(args.top_percent, len(est.columns_))
    write_csv(out / "sensitivity.csv", ["metric", "sensitivity", "rank"],
              [[e.name, e.sensitivity, e.rank] for e in report.entries], comment)
    write_json(out / "sensitivity.json", {
        **stamp,
        **report.to_dict(),
        "top_percent": args.top_percent,
        "top_metrics": report.top(k),
        "decision_path": est.decision_path(x).to_dict(),
        "interpreter_output": float(est.interpreter_proba(x[None, :])[0, 1]),
    })
    print(f"instance {i}: top metrics {', '.join(report.top(k))}")
    return 0


def cmd_ablate(args) -> int:
    run = resolve_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load(run["data"], run["label"])
    metrics = [m for chunk in (args.metrics or []) for m in chunk.split(",") if m]
    unknown = [m for m in metrics if m not in dataset.columns]
    if unknown:
        raise CommandError(f"unknown metrics: {', '.join(unknown)}")
    est = build_estimator(run)
    split = split_spec(run)
    digest = config_digest({"estimator": est.get_params(), "sampler": run["sampler"],
                            "label_column": run["label"], "columns": list(dataset.columns)})
    seed = int(run["seed"])
    handler = _attach_log(out)
    try:
        log.info("ablating %d metrics", len(metrics))
        result = run_ablation(est, dataset, metrics, split, run["sampler"], jobs=args.jobs)
    finally:
        log.removeHandler(handler)
        handler.close()
    rows = [r.row() for r in result.results]
    write_csv(out / "ablation.csv", ["metric", "f_rank", "auc_rank", "mcc_rank"],
              [[r["metric"], r["f_measure_rank"], r["auc_rank"], r["mcc_rank"]] for r in rows], _comment(seed, digest))
    deg_cols = [c for s in SCORES for c in (s, f"{s}_degradation")]
    write_csv(out / "degradations.csv", ["metric"] + deg_cols,
              [[r["metric"]] + [r[c] for c in deg_cols] for r in rows], _comment(seed, digest))
    doc = {**_stamp(seed, digest), "base_scores": result.base_scores, "results": rows}
    if args.subset_curve:
        base_data = prepare_data(dataset, split, run["sampler"])
        base = fit_prepared(build_estimator(run), base_data)
        ranked = list(base.metric_subset(len(dataset.columns)).metrics)
        curve = subset_curve(est, dataset, ranked, split, run["sampler"])
        write_csv(out / "subset_curve.csv", ["k", "metrics"] + list(SCORES),
                  [[c["k"], " ".join(c["metrics"])] + [c[s] for s in SCORES] for c in curve], _comment(seed, digest))
        doc["subset_curve"] = curve
    write_json(out / "ablation.json", doc)
    print(f"ablation of {len(metrics)} metrics written to {out / 'ablation.csv'}")
    return 0


def cmd_compare(args) -> int:
    (ha, ra), (hb, rb) = read_table(args.a), read_table(args.b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for col in [c for c in ha if c in hb and c != "seed"]:
        a = _numeric(ra, ha.index(col))
        b = _numeric(rb, hb.index(col))
        if a is None or b is None:
            continue
        entry = {"column": col, "n_a": len(a), "n_b": len(b),
                 "mean_a": float(np.mean(a)) if a else None, "mean_b": float(np.mean(b)) if b else None,
                 "d": None, "band": None}
        if len(a) >= 2 and len(b) >= 2:
            entry["d"], entry["band"] = cohens_d(a, b)
        results.append(entry)
    if not results:
        raise CommandError("the two files share no numeric columns")
    keys = ["column", "d", "band", "mean_a", "mean_b", "n_a", "n_b"]
    write_csv(out / "cohens_d.csv", keys, [[r[k] for k in keys] for r in results])
    write_json(out / "cohens_d.json", {"schema_version": REPORT_SCHEMA, "a": Path(args.a).name,
                                       "b": Path(args.b).name, "columns": results})
    for r in results:
        d = "n/a" if r["d"] is None else f"{r['d']:+.4f} ({r['band']})"
        print(f"{r['column']}: d = {d}")
    return 0


def _numeric(rows, j) -> list[float] | None:
    vals = []
    for r in rows:
        cell = r[j].strip() if j < len(r) else ""
        if cell == "":
            continue
        try:
            v = float(cell)
        except ValueError:
            return None
        if math.isfinite(v):
            vals.append(v)
    return vals


# --------------------------------------------------------------------------
# parser


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config, which overrides defaults)")
    g.add_argument("--data", help="CSV dataset with a header row")
    g.add_argument("--label", help="label column name (default: defect)")
    g.add_argument("--config", help="JSON file with run options; keys match the long flag names")
    g.add_argument("--seed", type=int, help="master seed (default: $JOINTDP_SEED or 0)")
    g.add_argument("--sampler", choices=SAMPLERS, help="training-split rebalancing (default: smote)")
    g.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "TEST", "VAL"),
                   help="split fractions (default: 0.7 0.2 0.1)")
    g.add_argument("--lr", type=float, help="learning rate (default: 1e-6)")
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--epochs", type=int, help="maximum epochs (default: 40)")
    g.add_argument("--patience", type=int, help="early-stopping patience (default: 10)")
    g.add_argument("--momentum", type=float)
    g.add_argument("--ema-window", dest="ema_window", type=int)
    g.add_argument("--depth", type=int, help="tree depth (default: 4)")
    g.add_argument("--filters", type=int)
    g.add_argument("--kernel-width", dest="kernel_width", type=int)
    g.add_argument("--pool-width", dest="pool_width", type=int)
    g.add_argument("--hidden", type=int, help="predictor hidden width (default: 32)")
    for name in ("alpha", "beta", "lam", "gamma", "temperature"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--penalty-strength", dest="penalty_strength", type=float)
    g.add_argument("--penalty-decay", dest="penalty_decay", type=float)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model.json written by train")
    p.add_argument("--data", help="CSV to read (default: test.csv next to the model)")
    p.add_argument("--label", help="label column (default: the one used in training)")
    p.add_argument("--out", help="output directory (default: the model's directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointdp", description="Jointly trained defect predictor and tree interpreter.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="split, rebalance and train; write model.json and reports")
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser("explain", help="local sensitivity ranking or global decision paths")
    _add_model_flags(p)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--instance", type=int, help="row index to explain")
    mode.add_argument("--global", dest="global_", action="store_true", help="list every decision path")
    p.add_argument("--top-percent", dest="top_percent", type=float, default=10.0,
                   help="share of metrics reported as the top set (default: 10)")
    p.set_defaults(func=cmd_explain, parser=p)

    p = sub.add_parser("ablate", help="retrain without each metric and rank the score loss")
    _add_training_flags(p)
    p.add_argument("--metrics", nargs="*", default=[], help="metrics to remove (space or comma separated)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--subset-curve", dest="subset_curve", action="store_true",
                   help="also retrain on the top-k metric subsets, k = 1..6")
    p.set_defaults(func=cmd_ablate, parser=p)

    p = sub.add_parser("compare", help="Cohen's d per shared column of two score CSVs")
    p.add_argument("a", help="first score CSV")
    p.add_argument("b", help="second score CSV")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_compare, parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(args.parser.format_usage(), end="", file=sys.stderr)
        print(f"jointdp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ModelFormatError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"jointdp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
