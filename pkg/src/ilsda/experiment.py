"""Experiment protocol: fit on a source/target pair, classify and score.

``run_experiment`` works on in-memory FeatureSets and returns a report
dictionary. ``write_outputs`` stores the report (and optionally the trace,
predictions and model) in an output directory.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import replace

import numpy as np

from .io import export_model
from .optim import write_trace
from .pipeline import UNLABELED, FeatureSet, StageError, fit, knn_classify, nearest_neighbor

SAMPLER_NOTE = (
    "labeled target rows drawn by a seeded per-class sampler "
    "(stand-in for externally provided splits)"
)
TIMING_KEYS = ("wall_time",)


class ConfigError(ValueError):
    """Inconsistent experiment settings."""


def sample_labeled(target, k, seed=0):
    """Keep the labels of ``k`` random rows per class and hide the rest.

    Returns the partially labeled target and the indices of the kept rows.
    """
    if target.labels is None:
        raise ConfigError("--labeled-per-class needs a target file with labels")
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(target.labels[target.labels != UNLABELED]):
        rows = np.flatnonzero(target.labels == c)
        if rows.size <= k:
            raise ConfigError(
                f"class {c} has {rows.size} target rows; cannot label {k} and keep queries"
            )
        keep.append(rng.choice(rows, size=k, replace=False))
    keep = np.sort(np.concatenate(keep))
    labels = np.full(target.n, UNLABELED)
    labels[keep] = target.labels[keep]
    return target.with_labels(labels), keep


def _pad(X, dim):
    if X.shape[1] >= dim:
        return X
    return np.hstack([X, np.zeros((X.shape[0], dim - X.shape[1]))])


def baseline_predictions(source, target_train, queries):
    """1-NN on raw features with no adaptation.

    The training pool is the source plus any labeled target rows. When the
    domains differ in dimension the smaller one is zero-padded.
    """
    dim = max(source.dim, queries.dim)
    train = [_pad(source.X, dim)]
    labels = [source.labels]
    if target_train is not None and np.any(target_train.labeled_mask):
        mask = target_train.labeled_mask
        train.append(_pad(target_train.X[mask], dim))
        labels.append(target_train.labels[mask])
    return nearest_neighbor(np.vstack(train), np.concatenate(labels), _pad(queries.X, dim))


def score(pred, truth):
    """Accuracy, per-class accuracy and confusion counts (rows = truth)."""
    classes = np.unique(np.concatenate([truth, pred]))
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((classes.size, classes.size), dtype=np.int64)
    for t, p in zip(truth, pred):
        conf[index[t], index[p]] += 1
    per_class = {}
    for c in np.unique(truth):
        row = conf[index[c]]
        per_class[str(int(c))] = float(row[index[c]] / row.sum())
    return {
        "accuracy": float(np.mean(pred == truth)),
        "per_class_accuracy": per_class,
        "confusion": {"classes": [int(c) for c in classes], "counts": conf.tolist()},
    }


def run_experiment(source, target, config, labeled_per_class=None, labeled_target=None):
    """Fit, embed, classify the unlabeled target rows and score them.

    Parameters
    ----------
    source : FeatureSet
        Fully labeled source domain.
    target : FeatureSet
        Target domain. Labels present in the file are treated as withheld
        ground truth, except for rows selected by ``labeled_per_class``.
    config : TrainConfig
    labeled_per_class : int, optional
        Semi-supervised mode: reveal this many target labels per class.
    labeled_target : FeatureSet, optional
        Semi-supervised mode: extra labeled target rows, appended to the
        target domain for training.

    Returns
    -------
    report : dict
    model : FittedModel
    trace : list of TraceRecord
    predictions : ndarray
        Predicted labels of the query rows.
    """
    t0 = time.perf_counter()
    protocol = "unsupervised: no target labels used for training"
    truth_all = target.labels
    if config.mode == "semi":
        if labeled_per_class is not None:
            train_t, revealed = sample_labeled(target, labeled_per_class, config.seed)
            queries = np.setdiff1d(np.arange(target.n), revealed)
            protocol = f"semi-supervised, {labeled_per_class} per class: {SAMPLER_NOTE}"
        elif labeled_target is not None:
            if labeled_target.labels is None or not np.all(labeled_target.labeled_mask):
                raise ConfigError("labeled target file must label every row")
            if labeled_target.dim != target.dim:
                raise ConfigError("labeled target rows differ in dimension from the target file")
            queries = np.arange(target.n)
            train_t = FeatureSet(
                np.vstack([target.X, labeled_target.X]),
                np.concatenate([np.full(target.n, UNLABELED), labeled_target.labels]),
                "target",
            )
            protocol = "semi-supervised with a separate labeled target file"
        elif target.labels is not None and np.any(target.labeled_mask):
            train_t = target
            queries = np.flatnonzero(~target.labeled_mask)
            truth_all = None
            protocol = "semi-supervised with labeled rows taken from the target file"
        else:
            raise ConfigError("semi mode requires labeled target rows")
    else:
        if labeled_per_class is not None or labeled_target is not None:
            raise ConfigError("labeled target options require --mode semi")
        train_t = target.with_labels(None)
        queries = np.arange(target.n)
    if queries.size == 0:
        raise ConfigError("no target rows left to classify")

    model, trace = fit(source, train_t, config)
    query_fs = FeatureSet(target.X[queries], None, "target")
    try:
        pred = knn_classify(model, [source, train_t], query_fs)
    except ValueError as exc:
        raise StageError("classify", str(exc)) from exc

    report = {
        "protocol": protocol,
        "n_queries": int(queries.size),
        "iterations": len(trace) - 1,
        "status": trace[-1].status,
        "initial_loss": trace[0].loss.as_dict(),
        "final_loss": trace[-1].loss.as_dict(),
        "beta": float(model.beta),
        "config": config.as_dict(),
        "accuracy": None,
        "baseline_accuracy": None,
    }
    if truth_all is not None and np.all(truth_all[queries] != UNLABELED):
        truth = truth_all[queries]
        report.update(score(pred, truth))
        base = baseline_predictions(source, train_t, query_fs)
        report["baseline_accuracy"] = float(np.mean(base == truth))
    report["wall_time"] = time.perf_counter() - t0
    return report, model, trace, pred


def strip_timing(obj):
    """Copy of a report or trace record without wall-clock fields."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def write_outputs(out_dir, report, trace=None, predictions=None, model=None, model_path=None):
    """Write ``report.json`` and the optional artifacts.

    Everything is first written to temporary names and renamed at the end,
    so a failure leaves no partial output behind.
    """
    os.makedirs(out_dir, exist_ok=True)
    staged = []

    def stage(final, writer):
        tmp = f"{final}.partial"
        writer(tmp)
        staged.append((tmp, final))

    try:
        stage(
            os.path.join(out_dir, "report.json"),
            lambda p: _write_text(p, json.dumps(report, indent=2, sort_keys=True) + "\n"),
        )
        if predictions is not None:
            stage(
                os.path.join(out_dir, "predictions.txt"),
                lambda p: _write_text(p, "".join(f"{int(c)}\n" for c in predictions)),
            )
        if trace is not None:
            stage(os.path.join(out_dir, "trace.jsonl"), lambda p: write_trace(trace, p))
        if model is not None and model_path is not None:
            stage(model_path, lambda p: export_model(model, p))
    except OSError:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def with_lambda(config, lam):
    return replace(config, lam=float(lam))
