"""Linear one-vs-rest SVM on extracted features, and OA/AA metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-8


@dataclass
class SvmConfig:
    reg: float = 1e-4
    epochs: int = 100
    seed: int = 0


@dataclass
class SvmModel:
    classes: np.ndarray  # (K,) class labels, ascending
    weights: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,)
    reg: float
    epochs: int
    seed: int

    def scores(self, features):
        x = (np.asarray(features, dtype=np.float64) - self.mean) / self.std
        return x @ self.weights.T + self.biases


def _pegasos(x, targets, reg, epochs, rng):
    """Hinge-loss SVMs by stochastic subgradient descent with step
    1 / (reg * t) and projection onto the ball of radius 1 / sqrt(reg).

    ``targets`` is (n, K) in {-1, +1}; the K binary problems share one
    sample order. The bias is learned as the weight of a constant feature.
    """
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    w = np.zeros((targets.shape[1], d + 1))
    radius = 1.0 / np.sqrt(reg)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (reg * t)
            active = targets[i] * (w @ xa[i]) < 1.0
            w *= 1.0 - eta * reg
            w[active] += eta * targets[i, active, None] * xa[i]
            norms = np.linalg.norm(w, axis=1)
            over = norms > radius
            w[over] *= (radius / norms[over])[:, None]
    return w[:, :-1], w[:, -1]


def train_svm(features, labels, split=None, config: SvmConfig | None = None) -> SvmModel:
    """Fit one-vs-rest linear SVMs on the training rows of ``features``.

    ``split`` is an IndexSplit (or None to train on every row). Features are
    standardized with training-set statistics.
    """
    cfg = config or SvmConfig()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    train = np.arange(len(labels)) if split is None else np.asarray(split.train_indices)
    if train.size == 0:
        raise ValueError("empty training set")
    classes = np.unique(labels[labels > 0])
    missing = np.setdiff1d(classes, labels[train])
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} have no training samples")
    x, y = features[train], labels[train]
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    x = (x - mean) / std
    weights = np.zeros((classes.size, x.shape[1]))
    biases = np.zeros(classes.size)
    if classes.size > 1:
        targets = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
        rng = np.random.default_rng(cfg.seed)
        weights, biases = _pegasos(x, targets, cfg.reg, cfg.epochs, rng)
    return SvmModel(classes, weights, biases, mean, std, cfg.reg, cfg.epochs, cfg.seed)


def classify(model: SvmModel, features) -> np.ndarray:
    """Arg-max class per row; ties go to the lowest class label."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.mean.shape[0]:
        raise ValueError(
            f"features must be (n, {model.mean.shape[0]}), got {features.shape}"
        )
    return model.classes[np.argmax(model.scores(features), axis=1)]


@dataclass
class MetricsReport:
    per_class_acc: np.ndarray  # percent, NaN for classes absent from the test set
    oa: float
    aa: float
    confusion: np.ndarray  # (K, K), rows = actual

    def to_dict(self):
        return {
            "oa": self.oa,
            "aa": self.aa,
            "per_class": [None if np.isnan(a) else float(a) for a in self.per_class_acc],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "accuracy"])
            for k, acc in enumerate(self.per_class_acc, start=1):
                writer.writerow([k, "" if np.isnan(acc) else f"{acc:.2f}"])
            writer.writerow(["OA", f"{self.oa:.2f}"])
            writer.writerow(["AA", f"{self.aa:.2f}"])


def compute_metrics(predicted, actual, num_classes: int) -> MetricsReport:
    """Confusion matrix, per-class accuracy, OA and AA (all in percent).

    AA averages over the classes that occur in ``actual``.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape or predicted.ndim != 1 or predicted.size == 0:
        raise ValueError("predicted and actual must be equal-length non-empty vectors")
    for arr in (predicted, actual):
        if arr.min() < 1 or arr.max() > num_classes:
            raise ValueError(f"labels must lie in 1..{num_classes}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (actual - 1, predicted - 1), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, 100.0 * np.diag(confusion) / support, np.nan)
    oa = 100.0 * np.trace(confusion) / confusion.sum()
    aa = float(np.nanmean(per_class))
    return MetricsReport(per_class, float(oa), aa, confusion)
