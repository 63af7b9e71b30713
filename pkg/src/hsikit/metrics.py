"""Classification and class-distribution metrics.

Macro-F1 averages the per-class F1 over classes that appear in the ground
truth; classes with support but no correct or predicted positives contribute
zero, and zero-support classes are excluded entirely. Aggregation uses
``math.fsum`` so that two correct implementations agree bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """(c, c) counts, rows = true class, columns = predicted; labels 1..c."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if y_true.size == 0:
        raise ValueError("no samples to evaluate")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ValueError(f"{name} labels must lie in 1..{n_classes}")
    flat = (y_true - 1) * n_classes + (y_pred - 1)
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def overall_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    return int(np.trace(cm)) / total


def per_class_metrics(cm: np.ndarray):
    """(precision, recall, f1, support) arrays over all classes.

    Precision/recall/F1 are 0 where their denominators vanish.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1, support.astype(np.int64)


def macro_f1(cm: np.ndarray) -> float:
    _, _, f1, support = per_class_metrics(cm)
    supported = support > 0
    if not supported.any():
        raise ValueError("confusion matrix is empty")
    return math.fsum(f1[supported]) / int(supported.sum())


def imbalance_ratio(histogram) -> float:
    """Largest class count over smallest; every class must be populated."""
    counts = np.asarray(histogram, dtype=np.int64)
    if counts.size == 0:
        raise ValueError("histogram is empty")
    if counts.min() <= 0:
        raise ValueError("every class must have a positive count")
    return int(counts.max()) / int(counts.min())


@dataclass(frozen=True)
class LongTailReport:
    sorted_counts: tuple
    cumulative_shares: tuple
    top1_share: float


def long_tail_report(histogram) -> LongTailReport:
    """Counts sorted descending with cumulative shares and the top-1 share."""
    counts = np.sort(np.asarray(histogram, dtype=np.int64))[::-1]
    if counts.size == 0 or counts.sum() == 0:
        raise ValueError("histogram is empty")
    shares = np.cumsum(counts) / counts.sum()
    return LongTailReport(
        sorted_counts=tuple(int(c) for c in counts),
        cumulative_shares=tuple(float(s) for s in shares),
        top1_share=float(counts[0] / counts.sum()),
    )


def metrics_report(y_true, y_pred, n_classes: int) -> dict:
    """JSON-ready report: oa, macro_f1, per-class numbers, distribution stats.

    Distribution stats (imbalance ratio, sorted counts) cover the classes
    present in the ground truth only.
    """
    cm = confusion_matrix(y_true, y_pred, n_classes)
    precision, recall, f1, support = per_class_metrics(cm)
    hist = support[support > 0]
    report = {
        "oa": overall_accuracy(cm),
        "macro_f1": macro_f1(cm),
        "per_class": {
            str(k + 1): {
                "precision": float(precision[k]),
                "recall": float(recall[k]),
                "f1": float(f1[k]),
                "support": int(support[k]),
            }
            for k in range(n_classes)
        },
        "imbalance_ratio": imbalance_ratio(hist),
        "sorted_counts": list(long_tail_report(hist).sorted_counts),
    }
    return report


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=1))
