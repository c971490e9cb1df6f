"""Ordinal and standard classification metrics.

All operations are pure functions of integer confusion counts or probability
vectors. Quadratic weighted kappa uses weights w[i, j] = (i - j)^2 / (K - 1)^2,
so kappa = 1 for a diagonal matrix and can go negative for worse-than-chance
agreement.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np


class DegenerateMetricWarning(UserWarning):
    """A per-class denominator was zero; that class contributed 0."""


def confusion(true_labels, pred_labels, num_classes: int) -> np.ndarray:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    if true_labels.shape != pred_labels.shape:
        raise ValueError(
            f"label count mismatch: {true_labels.shape[0]} true vs {pred_labels.shape[0]} predicted")
    if true_labels.size and (true_labels.min() < 0 or true_labels.max() >= num_classes):
        raise ValueError("true labels outside [0, num_classes)")
    if pred_labels.size and (pred_labels.min() < 0 or pred_labels.max() >= num_classes):
        raise ValueError("predicted labels outside [0, num_classes)")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true_labels, pred_labels), 1)
    return cm


def kappa_weights(num_classes: int) -> np.ndarray:
    idx = np.arange(num_classes, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / (num_classes - 1) ** 2


def qwk(cm: np.ndarray) -> float:
    """Quadratic weighted kappa of a confusion matrix (rows true, cols predicted).

    kappa = 1 - sum(w * O) / sum(w * E) with E the outer product of the
    marginals scaled to the sample count. The denominator vanishes only when
    every sample sits in one diagonal cell; that is perfect agreement and
    returns 1.0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n <= 0:
        raise ValueError("empty confusion matrix")
    w = kappa_weights(cm.shape[0])
    expected = np.outer(cm.sum(axis=1), cm.sum(axis=0)) / n
    denom = float((w * expected).sum())
    if denom == 0.0:
        # Marginals concentrated on a single shared class: observed mass is
        # necessarily in that diagonal cell.
        if float((w * cm).sum()) == 0.0:
            return 1.0
        raise ValueError("degenerate kappa: zero expected disagreement with observed disagreement")
    return 1.0 - float((w * cm).sum()) / denom


def top_k_accuracy(prob_vectors, true_labels, k: int) -> float:
    probs = np.asarray(prob_vectors, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if probs.shape[0] != true_labels.shape[0]:
        raise ValueError("prediction/label count mismatch")
    if k > probs.shape[1]:
        raise ValueError(f"k={k} exceeds {probs.shape[1]} classes")
    if probs.shape[0] == 0:
        return 0.0
    # Stable sort on negated probabilities: ties resolve to the lower class.
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    hit = (order == true_labels[:, None]).any(axis=1)
    return float(hit.mean())


def _per_class_counts(cm: np.ndarray):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = cm.sum() - tp - fp - fn
    return tp, fp, fn, tn


def _safe_div(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        bad = np.flatnonzero(~ok).tolist()
        warnings.warn(f"{what} undefined for classes {bad}; contributing 0",
                      DegenerateMetricWarning, stacklevel=3)
    return out


def f1_scores(cm: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Per-class F1, macro (unweighted mean) and micro (pooled) F1."""
    tp, fp, fn, _ = _per_class_counts(cm)
    per_class = _safe_div(2.0 * tp, 2.0 * tp + fp + fn, "F1")
    macro = float(per_class.mean())
    micro = float(tp.sum() / (tp.sum() + 0.5 * (fp.sum() + fn.sum())))
    return per_class, macro, micro


def prec_rec_spec(cm: np.ndarray) -> tuple[float, float, float]:
    """Macro-averaged precision, recall and specificity (true negative rate)."""
    tp, fp, fn, tn = _per_class_counts(cm)
    precision = _safe_div(tp, tp + fp, "precision")
    recall = _safe_div(tp, tp + fn, "recall")
    specificity = _safe_div(tn, tn + fp, "specificity")
    return float(precision.mean()), float(recall.mean()), float(specificity.mean())


@dataclass(frozen=True)
class MetricsReport:
    top1_acc: float
    top2_acc: float
    f1_macro: float
    f1_micro: float
    precision_macro: float
    recall_macro: float
    specificity_macro: float
    qwk: float

    CSV_HEADER = "top1_acc,top2_acc,f1_macro,f1_micro,precision_macro,recall_macro,specificity_macro,qwk"

    def to_dict(self) -> dict[str, float]:
        return {
            "top1_acc": self.top1_acc,
            "top2_acc": self.top2_acc,
            "f1_macro": self.f1_macro,
            "f1_micro": self.f1_micro,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "specificity_macro": self.specificity_macro,
            "qwk": self.qwk,
        }

    def to_csv_row(self) -> str:
        return ",".join(repr(v) for v in self.to_dict().values())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def argmax_predictions(prob_vectors) -> np.ndarray:
    """Hard predictions with ties broken toward the lower class index."""
    return np.asarray(np.argmax(prob_vectors, axis=1), dtype=np.int64)


def report(prob_vectors, true_labels, num_classes: int) -> MetricsReport:
    probs = np.asarray(prob_vectors, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != num_classes:
        raise ValueError(f"expected (n, {num_classes}) probability array, got {probs.shape}")
    preds = argmax_predictions(probs)
    cm = confusion(true_labels, preds, num_classes)
    _, f1_ma, f1_mi = f1_scores(cm)
    prec, rec, spec = prec_rec_spec(cm)
    return MetricsReport(
        top1_acc=top_k_accuracy(probs, true_labels, 1),
        top2_acc=top_k_accuracy(probs, true_labels, min(2, num_classes)),
        f1_macro=f1_ma,
        f1_micro=f1_mi,
        precision_macro=prec,
        recall_macro=rec,
        specificity_macro=spec,
        qwk=qwk(cm),
    )


def write_confusion_csv(cm: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(cm, dtype=np.int64):
            fh.write(",".join(str(int(v)) for v in row) + "\n")
