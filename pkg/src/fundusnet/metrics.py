"""Evaluation metrics for ordinal grading and binary screening tasks.

All functions are pure. Metrics that are mathematically undefined on the
given input raise ``UndefinedMetricError``; report construction catches
these and records the reason instead of silently emitting 0.

Conventions (logged in every report so comparisons stay honest):
  * multiclass AUC is the unweighted mean of one-vs-rest binary AUCs over
    the classes present in the ground truth;
  * tied scores count 1/2 in the pairwise AUC (Mann-Whitney);
  * per-class F1 is 0 when precision + recall is 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

REPORT_SCHEMA_VERSION = 1


def auc_binary(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    ties counted 1/2. Implemented with average ranks; the brute-force
    pairwise count gives the same value.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise UndefinedMetricError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = ranks[pos].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_multiclass(scores, labels) -> float:
    """Macro one-vs-rest AUC over the classes present in ``labels``.

    scores: (N, K) per-class scores; labels: (N,) ints in [0, K).
    Classes absent from the truth are skipped with a warning; fewer than
    two present classes is undefined.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise UndefinedMetricError("scores must be (N, K) aligned with labels")
    present = np.unique(labels)
    if present.size < 2:
        raise UndefinedMetricError("multiclass AUC needs >= 2 classes present")
    k = scores.shape[1]
    aucs = []
    for c in range(k):
        if c not in present:
            warnings.warn(f"class {c} absent from ground truth; skipped in macro AUC")
            continue
        aucs.append(auc_binary(scores[:, c], (labels == c).astype(int)))
    return float(np.mean(aucs))


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise UndefinedMetricError("label vectors must be equal-length and non-empty")
    if (y_true.min() < 0 or y_true.max() >= num_classes
            or y_pred.min() < 0 or y_pred.max() >= num_classes):
        raise UndefinedMetricError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def kappa_quadratic(y_true, y_pred, num_classes: int | None = None) -> float:
    """Quadratic-weighted Cohen's kappa.

    kappa = 1 - sum(w * O) / sum(w * E) with w_ij = (i-j)^2 / (K-1)^2,
    O the observed count matrix and E the outer product of the two label
    histograms scaled to the same total.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise UndefinedMetricError("label vectors must be equal-length and non-empty")
    k = int(num_classes) if num_classes is not None else int(max(y_true.max(), y_pred.max())) + 1
    if k < 2:
        raise UndefinedMetricError("kappa needs at least 2 classes")
    n = y_true.size
    observed = confusion_matrix(y_true, y_pred, k).astype(np.float64)
    hist_true = observed.sum(axis=1)
    hist_pred = observed.sum(axis=0)
    expected = np.outer(hist_true, hist_pred) / n
    idx = np.arange(k, dtype=np.float64)
    w = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    den = (w * expected).sum()
    if den == 0.0:
        # both marginals on one identical class; O == E on the diagonal
        if np.array_equal(observed, expected):
            return 1.0
        raise UndefinedMetricError("kappa undefined: zero expected disagreement")
    return float(1.0 - (w * observed).sum() / den)


def accuracy(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion)
    total = confusion.sum()
    if total == 0:
        raise UndefinedMetricError("empty confusion matrix")
    return float(np.trace(confusion) / total)


def f1_scores(confusion: np.ndarray) -> tuple[float, float]:
    """(macro F1, support-weighted F1) from a confusion matrix.
    A class with zero precision+recall contributes F1 = 0."""
    confusion = np.asarray(confusion, dtype=np.float64)
    if confusion.sum() == 0:
        raise UndefinedMetricError("empty confusion matrix")
    tp = np.diag(confusion)
    pred_totals = confusion.sum(axis=0)
    true_totals = confusion.sum(axis=1)
    f1 = np.zeros(confusion.shape[0])
    for c in range(confusion.shape[0]):
        pr = pred_totals[c] + true_totals[c]
        f1[c] = 2.0 * tp[c] / pr if pr > 0 else 0.0
    macro = float(f1.mean())
    support = true_totals / true_totals.sum()
    weighted = float((f1 * support).sum())
    return macro, weighted


class EvalBuffer:
    """Accumulates (true label, score row) pairs during an evaluation pass."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self._labels: list[int] = []
        self._scores: list[np.ndarray] = []

    def append(self, true_label: int, scores) -> None:
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (self.num_classes,):
            raise UndefinedMetricError(
                f"score row must have {self.num_classes} entries, got {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise UndefinedMetricError("score rows must be finite")
        if not 0 <= true_label < self.num_classes:
            raise UndefinedMetricError(f"label {true_label} outside [0, {self.num_classes})")
        self._labels.append(int(true_label))
        self._scores.append(scores)

    def extend(self, labels, score_rows) -> None:
        for lab, row in zip(labels, score_rows):
            self.append(int(lab), row)

    def __len__(self):
        return len(self._labels)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self._labels, dtype=np.int64)

    @property
    def scores(self) -> np.ndarray:
        return np.asarray(self._scores, dtype=np.float64)


@dataclass
class MetricsReport:
    """Metric values plus reasons for any that could not be computed."""

    num_classes: int
    n_samples: int
    acc: float | None = None
    auc: float | None = None
    kappa_quadratic: float | None = None
    f1_macro: float | None = None
    f1_weighted: float | None = None
    confusion: list = field(default_factory=list)
    absent: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "num_classes": self.num_classes,
            "n_samples": self.n_samples,
            "acc": self.acc,
            "auc": self.auc,
            "kappa_quadratic": self.kappa_quadratic,
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "confusion": self.confusion,
            "absent": self.absent,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"samples: {self.n_samples}", f"classes: {self.num_classes}"]
        for key in ("acc", "auc", "kappa_quadratic", "f1_macro", "f1_weighted"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key}: {val:.6f}")
            elif key in self.absent:
                lines.append(f"{key}: absent ({self.absent[key]})")
        lines.append("confusion:")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{v:6d}" for v in row))
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def build_report(buffer: EvalBuffer, task: str = "multiclass") -> MetricsReport:
    """Compute every metric the task schema asks for.

    Binary tasks omit the quadratic kappa (an ordinal-grading metric);
    every metric that cannot be computed is reported absent with a reason.
    """
    labels = buffer.labels
    scores = buffer.scores
    k = buffer.num_classes
    preds = scores.argmax(axis=1)
    report = MetricsReport(num_classes=k, n_samples=len(buffer))
    report.notes.append("auc aggregation: macro one-vs-rest over classes present in truth")

    cm = confusion_matrix(labels, preds, k)
    report.confusion = cm.tolist()
    report.acc = accuracy(cm)
    report.f1_macro, report.f1_weighted = f1_scores(cm)

    try:
        if k == 2:
            report.auc = auc_binary(scores[:, 1], labels)
        else:
            report.auc = auc_multiclass(scores, labels)
    except UndefinedMetricError as err:
        report.absent["auc"] = str(err)

    if task == "binary" or k == 2:
        report.absent["kappa_quadratic"] = "not part of the binary-task schema"
    else:
        try:
            report.kappa_quadratic = kappa_quadratic(labels, preds, k)
        except UndefinedMetricError as err:
            report.absent["kappa_quadratic"] = str(err)
    return report
