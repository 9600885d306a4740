"""Evaluation metrics: ROC/AUC, accuracy, confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError


def roc_auc(scores, labels):
    """Trapezoidal AUC with thresholds at every unique score.

    Tie handling matches the Mann-Whitney statistic: equal scores contribute
    half credit, so the trapezoid over tie-grouped ROC points equals
    P(score+ > score-) + 0.5 * P(score+ = score-).

    Returns (auc, points) where points are (fpr, tpr, threshold) rows from
    (0, 0) to (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} mismatch")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # group ties: cumulative TP/FP at each distinct-score boundary
    distinct = np.nonzero(np.diff(s))[0]
    boundaries = np.concatenate([distinct, [len(s) - 1]])
    tps = np.cumsum(y == 1)[boundaries]
    fps = np.cumsum(y == 0)[boundaries]
    tpr = np.concatenate([[0.0], tps / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fps / n_neg, [1.0]])
    thresholds = np.concatenate([[np.inf], s[boundaries], [-np.inf]])
    auc = float(np.trapezoid(tpr, fpr))
    points = list(zip(fpr.tolist(), tpr.tolist(), thresholds.tolist()))
    return auc, points


def confusion_and_accuracy(scores, labels, threshold=0.5):
    """2x2 confusion matrix [[TN, FP], [FN, TP]] and accuracy at a threshold.

    ``scores`` are positive-class probabilities; prediction is score >= threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = (scores >= threshold).astype(int)
    tn = int(((pred == 0) & (labels == 0)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    tp = int(((pred == 1) & (labels == 1)).sum())
    confusion = np.array([[tn, fp], [fn, tp]], dtype=np.int64)
    accuracy = (tp + tn) / max(len(labels), 1)
    return confusion, accuracy


@dataclass
class MetricsReport:
    auc: float
    roc_points: list
    accuracy: float
    confusion: np.ndarray

    @staticmethod
    def from_scores(scores, labels, threshold=0.5):
        auc, points = roc_auc(scores, labels)
        confusion, accuracy = confusion_and_accuracy(scores, labels, threshold)
        return MetricsReport(auc, points, accuracy, confusion)

    def to_text(self):
        (tn, fp), (fn, tp) = self.confusion.tolist()
        return (
            f"auc {self.auc:.6f}\n"
            f"accuracy {self.accuracy:.6f}\n"
            f"confusion_tn {tn}\nconfusion_fp {fp}\n"
            f"confusion_fn {fn}\nconfusion_tp {tp}\n"
        )

    def save(self, report_path, roc_path):
        with open(report_path, "w") as fh:
            fh.write(self.to_text())
        with open(roc_path, "w") as fh:
            fh.write("fpr,tpr,threshold\n")
            for fpr, tpr, thr in self.roc_points:
                fh.write(f"{fpr:.10g},{tpr:.10g},{thr:.10g}\n")
