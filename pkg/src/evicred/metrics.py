"""Evaluation reports: per-class accuracy, macro F1, ranking AUC, MSE.

AUC is computed from average ranks so tied scores count half, which
matches the pairwise definition exactly.  With only one class present it
is reported as None rather than an arbitrary number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError

__all__ = [
    "MetricReport",
    "classification_report",
    "multiclass_report",
    "regression_report",
    "ranking_auc",
    "macro_f1",
]


@dataclass
class MetricReport:
    """Metrics for one evaluation; fields outside the mode stay None."""

    mode: str
    n: int
    support: list[int] = field(default_factory=list)
    accuracy: float | None = None
    per_class_accuracy: list[float] | None = None
    true_claims_accuracy: float | None = None
    false_claims_accuracy: float | None = None
    macro_f1: float | None = None
    macro_accuracy: float | None = None
    auc: float | None = None
    mse: float | None = None
    rmse: float | None = None

    def to_kv(self) -> dict:
        """Flat dict of the populated fields, for JSON output."""
        out: dict = {"mode": self.mode, "n": self.n}
        if self.support:
            out["support"] = list(self.support)
        for name in ("accuracy", "macro_f1", "macro_accuracy", "auc", "mse", "rmse",
                     "true_claims_accuracy", "false_claims_accuracy"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.per_class_accuracy is not None:
            out["per_class_accuracy"] = list(self.per_class_accuracy)
        return out

    def to_text(self) -> str:
        lines = [f"mode: {self.mode}", f"claims: {self.n}"]
        if self.mode == "classify":
            if self.true_claims_accuracy is not None:
                lines.append(f"true-claims accuracy: {self.true_claims_accuracy:.4f}")
                lines.append(f"false-claims accuracy: {self.false_claims_accuracy:.4f}")
            elif self.per_class_accuracy is not None:
                for i, acc in enumerate(self.per_class_accuracy):
                    lines.append(f"class {i} accuracy: {acc:.4f}")
            lines.append(f"accuracy: {self.accuracy:.4f}")
            lines.append(f"macro F1: {self.macro_f1:.4f}")
            lines.append(f"macro accuracy: {self.macro_accuracy:.4f}")
            lines.append("AUC: undefined" if self.auc is None
                         else f"AUC: {self.auc:.4f}")
        else:
            lines.append(f"MSE: {self.mse:.6f}")
            lines.append(f"RMSE: {self.rmse:.6f}")
        return "\n".join(lines)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks; tied scores share the mean of their rank block."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def ranking_auc(scores, labels) -> float | None:
    """Probability a random positive outranks a random negative, ties half.

    None when either class is absent, which callers must surface instead
    of substituting a default.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _confusion(pred: np.ndarray, true: np.ndarray, classes: int) -> np.ndarray:
    counts = np.zeros((classes, classes), dtype=np.int64)
    for p, t in zip(pred, true):
        counts[t, p] += 1
    return counts


def macro_f1(pred, true, classes: int) -> float:
    """Unweighted mean F1 over all ``classes`` labels.

    A class nobody predicted and nobody holds scores zero, pulling the
    macro average down instead of being skipped.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    counts = _confusion(pred, true, classes)
    scores = []
    for c in range(classes):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def classification_report(scores, labels) -> MetricReport:
    """Binary report from per-claim credibility scores in [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError("scores and labels must be equal-length vectors")
    if len(scores) == 0:
        raise DegenerateInputError("empty evaluation")
    if np.any((scores < 0.0) | (scores > 1.0)):
        raise ContractError("credibility scores must lie in [0, 1]")
    if np.any((labels != 0) & (labels != 1)):
        raise ContractError("binary labels must be 0 or 1")
    pred = (scores >= 0.5).astype(np.int64)
    report = multiclass_report(pred, labels, 2)
    report.auc = ranking_auc(scores, labels)
    report.true_claims_accuracy = report.per_class_accuracy[1]
    report.false_claims_accuracy = report.per_class_accuracy[0]
    return report


def multiclass_report(pred, labels, classes: int) -> MetricReport:
    """Label-level report; per-class accuracy is recall on that class."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape or pred.ndim != 1:
        raise ContractError("predictions and labels must be equal-length vectors")
    if len(pred) == 0:
        raise DegenerateInputError("empty evaluation")
    counts = _confusion(pred, labels, classes)
    support = [int(counts[c, :].sum()) for c in range(classes)]
    per_class = [
        (float(counts[c, c] / support[c]) if support[c] else 0.0)
        for c in range(classes)
    ]
    return MetricReport(
        mode="classify",
        n=len(pred),
        support=support,
        accuracy=float((pred == labels).mean()),
        per_class_accuracy=per_class,
        macro_f1=macro_f1(pred, labels, classes),
        macro_accuracy=float(np.mean(per_class)),
    )


def regression_report(predictions, targets) -> MetricReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 1:
        raise ContractError("predictions and targets must be equal-length vectors")
    if len(predictions) == 0:
        raise DegenerateInputError("empty evaluation")
    errors = predictions - targets
    mse = float(math.fsum(errors * errors) / len(errors))
    return MetricReport(mode="regress", n=len(predictions), mse=mse,
                        rmse=math.sqrt(mse))
