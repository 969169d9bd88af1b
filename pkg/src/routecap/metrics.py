"""Classification metrics: k-class accuracy, binary/averaged F1, multilabel per-label scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import f1_score

from .exceptions import ContractError, DimensionError

F1_AVERAGES = ("weighted", "macro")


@dataclass
class EvalResult:
    metrics: dict[str, float]
    n: int
    confusion: list[list[int]] = field(default_factory=list)
    per_label: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"n": self.n, "metrics": self.metrics, "confusion": self.confusion, "per_label": self.per_label}


def _pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match truth shape {true.shape}")
    return pred, true


def acc_k(pred, true, k: int) -> float:
    pred, true = _pair(pred, true)
    if pred.size == 0:
        raise ContractError("accuracy of an empty prediction set is undefined")
    for name, arr in (("prediction", pred), ("truth", true)):
        if np.any((arr < 0) | (arr >= k)):
            raise ContractError(f"{name} classes must lie in [0, {k})")
    return float(np.mean(pred == true))


def precision_recall(pred, true) -> tuple[float, float]:
    pred, true = _pair(pred, true)
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def f1_binary(pred, true) -> float:
    """Binary F1 of the positive class; 0 when precision + recall is 0."""
    pred, true = _pair(pred, true)
    return float(f1_score(true, pred, labels=[1], average="binary", zero_division=0.0))


def f1_multiclass(pred, true, n_classes: int, average: str = "weighted") -> float:
    """Per-class one-vs-rest F1 averaged by support (``weighted``) or uniformly (``macro``)."""
    if average not in F1_AVERAGES:
        raise ContractError(f"f1 average must be one of {F1_AVERAGES}, got {average!r}")
    pred, true = _pair(pred, true)
    return float(f1_score(true, pred, labels=list(range(n_classes)), average=average, zero_division=0.0))


def confusion_matrix(pred, true, n_classes: int) -> list[list[int]]:
    pred, true = _pair(pred, true)
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (true.astype(np.int64), pred.astype(np.int64)), 1)
    return m.tolist()


def multilabel_eval(pred, true) -> dict[str, list[float]]:
    """Column-wise accuracy and binary F1 for (n, J) 0/1 matrices."""
    pred, true = _pair(pred, true)
    if pred.ndim != 2:
        raise DimensionError(f"multilabel predictions must be (n, J), got shape {pred.shape}")
    acc = [float(np.mean(pred[:, j] == true[:, j])) for j in range(pred.shape[1])]
    f1 = [f1_binary(pred[:, j], true[:, j]) for j in range(pred.shape[1])]
    return {"accuracy": acc, "f1": f1}
