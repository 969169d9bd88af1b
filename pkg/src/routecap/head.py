"""Linear readout from concepts to logits, probabilities and losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, binary_cross_entropy, cross_entropy, sigmoid, softmax
from .exceptions import ContractError, DimensionError
from .routing import project

TASKS = ("multiclass", "multilabel")


class ReadoutWeights:
    """One readout vector per concept, stored as ``o`` of shape (J, d_c)."""

    def __init__(self, o):
        self.o = o if isinstance(o, Tensor) else Tensor(o, requires_grad=True)
        if self.o.ndim != 2:
            raise DimensionError(f"readout weights must be (J, d_c), got shape {self.o.shape}")

    @classmethod
    def init(cls, n_concepts: int, d_c: int, rng: np.random.Generator) -> ReadoutWeights:
        bound = 1.0 / np.sqrt(d_c)
        return cls(Tensor(rng.uniform(-bound, bound, (n_concepts, d_c)), requires_grad=True))


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    task: str


def _o(o) -> Tensor:
    return o.o if isinstance(o, ReadoutWeights) else as_tensor(o)


def logits(c, o) -> Tensor:
    """``logit[..., j] = <o[j], c[..., j]>``."""
    c, o = as_tensor(c), _o(o)
    if c.shape[-2:] != o.shape:
        raise DimensionError(f"concepts {c.shape} and readout {o.shape} disagree on (J, d_c)")
    return (c * o).sum(axis=-1)


def readout_scores(hhat, o) -> Tensor:
    """Per-feature readout ``<o[j], hhat[..., i, j]>`` of shape (..., K, J)."""
    return (as_tensor(hhat) * _o(o)).sum(axis=-1)


def gam_logits(f, p, W, o) -> Tensor:
    """Activation-weighted sum of per-feature readouts, with no routing coefficients."""
    scores = readout_scores(project(f, W), o)
    p = as_tensor(p)
    return (p.reshape(p.shape + (1,)) * scores).sum(axis=-2)


def predict_proba(z, task: str) -> Tensor:
    if task == "multiclass":
        return softmax(z, axis=-1)
    if task == "multilabel":
        return sigmoid(z)
    raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")


def predict(z, task: str) -> Prediction:
    z = as_tensor(z)
    return Prediction(logits=z.data.copy(), probabilities=predict_proba(z, task).data.copy(), task=task)


def loss(z, y, task: str) -> Tensor:
    """Cross-entropy for multiclass (integer labels), mean BCE for multilabel (0/1 matrix)."""
    if task == "multiclass":
        return cross_entropy(z, y)
    if task == "multilabel":
        return binary_cross_entropy(z, y)
    raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
