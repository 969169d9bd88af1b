"""Iterative routing between explanatory features and per-label concepts.

Shapes, with optional leading batch axes ``...``:

    features      f     (..., K, d_f)
    activations   p     (..., K)
    weights       W     (K, J, d_f, d_c)
    projections   hhat  (..., K, J, d_c)
    similarities  s     (..., K, J)
    coefficients  r     (..., K, J)    rows sum to one over J
    concepts      c     (..., J, d_c)
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, softmax
from .exceptions import ContractError, DimensionError

DEFAULT_ITERATIONS = 2

# Instrumentation: number of times each routing step ran in this process.
call_counts: Counter = Counter()


class RoutingWeights:
    """The trainable projection tensor ``W`` of shape (K, J, d_f, d_c)."""

    def __init__(self, W):
        self.W = W if isinstance(W, Tensor) else Tensor(W, requires_grad=True)
        if self.W.ndim != 4:
            raise DimensionError(f"routing weights must be 4-D (K, J, d_f, d_c), got shape {self.W.shape}")

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    @property
    def n_concepts(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, n_features: int, n_concepts: int, d_f: int, d_c: int, rng: np.random.Generator) -> RoutingWeights:
        bound = 1.0 / np.sqrt(d_f)
        return cls(Tensor(rng.uniform(-bound, bound, (n_features, n_concepts, d_f, d_c)), requires_grad=True))


@dataclass
class RoutingState:
    hhat: Tensor
    s: Tensor
    r: Tensor
    c: Tensor
    iterations: int
    r_history: list[Tensor] = field(default_factory=list)


def project(f, W) -> Tensor:
    """``hhat[..., i, j, :] = f[..., i, :] @ W[i, j]``."""
    f = as_tensor(f)
    W = W.W if isinstance(W, RoutingWeights) else as_tensor(W)
    K, J, d_f, d_c = W.shape
    if f.ndim < 2 or f.shape[-2:] != (K, d_f):
        raise DimensionError(f"features of shape {f.shape} do not match routing weights {W.shape}")
    lead = f.shape[:-2]
    out = f.reshape(lead + (K, 1, 1, d_f)) @ W
    return out.reshape(lead + (K, J, d_c))


def init_concepts(hhat, p) -> Tensor:
    """Concepts from uniform coefficients ``r = 1/J``."""
    hhat, p = as_tensor(hhat), as_tensor(p)
    J = hhat.shape[-2]
    weights = p.reshape(p.shape + (1, 1)).scale(1.0 / J)
    return (weights * hhat).sum(axis=-3)


def similarities(hhat, c) -> Tensor:
    hhat, c = as_tensor(hhat), as_tensor(c)
    if hhat.shape[-2:] != c.shape[-2:]:
        raise DimensionError(f"projections {hhat.shape} and concepts {c.shape} disagree on (J, d_c)")
    c = c.reshape(c.shape[:-2] + (1,) + c.shape[-2:])
    return (hhat * c).sum(axis=-1)


def routing_adjust(hhat, c) -> tuple[Tensor, Tensor]:
    """Dot-product agreement, softmax-normalised over concepts. Returns ``(s, r)``."""
    call_counts["routing_adjust"] += 1
    s = similarities(hhat, c)
    return s, softmax(s, axis=-1)


def concept_update(hhat, p, r) -> Tensor:
    """``c[j] = sum_i p[i] * r[i, j] * hhat[i, j]``."""
    call_counts["concept_update"] += 1
    hhat, p, r = as_tensor(hhat), as_tensor(p), as_tensor(r)
    weights = p.reshape(p.shape + (1,)) * r
    return (weights.reshape(weights.shape + (1,)) * hhat).sum(axis=-3)


def route(f, p, W, iterations: int = DEFAULT_ITERATIONS) -> RoutingState:
    """Project, initialise concepts uniformly, then alternate adjust/update ``iterations`` times."""
    if iterations < 1:
        raise ContractError(f"routing needs at least one iteration, got {iterations}")
    hhat = project(f, W)
    p = as_tensor(p)
    c = init_concepts(hhat, p)
    history = []
    s = r = None
    for _ in range(iterations):
        s, r = routing_adjust(hhat, c)
        c = concept_update(hhat, p, r)
        history.append(r)
    return RoutingState(hhat=hhat, s=s, r=r, c=c, iterations=iterations, r_history=history)
