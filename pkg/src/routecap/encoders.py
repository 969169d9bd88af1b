"""Pooled-affine encoders producing the seven explanatory features.

Each index set (a, v, t, av, vt, ta, avt) owns one affine map from the
concatenated time-pooled inputs of its modalities to ``d_f + 1`` outputs.
The first ``d_f`` outputs pass through tanh to give the feature vector; the
last passes through a sigmoid to give the activation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import Tensor, concat, dropout, sigmoid, stack, tanh
from .exceptions import ContractError, DimensionError

MODALITIES = ("a", "v", "t")
FEATURES = ("a", "v", "t", "av", "vt", "ta", "avt")


def modalities_of(feature: str) -> tuple[str, ...]:
    if feature not in FEATURES:
        raise ContractError(f"unknown feature index set {feature!r}; expected one of {FEATURES}")
    return tuple(feature)


def pool(frames) -> np.ndarray:
    """Mean over the time axis of a ``T x d`` frame matrix."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"expected a non-empty T x d frame matrix, got shape {x.shape}")
    return x.mean(axis=0)


@dataclass
class FeatureSet:
    """Features ``f`` (K x d_f) and activations ``p`` (K,) for one sample."""

    names: tuple[str, ...]
    f: np.ndarray
    p: np.ndarray

    def __getitem__(self, name: str) -> tuple[np.ndarray, float]:
        k = self.names.index(name)
        return self.f[k], float(self.p[k])


class EncoderParams:
    """One projection matrix and bias per feature, each producing ``d_f + 1`` outputs."""

    def __init__(self, weights: Mapping[str, Tensor], biases: Mapping[str, Tensor], dims: Mapping[str, int], d_f: int):
        self.weights = dict(weights)
        self.biases = dict(biases)
        self.dims = dict(dims)
        self.d_f = d_f
        for name, w in self.weights.items():
            expected = (self.input_width(name), d_f + 1)
            if w.shape != expected:
                raise DimensionError(f"encoder {name!r} weight has shape {w.shape}, expected {expected}")
            if self.biases[name].shape != (d_f + 1,):
                raise DimensionError(f"encoder {name!r} bias has shape {self.biases[name].shape}, expected {(d_f + 1,)}")

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(self.weights)

    def input_width(self, feature: str) -> int:
        return sum(self.dims[m] for m in modalities_of(feature))

    @classmethod
    def init(cls, dims: Mapping[str, int], d_f: int, rng: np.random.Generator,
             features: tuple[str, ...] = FEATURES) -> EncoderParams:
        """Uniform init in +-1/sqrt(fan_in), features drawn in canonical order."""
        weights, biases = {}, {}
        for name in features:
            fan_in = sum(dims[m] for m in modalities_of(name))
            bound = 1.0 / np.sqrt(fan_in)
            weights[name] = Tensor(rng.uniform(-bound, bound, (fan_in, d_f + 1)), requires_grad=True)
            biases[name] = Tensor(rng.uniform(-bound, bound, d_f + 1), requires_grad=True)
        return cls(weights, biases, dims, d_f)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for name in self.weights:
            out[f"enc.{name}.weight"] = self.weights[name]
            out[f"enc.{name}.bias"] = self.biases[name]
        return out


def encode_one(feature: str, pooled: Mapping[str, object], params: EncoderParams,
               training: bool = False, rng: np.random.Generator | None = None,
               dropout_rate: float = 0.0) -> tuple[Tensor, Tensor]:
    """Encode one index set.

    ``pooled`` maps modality tags to pooled inputs of shape ``(d_m,)`` or
    ``(batch, d_m)``. Returns ``(f, p)`` with shapes ``(..., d_f)`` and ``(...,)``.
    """
    parts = [pooled[m] if isinstance(pooled[m], Tensor) else Tensor(pooled[m]) for m in modalities_of(feature)]
    x = concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    w, b = params.weights[feature], params.biases[feature]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"encoder {feature!r} expects input width {w.shape[0]}, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    h = x @ w + b
    d_f = params.d_f
    f = tanh(dropout(h[:, :d_f], dropout_rate, training, rng))
    p = sigmoid(h[:, d_f])
    if squeeze:
        return f.reshape(d_f), p.reshape(())
    return f, p


def encode_batch(pooled: Mapping[str, object], params: EncoderParams, training: bool = False,
                 rng: np.random.Generator | None = None, dropout_rate: float = 0.0) -> tuple[Tensor, Tensor]:
    """Encode every configured feature: returns ``f`` (B, K, d_f) and ``p`` (B, K)."""
    fs, ps = [], []
    for name in params.features:
        f, p = encode_one(name, pooled, params, training, rng, dropout_rate)
        if f.ndim == 1:
            f, p = f.reshape(1, -1), p.reshape(1)
        fs.append(f)
        ps.append(p)
    return stack(fs, axis=1), stack(ps, axis=1)


def encode_all(x_a, x_v, x_t, params: EncoderParams, training: bool = False,
               rng: np.random.Generator | None = None, dropout_rate: float = 0.0) -> FeatureSet:
    """Pool three raw ``T x d`` sequences and encode every feature for one sample."""
    pooled = {"a": pool(x_a), "v": pool(x_v), "t": pool(x_t)}
    for m in MODALITIES:
        if pooled[m].shape[0] != params.dims[m]:
            raise DimensionError(f"modality {m!r} frames have width {pooled[m].shape[0]}, expected {params.dims[m]}")
    f, p = encode_batch(pooled, params, training, rng, dropout_rate)
    return FeatureSet(params.features, f.data[0].copy(), p.data[0].copy())
