"""The full forward pass: encoders, routing (or the GAM ablation) and readout."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .encoders import FEATURES, MODALITIES, EncoderParams, encode_batch
from .exceptions import ContractError, DimensionError
from .head import TASKS, ReadoutWeights, logits, readout_scores
from .routing import DEFAULT_ITERATIONS, RoutingState, RoutingWeights, project, route

MODES = ("routing", "routing-star", "gam")


@dataclass
class TrainConfig:
    n_labels: int
    dims: dict = field(default_factory=lambda: {"a": 1, "v": 1, "t": 1})
    task: str = "multiclass"
    mode: str = "routing"
    iterations: int = DEFAULT_ITERATIONS
    d_f: int = 64
    d_c: int = 64
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    dropout: float = 0.5
    seed: int = 0
    features: tuple = FEATURES

    def __post_init__(self):
        self.features = tuple(self.features)
        self.dims = {m: int(self.dims[m]) for m in MODALITIES}
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.mode == "routing-star" and self.iterations != 1:
            raise ContractError(f"mode 'routing-star' runs exactly one routing iteration, got iterations={self.iterations}")
        if self.iterations < 1:
            raise ContractError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("n_labels", "d_f", "d_c", "batch_size"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")
        if any(d < 1 for d in self.dims.values()):
            raise ContractError(f"modality dimensions must be positive, got {self.dims}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.features or len(set(self.features)) != len(self.features):
            raise ContractError(f"features must be a non-empty list without repeats, got {self.features}")
        for f in self.features:
            if f not in FEATURES:
                raise ContractError(f"unknown feature {f!r}; expected a subset of {FEATURES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        return cls(**dict(d))


@dataclass
class ForwardResult:
    f: Tensor
    p: Tensor
    hhat: Tensor
    logits: Tensor
    state: RoutingState | None = None

    @property
    def r(self) -> Tensor | None:
        return None if self.state is None else self.state.r


class Model:
    """Parameters for one configuration plus its forward pass."""

    def __init__(self, config: TrainConfig, encoders: EncoderParams, weights: RoutingWeights, readout: ReadoutWeights):
        self.config = config
        self.encoders = encoders
        self.weights = weights
        self.readout = readout
        K, J = len(config.features), config.n_labels
        if weights.W.shape != (K, J, config.d_f, config.d_c):
            raise DimensionError(f"routing weights {weights.W.shape} do not match config {(K, J, config.d_f, config.d_c)}")
        if readout.o.shape != (J, config.d_c):
            raise DimensionError(f"readout weights {readout.o.shape} do not match config {(J, config.d_c)}")

    @classmethod
    def init(cls, config: TrainConfig, rng: np.random.Generator) -> Model:
        enc = EncoderParams.init(config.dims, config.d_f, rng, config.features)
        W = RoutingWeights.init(len(config.features), config.n_labels, config.d_f, config.d_c, rng)
        o = ReadoutWeights.init(config.n_labels, config.d_c, rng)
        return cls(config, enc, W, o)

    def parameters(self) -> dict[str, Tensor]:
        out = self.encoders.tensors()
        out["route.W"] = self.weights.W
        out["head.o"] = self.readout.o
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    @classmethod
    def from_state(cls, config: TrainConfig, state: Mapping[str, np.ndarray]) -> Model:
        weights = {f: Tensor(np.array(state[f"enc.{f}.weight"]), requires_grad=True) for f in config.features}
        biases = {f: Tensor(np.array(state[f"enc.{f}.bias"]), requires_grad=True) for f in config.features}
        enc = EncoderParams(weights, biases, config.dims, config.d_f)
        return cls(config, enc, RoutingWeights(np.array(state["route.W"])), ReadoutWeights(np.array(state["head.o"])))

    def forward(self, pooled: Mapping[str, np.ndarray], training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        """Forward a batch of pooled inputs, ``pooled[m]`` of shape (B, d_m)."""
        for m in MODALITIES:
            x = np.asarray(pooled[m])
            if x.ndim != 2 or x.shape[1] != self.config.dims[m]:
                raise DimensionError(f"pooled modality {m!r} has shape {x.shape}, expected (B, {self.config.dims[m]})")
        f, p = encode_batch(pooled, self.encoders, training, rng, self.config.dropout)
        if self.config.mode == "gam":
            hhat = project(f, self.weights)
            scores = readout_scores(hhat, self.readout)
            z = (p.reshape(p.shape + (1,)) * scores).sum(axis=-2)
            return ForwardResult(f=f, p=p, hhat=hhat, logits=z)
        state = route(f, p, self.weights, self.config.iterations)
        return ForwardResult(f=f, p=p, hhat=state.hhat, logits=logits(state.c, self.readout), state=state)


def contribution_terms(out: ForwardResult, readout: ReadoutWeights) -> np.ndarray:
    """Per-feature logit contributions ``p_i r_ij <o_j, hhat_ij>`` of shape (B, K, J)."""
    if out.state is None:
        raise ContractError("contribution terms need a routing state; GAM mode has none")
    scores = (out.hhat.data * readout.o.data).sum(axis=-1)
    return out.p.data[..., None] * out.r.data * scores


def check_decomposition(out: ForwardResult, readout: ReadoutWeights, tol: float = 1e-6) -> float:
    """Largest deviation between each logit and the sum of its feature contributions."""
    gap = float(np.max(np.abs(contribution_terms(out, readout).sum(axis=-2) - out.logits.data)))
    if gap >= tol:
        raise ContractError(f"logit decomposition off by {gap:.3e} (tolerance {tol:.0e})")
    return gap
