"""Training loop, evaluation and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic b"RCAPCKPT"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: format_version, config, epoch, rng_state,
              tensors [{name, shape, offset, count}], payload_bytes
    payload   float64 little-endian, tensors back to back
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .autodiff import Adam
from .data import sentiment_binary_from_class
from .exceptions import CheckpointError, ContractError, DimensionError, NumericalError
from .head import loss as loss_fn
from .head import predict_proba
from .interpretation import GlobalStats
from .metrics import EvalResult, acc_k, confusion_matrix, f1_binary, f1_multiclass, multilabel_eval
from .model import ForwardResult, Model, TrainConfig, check_decomposition
from .encoders import MODALITIES

logger = logging.getLogger(__name__)

MAGIC = b"RCAPCKPT"
FORMAT_VERSION = 1
EVAL_CHUNK = 512


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    rng_state: dict
    epoch: int = 0
    format_version: int = FORMAT_VERSION

    def model(self) -> Model:
        return Model.from_state(self.config, self.params)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        if not self.rows:
            return "epoch,loss\n"
        keys = list(self.rows[0])
        lines = [",".join(keys)]
        lines += [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) for r in self.rows]
        return "\n".join(lines) + "\n"


def _n_samples(pooled: Mapping[str, np.ndarray]) -> int:
    sizes = {np.asarray(pooled[m]).shape[0] for m in MODALITIES}
    if len(sizes) != 1:
        raise DimensionError(f"modalities disagree on the number of samples: {sizes}")
    return sizes.pop()


def check_compatible(config: TrainConfig, pooled: Mapping[str, np.ndarray], y: np.ndarray) -> int:
    n = _n_samples(pooled)
    for m in MODALITIES:
        x = np.asarray(pooled[m])
        if x.ndim != 2 or x.shape[1] != config.dims[m]:
            raise DimensionError(f"modality {m!r} has width {x.shape[1:]}, config expects {config.dims[m]}")
    y = np.asarray(y)
    if config.task == "multiclass":
        if y.shape != (n,):
            raise DimensionError(f"multiclass targets must have shape ({n},), got {y.shape}")
        if n and (y.min() < 0 or y.max() >= config.n_labels):
            raise ContractError(f"class targets must lie in [0, {config.n_labels})")
    elif y.shape != (n, config.n_labels):
        raise DimensionError(f"multilabel targets must have shape ({n}, {config.n_labels}), got {y.shape}")
    return n


def _take(pooled, idx) -> dict[str, np.ndarray]:
    return {m: np.asarray(pooled[m])[idx] for m in MODALITIES}


def forward_chunks(model: Model, pooled: Mapping[str, np.ndarray], chunk: int = EVAL_CHUNK):
    """Eval-mode forward passes over consecutive slices; yields (slice, ForwardResult)."""
    n = _n_samples(pooled)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        yield sl, model.forward(_take(pooled, sl), training=False)


def decide(logits: np.ndarray, task: str) -> np.ndarray:
    """Class indices for multiclass; 0/1 matrix at probability 0.5 for multilabel."""
    if task == "multiclass":
        return np.argmax(logits, axis=-1)
    return (predict_proba(logits, task).data >= 0.5).astype(np.int64)


def train(config: TrainConfig, pooled: Mapping[str, np.ndarray], y, *,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[Checkpoint, TrainLog]:
    """Fit a fresh model. Deterministic given ``config.seed`` and the data."""
    y = np.asarray(y)
    n = check_compatible(config, pooled, y)
    rng = np.random.default_rng(config.seed)
    model = Model.init(config, rng)
    params = list(model.parameters().values())
    opt = Adam(params, lr=config.learning_rate)
    log = TrainLog()
    if config.epochs > 0 and n == 0:
        raise ContractError("cannot train on an empty dataset")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out = model.forward(_take(pooled, idx), training=True, rng=rng)
            batch_loss = loss_fn(out.logits, y[idx], config.task)
            value = batch_loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch starting at {start}")
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
            total += value * len(idx)
        result = evaluate(model, pooled, y)
        row = {"epoch": epoch, "loss": total / n, **result.metrics}
        log.rows.append(row)
        logger.info("epoch %d loss %.6f %s", epoch, row["loss"], result.metrics)
        if on_epoch is not None:
            on_epoch(row)
    ckpt = Checkpoint(config=config, params=model.state_dict(), rng_state=rng.bit_generator.state, epoch=config.epochs)
    return ckpt, log


def evaluate(model: Model | Checkpoint, pooled: Mapping[str, np.ndarray], y, *,
             label_kind: str = "class", f1_average: str = "weighted",
             stats: GlobalStats | None = None, verify: bool = True) -> EvalResult:
    """Eval-mode metrics; optionally streams routing quantities into ``stats``."""
    if isinstance(model, Checkpoint):
        model = model.model()
    config = model.config
    y = np.asarray(y)
    n = check_compatible(config, pooled, y)
    if n == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if stats is not None and config.mode == "gam":
        raise ContractError("GAM mode has no routing coefficients to accumulate")
    preds = []
    for sl, out in forward_chunks(model, pooled):
        pred = decide(out.logits.data, config.task)
        preds.append(pred)
        if out.state is not None and verify:
            check_decomposition(out, model.readout)
        if stats is not None:
            stats.add_batch(out.p.data, out.r.data, true=y[sl], predicted=pred)
    pred = np.concatenate(preds)
    return score(pred, y, config, label_kind=label_kind, f1_average=f1_average)


def score(pred: np.ndarray, y: np.ndarray, config: TrainConfig, *, label_kind: str = "class",
          f1_average: str = "weighted") -> EvalResult:
    n, J = len(y), config.n_labels
    if config.task == "multilabel":
        per = multilabel_eval(pred, y)
        metrics = {"accuracy": float(np.mean(per["accuracy"])), "f1": float(np.mean(per["f1"]))}
        return EvalResult(metrics=metrics, n=n, per_label=per)
    metrics = {"accuracy": acc_k(pred, y, J)}
    if label_kind == "sentiment":
        metrics["acc7"] = metrics["accuracy"]
        metrics["acc2"] = float(np.mean(sentiment_binary_from_class(pred) == sentiment_binary_from_class(y)))
        metrics["f1"] = f1_multiclass(pred, y, J, f1_average)
    elif J == 2:
        metrics["f1"] = f1_binary(pred, y)
    else:
        metrics["f1"] = f1_multiclass(pred, y, J, f1_average)
    return EvalResult(metrics=metrics, n=n, confusion=confusion_matrix(pred, y, J))


# -- checkpoint I/O ---------------------------------------------------------

def _header(ckpt: Checkpoint) -> tuple[dict, list[np.ndarray]]:
    tensors, arrays, offset = [], [], 0
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        arrays.append(arr)
        offset += arr.size * 8
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "tensors": tensors,
        "payload_bytes": offset,
    }
    return header, arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header, arrays = _header(ckpt)
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())


def _read_header(fh, path) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a routecap checkpoint (bad magic)")
    raw = fh.read(8)
    if len(raw) != 8:
        raise CheckpointError(f"{path}: truncated before header length")
    (length,) = struct.unpack("<Q", raw)
    blob = fh.read(length)
    if len(blob) != length:
        raise CheckpointError(f"{path}: truncated header ({len(blob)} of {length} bytes)")
    try:
        header = json.loads(blob)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    return header


def read_checkpoint_header(path) -> dict:
    """Header only (config, epoch, tensor table) without reading the payload."""
    with Path(path).open("rb") as fh:
        return _read_header(fh, path)


def load_checkpoint(path) -> Checkpoint:
    with Path(path).open("rb") as fh:
        header = _read_header(fh, path)
        payload = fh.read()
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header declares {header['payload_bytes']}")
    params = {}
    for t in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f8", count=t["count"], offset=t["offset"])
        params[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    config = TrainConfig.from_dict(header["config"])
    ckpt = Checkpoint(config=config, params=params, rng_state=header["rng_state"], epoch=header["epoch"])
    try:
        ckpt.model()
    except (KeyError, DimensionError) as exc:
        raise CheckpointError(f"{path}: tensors do not match the stored config: {exc}") from exc
    return ckpt


def forward_dataset(model: Model, pooled: Mapping[str, np.ndarray]) -> list[tuple[slice, ForwardResult]]:
    return list(forward_chunks(model, pooled))
