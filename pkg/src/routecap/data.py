"""Dataset files, label transforms and planted synthetic data.

A dataset is a JSON-lines file with one sample per line::

    {"id": "s0", "a": [[...], ...], "v": [[...]], "t": [[...]], "label": 1}

and a sibling manifest ``<stem>.manifest.json`` declaring the task, label
count, label kind and per-modality frame widths.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import FEATURES, MODALITIES
from .exceptions import DataParseError, ValidationError

LABEL_KINDS = ("class", "sentiment", "emotion", "multilabel")
N_EMOTIONS = 6


@dataclass
class Sample:
    id: str
    a: np.ndarray
    v: np.ndarray
    t: np.ndarray
    label: object

    def modality(self, m: str) -> np.ndarray:
        return getattr(self, m)

    def to_record(self) -> dict:
        return {"id": self.id, "a": self.a.tolist(), "v": self.v.tolist(), "t": self.t.tolist(), "label": self.label}


@dataclass
class DatasetManifest:
    task: str
    n_labels: int
    dims: dict
    label_kind: str = "class"
    splits: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.task not in ("multiclass", "multilabel"):
            raise ValidationError(f"manifest task must be 'multiclass' or 'multilabel', got {self.task!r}")
        if self.label_kind not in LABEL_KINDS:
            raise ValidationError(f"manifest label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}")
        if int(self.n_labels) < 2:
            raise ValidationError(f"manifest n_labels must be >= 2, got {self.n_labels}")
        missing = [m for m in MODALITIES if m not in self.dims]
        if missing:
            raise ValidationError(f"manifest dims missing modalities {missing}")
        self.dims = {m: int(self.dims[m]) for m in MODALITIES}
        if any(d < 1 for d in self.dims.values()):
            raise ValidationError(f"manifest dims must be positive, got {self.dims}")
        self.n_labels = int(self.n_labels)
        expected_task = "multiclass" if self.label_kind in ("class", "sentiment") else "multilabel"
        if self.task != expected_task:
            raise ValidationError(f"label_kind {self.label_kind!r} needs task {expected_task!r}, got {self.task!r}")
        if self.label_kind == "sentiment" and self.n_labels != 7:
            raise ValidationError(f"sentiment datasets have 7 classes, manifest says {self.n_labels}")

    def to_dict(self) -> dict:
        return asdict(self)


def manifest_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def read_manifest(path) -> DatasetManifest:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataParseError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        return DatasetManifest(**raw)
    except TypeError as exc:
        raise ValidationError(f"manifest {path}: {exc}") from exc


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


# -- label transforms -----------------------------------------------------

def emotion_label_transform(scores: Sequence[float]) -> list[int]:
    """An emotion is present iff its score is strictly positive."""
    return [1 if s > 0 else 0 for s in scores]


def sentiment_class_transform(score: int) -> tuple[int, int]:
    """Map an integer sentiment in [-3, 3] to (class index 0..6, binary label).

    The binary label is 0 for negative scores and 1 otherwise; a score of 0
    counts as non-negative.
    """
    if isinstance(score, bool) or int(score) != score or not -3 <= score <= 3:
        raise ValidationError(f"sentiment score must be an integer in [-3, 3], got {score!r}")
    score = int(score)
    return score + 3, int(score >= 0)


def sentiment_binary_from_class(classes) -> np.ndarray:
    return (np.asarray(classes) >= 3).astype(np.int64)


def _check_label(label, manifest: DatasetManifest, where: str) -> None:
    kind, J = manifest.label_kind, manifest.n_labels
    if kind == "class":
        if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < J:
            raise ValidationError(f"{where}: field 'label' must be a class index in [0, {J}), got {label!r}")
    elif kind == "sentiment":
        if isinstance(label, bool) or not isinstance(label, int) or not -3 <= label <= 3:
            raise ValidationError(f"{where}: field 'label' must be an integer sentiment in [-3, 3], got {label!r}")
    elif kind == "emotion":
        if not isinstance(label, list) or len(label) != J or not all(
                isinstance(s, (int, float)) and math.isfinite(s) and s >= 0 for s in label):
            raise ValidationError(f"{where}: field 'label' must be {J} non-negative emotion scores, got {label!r}")
    elif kind == "multilabel":
        if not isinstance(label, list) or len(label) != J or any(s not in (0, 1) for s in label):
            raise ValidationError(f"{where}: field 'label' must be a {J}-length 0/1 list, got {label!r}")


def targets(samples: Sequence[Sample], manifest: DatasetManifest) -> np.ndarray:
    """Training targets: class indices (N,) or a 0/1 matrix (N, J)."""
    kind = manifest.label_kind
    if kind == "class":
        return np.array([s.label for s in samples], dtype=np.int64)
    if kind == "sentiment":
        return np.array([sentiment_class_transform(s.label)[0] for s in samples], dtype=np.int64)
    if kind == "emotion":
        return np.array([emotion_label_transform(s.label) for s in samples], dtype=np.int64).reshape(-1, manifest.n_labels)
    return np.array([s.label for s in samples], dtype=np.int64).reshape(-1, manifest.n_labels)


# -- JSONL I/O ------------------------------------------------------------

def _frames(value, name: str, width: int, where: str) -> np.ndarray:
    try:
        x = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: field {name!r} is not a numeric frame matrix") from exc
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError(f"{where}: field {name!r} must be a non-empty list of frames, got shape {x.shape}")
    if x.shape[1] != width:
        raise ValidationError(f"{where}: field {name!r} has frame width d_{name}={x.shape[1]}, manifest says {width}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{where}: field {name!r} contains non-finite values")
    return x


def parse_record(record, manifest: DatasetManifest, where: str = "record") -> Sample:
    if not isinstance(record, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    missing = [k for k in ("id", "a", "v", "t", "label") if k not in record]
    if missing:
        raise ValidationError(f"{where}: missing fields {missing}")
    frames = {m: _frames(record[m], m, manifest.dims[m], where) for m in MODALITIES}
    _check_label(record["label"], manifest, where)
    return Sample(id=str(record["id"]), label=record["label"], **frames)


def load_dataset(path, manifest: DatasetManifest | None = None) -> list[Sample]:
    """Parse a JSONL dataset, validating every record against the manifest."""
    path = Path(path)
    if manifest is None:
        manifest = read_manifest(manifest_path_for(path))
    samples = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataParseError(f"malformed JSON: {exc.msg}", line=lineno) from exc
            samples.append(parse_record(record, manifest, where=f"line {lineno}"))
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate sample ids")
    return samples


def write_dataset(samples: Iterable[Sample], path) -> None:
    with Path(path).open("w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def pool_samples(samples: Sequence[Sample], dims: dict | None = None) -> dict[str, np.ndarray]:
    """Time-mean of every modality, stacked into (N, d_m) arrays."""
    out = {}
    for m in MODALITIES:
        if samples:
            out[m] = np.stack([s.modality(m).mean(axis=0) for s in samples])
        else:
            out[m] = np.zeros((0, dims[m] if dims else 0))
    return out


# -- planted synthetic data -------------------------------------------------

@dataclass
class SyntheticSpec:
    plant: str = "unimodal:a"
    n: int = 1000
    lengths: dict = field(default_factory=lambda: {"a": 8, "v": 8, "t": 8})
    dims: dict = field(default_factory=lambda: {"a": 4, "v": 4, "t": 4})
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.signal_modalities = parse_plant(self.plant)
        if not self.sigma >= 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if self.n < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")
        for m in MODALITIES:
            if self.lengths[m] < 1 or self.dims[m] < 1:
                raise ValidationError(f"lengths and dims must be positive, got {self.lengths}, {self.dims}")


def parse_plant(plant: str) -> tuple[str, ...]:
    """``unimodal:a`` -> ('a',); ``bimodal:av`` -> ('a', 'v'); ``trimodal`` -> ('a', 'v', 't')."""
    kind, _, arg = plant.partition(":")
    if kind == "trimodal" and not arg:
        return MODALITIES
    if kind == "unimodal" and arg in MODALITIES:
        return (arg,)
    if kind == "bimodal" and len(arg) == 2 and set(arg) <= set(MODALITIES) and arg[0] != arg[1]:
        return tuple(m for m in MODALITIES if m in arg)
    raise ValidationError(f"invalid plant {plant!r}; expected unimodal:a|v|t, bimodal:<two of a,v,t> or trimodal")


def signal_features(modalities: Sequence[str]) -> list[str]:
    """Features that see every planted modality."""
    return [f for f in FEATURES if set(modalities) <= set(f)]


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[Sample], DatasetManifest, dict]:
    """Binary dataset whose label is the parity of the signs of the planted channels.

    Channel 0 of every modality is a per-sample offset ``u ~ N(0, 1)`` plus
    per-frame noise of scale sigma, so unplanted modalities carry decoy
    channels with the same distribution; every other channel is pure noise of
    scale sigma. The label is computed from the pooled channel-0 means of the
    planted modalities, so a model that sees them can be exact.
    """
    rng = np.random.default_rng(spec.seed)
    frames = {}
    for m in MODALITIES:
        T, d = spec.lengths[m], spec.dims[m]
        x = spec.sigma * rng.standard_normal((spec.n, T, d))
        x[:, :, 0] += rng.standard_normal((spec.n, 1))
        frames[m] = x
    bits = [(frames[m][:, :, 0].mean(axis=1) > 0).astype(np.int64) for m in spec.signal_modalities]
    labels = np.bitwise_xor.reduce(np.stack(bits), axis=0)
    width = len(str(spec.n - 1))
    samples = [
        Sample(id=f"s{k:0{width}d}", a=frames["a"][k], v=frames["v"][k], t=frames["t"][k], label=int(labels[k]))
        for k in range(spec.n)
    ]
    manifest = DatasetManifest(task="multiclass", n_labels=2, dims=dict(spec.dims), label_kind="class",
                               splits={"train": spec.n}, source=f"synthetic:{spec.plant}:seed={spec.seed}")
    truth = {
        "plant": spec.plant,
        "signal_modalities": list(spec.signal_modalities),
        "signal_features": signal_features(spec.signal_modalities),
        "positive_rate": float(labels.mean()),
    }
    return samples, manifest, truth
