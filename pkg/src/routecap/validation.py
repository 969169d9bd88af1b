"""Input checks that turn user-facing containers into pooled (N, d_m) arrays."""
from __future__ import annotations

from typing import Mapping

import numpy as np
from sklearn.utils.validation import check_array

from .data import Sample
from .encoders import MODALITIES, pool
from .exceptions import DimensionError, ValidationError


def check_multimodal(X, dims: Mapping[str, int] | None = None) -> dict[str, np.ndarray]:
    """Accept pooled arrays, raw samples or (x_a, x_v, x_t) triples.

    ``X`` may be a mapping ``{"a": (N, d_a), "v": ..., "t": ...}`` of
    already-pooled inputs, a sequence of :class:`Sample`, or a sequence of
    triples of ``T x d`` frame matrices. Returns pooled float64 arrays.
    """
    if isinstance(X, Mapping):
        missing = [m for m in MODALITIES if m not in X]
        if missing:
            raise ValidationError(f"pooled input is missing modalities {missing}")
        try:
            pooled = {m: check_array(X[m], dtype=np.float64, ensure_min_samples=0) for m in MODALITIES}
        except ValueError as exc:
            raise ValidationError(f"invalid pooled input: {exc}") from exc
    else:
        X = list(X)
        if not X:
            raise ValidationError("got an empty collection of samples")
        rows: dict[str, list] = {m: [] for m in MODALITIES}
        for k, item in enumerate(X):
            if isinstance(item, Sample):
                seqs = (item.a, item.v, item.t)
            elif isinstance(item, (tuple, list)) and len(item) == 3:
                seqs = item
            else:
                raise ValidationError(f"sample {k}: expected a Sample or an (x_a, x_v, x_t) triple")
            for m, seq in zip(MODALITIES, seqs):
                rows[m].append(pool(seq))
        try:
            pooled = {m: np.stack(rows[m]) for m in MODALITIES}
        except ValueError as exc:
            raise DimensionError(f"samples disagree on frame widths: {exc}") from exc
    sizes = {pooled[m].shape[0] for m in MODALITIES}
    if len(sizes) != 1:
        raise DimensionError(f"modalities disagree on the number of samples: {sizes}")
    for m in MODALITIES:
        if not np.all(np.isfinite(pooled[m])):
            raise ValidationError(f"modality {m!r} contains non-finite values")
        if dims is not None and pooled[m].shape[1] != dims[m]:
            raise DimensionError(f"modality {m!r} has width {pooled[m].shape[1]}, expected {dims[m]}")
    return pooled


def n_samples(pooled: Mapping[str, np.ndarray]) -> int:
    return pooled[MODALITIES[0]].shape[0]
