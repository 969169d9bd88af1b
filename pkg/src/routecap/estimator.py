"""scikit-learn compatible front end for multimodal routing."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .encoders import FEATURES
from .exceptions import ContractError, ValidationError
from .interpretation import CIReport, GlobalStats, LocalContribution, build_report, local_contributions
from .model import TrainConfig, contribution_terms
from .routing import DEFAULT_ITERATIONS
from .training import Checkpoint, decide, evaluate, forward_chunks, load_checkpoint, save_checkpoint, train
from .validation import check_multimodal, n_samples


class MultimodalRoutingClassifier(ClassifierMixin, BaseEstimator):
    """Route seven explanatory features to one concept per label and read out logits.

    Parameters
    ----------
    mode : {"routing", "routing-star", "gam"}
        ``routing-star`` is routing with a single iteration; ``gam`` drops the
        routing coefficients and sums activation-weighted readouts.
    iterations : int or None
        Routing iterations; ``None`` means 2 (1 for ``routing-star``).
    task : {"multiclass", "multilabel"}
    n_labels : int or None
        Number of concepts. ``None`` infers it from ``y``.
    features : tuple of str
        Subset of ``("a", "v", "t", "av", "vt", "ta", "avt")`` to encode.

    ``X`` is anything :func:`routecap.validation.check_multimodal` accepts.
    """

    def __init__(self, mode="routing", iterations=None, d_f=64, d_c=64, learning_rate=1e-4,
                 batch_size=32, epochs=10, dropout=0.5, random_state=0, task="multiclass",
                 n_labels=None, features=FEATURES):
        self.mode = mode
        self.iterations = iterations
        self.d_f = d_f
        self.d_c = d_c
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.dropout = dropout
        self.random_state = random_state
        self.task = task
        self.n_labels = n_labels
        self.features = features

    def _resolve_iterations(self) -> int:
        if self.iterations is None:
            return 1 if self.mode == "routing-star" else DEFAULT_ITERATIONS
        return int(self.iterations)

    def _encode_targets(self, y) -> np.ndarray:
        y = np.asarray(y)
        if self.task == "multilabel":
            if y.ndim != 2 or not np.isin(y, (0, 1)).all():
                raise ValidationError("multilabel targets must be an (N, J) 0/1 matrix")
            self.classes_ = np.arange(y.shape[1])
            return y.astype(np.int64)
        if y.ndim != 1:
            raise ValidationError(f"multiclass targets must be 1-D, got shape {y.shape}")
        self.classes_ = np.arange(self.n_labels) if self.n_labels is not None else np.unique(y)
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValidationError(f"targets contain labels outside {self.classes_.tolist()}")
        return idx

    def fit(self, X, y):
        pooled = check_multimodal(X)
        targets = self._encode_targets(y)
        J = len(self.classes_) if self.n_labels is None else int(self.n_labels)
        if J < 2 and self.task == "multiclass":
            raise ValidationError("need at least two classes")
        config = TrainConfig(
            n_labels=J, dims={m: a.shape[1] for m, a in pooled.items()}, task=self.task, mode=self.mode,
            iterations=self._resolve_iterations(), d_f=self.d_f, d_c=self.d_c,
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            dropout=self.dropout, seed=self.random_state, features=tuple(self.features),
        )
        self.checkpoint_, self.history_ = train(config, pooled, targets)
        self.model_ = self.checkpoint_.model()
        return self

    # -- prediction ---------------------------------------------------------
    def _forward(self, X):
        check_is_fitted(self, "model_")
        pooled = check_multimodal(X, self.model_.config.dims)
        return pooled, list(forward_chunks(self.model_, pooled))

    def decision_function(self, X) -> np.ndarray:
        _, outs = self._forward(X)
        return np.concatenate([out.logits.data for _, out in outs])

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        if self.model_.config.task == "multiclass":
            e = np.exp(z - z.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, X) -> np.ndarray:
        decided = decide(self.decision_function(X), self.model_.config.task)
        return self.classes_[decided] if self.model_.config.task == "multiclass" else decided

    def transform(self, X) -> np.ndarray:
        """Assignment weights ``p_i * r_ij`` flattened to (N, K * J)."""
        _, outs = self._forward(X)
        if self.model_.config.mode == "gam":
            raise ContractError("GAM mode has no routing coefficients")
        pr = np.concatenate([out.p.data[..., None] * out.r.data for _, out in outs])
        return pr.reshape(len(pr), -1)

    # -- interpretation -----------------------------------------------------
    def explain_local(self, X, y=None, ids=None) -> list[LocalContribution]:
        pooled, outs = self._forward(X)
        n = n_samples(pooled)
        ids = [str(k) for k in range(n)] if ids is None else list(ids)
        records = []
        for sl, out in outs:
            if out.state is None:
                raise ContractError("local contributions need routing; this model was fit in GAM mode")
            scores = (out.hhat.data * self.model_.readout.o.data).sum(axis=-1)
            pred = decide(out.logits.data, self.model_.config.task)
            for b, k in enumerate(range(sl.start, sl.stop)):
                true = None if y is None else np.asarray(y)[k].tolist()
                records.append(local_contributions(
                    ids[k], self.model_.config.features, out.p.data[b], out.r.data[b], scores[b],
                    out.logits.data[b], predicted=pred[b].tolist(), true=true))
        return records

    def global_stats(self, X, y, group_by: str = "none") -> GlobalStats:
        check_is_fitted(self, "model_")
        pooled = check_multimodal(X, self.model_.config.dims)
        targets = self._targets_for(y)
        stats = GlobalStats(list(self.model_.config.features), self.model_.config.n_labels, group_by)
        evaluate(self.model_, pooled, targets, stats=stats)
        return stats

    def global_report(self, X, y, quantity: str = "r", group_by: str = "none", level: float = 0.95,
                      label_names=None) -> CIReport:
        stats = self.global_stats(X, y, group_by)
        if label_names is None:
            label_names = [str(c) for c in self.classes_]
        return build_report(stats, quantity, level, label_names)

    def _targets_for(self, y) -> np.ndarray:
        y = np.asarray(y)
        if self.model_.config.task == "multilabel":
            return y.astype(np.int64)
        return np.searchsorted(self.classes_, y)

    def contribution_terms(self, X) -> np.ndarray:
        _, outs = self._forward(X)
        return np.concatenate([contribution_terms(out, self.model_.readout) for _, out in outs])

    # -- persistence --------------------------------------------------------
    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint | str) -> MultimodalRoutingClassifier:
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        c = ckpt.config
        est = cls(mode=c.mode, iterations=c.iterations, d_f=c.d_f, d_c=c.d_c, learning_rate=c.learning_rate,
                  batch_size=c.batch_size, epochs=c.epochs, dropout=c.dropout, random_state=c.seed,
                  task=c.task, n_labels=c.n_labels, features=c.features)
        est.checkpoint_ = ckpt
        est.model_ = ckpt.model()
        est.classes_ = np.arange(c.n_labels)
        return est
