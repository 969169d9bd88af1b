"""Local contribution records and dataset-level confidence intervals.

Three per-sample quantities are tracked: routing coefficients ``r`` (K x J),
activations ``p`` (K) and their product ``pr`` (K x J). Intervals use the
normal approximation to the sample mean and are compared against the
uniform-routing baseline ``1/J``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .exceptions import ContractError, InsufficientDataError

QUANTITIES = ("r", "p", "pr")
GROUP_BY = ("none", "true-label", "predicted-label")
Z_95 = 1.959964
CSV_FIELDS = ("feature", "label", "mean", "lo", "hi", "significant")


# -- local interpretation ---------------------------------------------------

@dataclass
class LocalContribution:
    sample_id: str
    features: list[str]
    assignment: np.ndarray  # p_i * r_ij, (K, J)
    contribution: np.ndarray  # p_i * r_ij * <o_j, f_i W_ij>, (K, J)
    logits: np.ndarray
    predicted: object
    true: object

    def decomposition_gap(self) -> float:
        return float(np.max(np.abs(self.contribution.sum(axis=0) - self.logits)))

    def to_record(self) -> dict:
        return {
            "id": self.sample_id,
            "features": list(self.features),
            "assignment": self.assignment.tolist(),
            "contribution": self.contribution.tolist(),
            "logits": self.logits.tolist(),
            "predicted": self.predicted,
            "true": self.true,
        }

    @classmethod
    def from_record(cls, rec: dict) -> LocalContribution:
        return cls(rec["id"], rec["features"], np.array(rec["assignment"]), np.array(rec["contribution"]),
                   np.array(rec["logits"]), rec["predicted"], rec["true"])


def local_contributions(sample_id: str, features: Sequence[str], p, r, readout_scores, logits,
                        predicted=None, true=None) -> LocalContribution:
    """Assemble one sample's contribution matrices.

    ``readout_scores[i, j]`` is ``<o_j, f_i W_ij>``; ``r`` must come from a
    routing pass.
    """
    if r is None:
        raise ContractError(f"sample {sample_id!r}: local contributions need routing coefficients")
    p, r, scores = np.asarray(p, dtype=float), np.asarray(r, dtype=float), np.asarray(readout_scores, dtype=float)
    assignment = p[:, None] * r
    return LocalContribution(sample_id, list(features), assignment, assignment * scores,
                             np.asarray(logits, dtype=float), predicted, true)


def write_local_jsonl(records: Sequence[LocalContribution], fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec.to_record()) + "\n")


# -- streaming statistics ---------------------------------------------------

class RunningStats:
    """Cell-wise Welford mean/variance over an array of fixed shape.

    Each cell keeps its own count, so masked updates (grouping by label)
    are supported. ``merge`` combines two partial aggregates exactly.
    """

    def __init__(self, shape=()):
        self.shape = tuple(shape)
        self.n = np.zeros(self.shape, dtype=np.int64)
        self.mean = np.zeros(self.shape)
        self.m2 = np.zeros(self.shape)

    def push(self, x, mask=None) -> None:
        x = np.broadcast_to(np.asarray(x, dtype=np.float64), self.shape)
        take = np.ones(self.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), self.shape)
        n = self.n + take
        delta = np.where(take, x - self.mean, 0.0)
        mean = self.mean + np.where(take, delta / np.maximum(n, 1), 0.0)
        self.m2 = self.m2 + np.where(take, delta * (x - mean), 0.0)
        self.mean = mean
        self.n = n

    def extend(self, xs, masks=None) -> None:
        for k, x in enumerate(xs):
            self.push(x, None if masks is None else masks[k])

    def merge(self, other: RunningStats) -> RunningStats:
        if other.shape != self.shape:
            raise ContractError(f"cannot merge statistics of shapes {self.shape} and {other.shape}")
        out = RunningStats(self.shape)
        n = self.n + other.n
        safe = np.maximum(n, 1)
        delta = other.mean - self.mean
        out.n = n
        out.mean = np.where(n > 0, self.mean + delta * other.n / safe, 0.0)
        out.m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / safe
        return out

    @property
    def variance(self) -> np.ndarray:
        """Unbiased sample variance; zero where fewer than two observations."""
        return np.where(self.n > 1, self.m2 / np.maximum(self.n - 1, 1), 0.0)


def accumulate(stats: RunningStats, values, masks=None) -> RunningStats:
    """Stream ``values`` (one array per sample) into ``stats`` and return it."""
    stats.extend(values, masks)
    return stats


@dataclass
class GlobalStats:
    features: list[str]
    n_labels: int
    group_by: str = "none"
    r: RunningStats = None
    p: RunningStats = None
    pr: RunningStats = None
    # r and pr taken at each sample's own grouping label (multiclass only)
    r_at_label: RunningStats = None
    pr_at_label: RunningStats = None

    def __post_init__(self):
        if self.group_by not in GROUP_BY:
            raise ContractError(f"group_by must be one of {GROUP_BY}, got {self.group_by!r}")
        K, J = len(self.features), self.n_labels
        self.r = self.r or RunningStats((K, J))
        self.p = self.p or RunningStats((K,))
        self.pr = self.pr or RunningStats((K, J))
        self.r_at_label = self.r_at_label or RunningStats((K,))
        self.pr_at_label = self.pr_at_label or RunningStats((K,))

    @property
    def label_column(self) -> str | None:
        """Name of the pooled at-label column, or None when not grouping."""
        return {"none": None, "true-label": "true", "predicted-label": "predicted"}[self.group_by]

    def add_batch(self, p, r, true=None, predicted=None) -> None:
        """Stream a batch of per-sample ``p`` (B, K) and ``r`` (B, K, J) in sample order.

        ``true`` / ``predicted`` are class indices (B,) or 0/1 matrices (B, J)
        and select the label columns each sample contributes to when grouping.
        """
        p, r = np.asarray(p, dtype=float), np.asarray(r, dtype=float)
        B, K, J = r.shape
        cols = labels = None
        if self.group_by != "none":
            labels = true if self.group_by == "true-label" else predicted
            if labels is None:
                raise ContractError(f"group_by={self.group_by!r} needs the corresponding labels")
            labels = np.asarray(labels)
            cols = labels.astype(bool) if labels.ndim == 2 else np.eye(J, dtype=bool)[labels]
        single = labels is not None and labels.ndim == 1
        for b in range(B):
            mask = None if cols is None else np.broadcast_to(cols[b], (K, J))
            pr = p[b][:, None] * r[b]
            self.r.push(r[b], mask)
            self.pr.push(pr, mask)
            self.p.push(p[b])
            if single:
                self.r_at_label.push(r[b][:, labels[b]])
                self.pr_at_label.push(pr[:, labels[b]])

    def merge(self, other: GlobalStats) -> GlobalStats:
        if (self.features, self.n_labels, self.group_by) != (other.features, other.n_labels, other.group_by):
            raise ContractError("cannot merge statistics collected under different layouts")
        return GlobalStats(self.features, self.n_labels, self.group_by,
                           self.r.merge(other.r), self.p.merge(other.p), self.pr.merge(other.pr),
                           self.r_at_label.merge(other.r_at_label), self.pr_at_label.merge(other.pr_at_label))

    def get(self, quantity: str) -> RunningStats:
        if quantity not in QUANTITIES:
            raise ContractError(f"quantity must be one of {QUANTITIES}, got {quantity!r}")
        return getattr(self, quantity)


# -- confidence intervals ---------------------------------------------------

def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ContractError(f"confidence level must be in (0, 1), got {level}")
    if level == 0.95:
        return Z_95
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def confidence_interval(mean: float, variance: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval ``mean +- z * sqrt(variance / n)``."""
    if n < 2:
        raise InsufficientDataError(f"a confidence interval needs at least 2 observations, got {n}")
    if variance < 0:
        raise ContractError(f"variance must be non-negative, got {variance}")
    half = z_value(level) * math.sqrt(variance / n)
    return mean - half, mean + half


def significance_vs_uniform(ci: tuple[float, float], n_labels: int) -> bool:
    """True iff the whole interval lies above the uniform-routing value ``1/J``."""
    if n_labels < 2:
        raise ContractError(f"uniform baseline needs J >= 2, got {n_labels}")
    return ci[0] > 1.0 / n_labels


@dataclass
class CIEntry:
    feature: str
    label: str
    mean: float
    lo: float | None
    hi: float | None
    significant: bool


@dataclass
class CIReport:
    quantity: str
    level: float
    n_labels: int
    features: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    entries: list[CIEntry] = field(default_factory=list)

    @property
    def baseline(self) -> float | None:
        return None if self.quantity == "p" else 1.0 / self.n_labels

    def cell(self, feature: str, label: str = "") -> CIEntry:
        for e in self.entries:
            if e.feature == feature and e.label == label:
                return e
        raise KeyError((feature, label))


def build_report(stats: GlobalStats, quantity: str, level: float = 0.95,
                 label_names: Sequence[str] | None = None) -> CIReport:
    """Intervals for every tracked cell.

    For ``r`` and ``pr`` under label grouping, an extra column (``predicted``
    or ``true``) pools every sample's value at its own label.
    """
    labels = list(label_names) if label_names is not None else [str(j) for j in range(stats.n_labels)]
    rs = stats.get(quantity)
    pooled = None
    if quantity != "p" and stats.label_column and int(stats.r_at_label.n.max(initial=0)) > 0:
        pooled = stats.r_at_label if quantity == "r" else stats.pr_at_label
    columns = [] if quantity == "p" else labels + ([stats.label_column] if pooled is not None else [])
    report = CIReport(quantity, level, stats.n_labels, list(stats.features), columns)
    for i, feat in enumerate(stats.features):
        if quantity == "p":
            cells = [(rs, (i,), "")]
        else:
            cells = [(rs, (i, j), labels[j]) for j in range(stats.n_labels)]
            if pooled is not None:
                cells.append((pooled, (i,), stats.label_column))
        for src, idx, label in cells:
            n = int(src.n[idx])
            if n == 0:
                continue
            mean = float(src.mean[idx])
            lo = hi = None
            significant = False
            if n >= 2:
                lo, hi = confidence_interval(mean, float(src.variance[idx]), n, level)
                significant = quantity != "p" and significance_vs_uniform((lo, hi), stats.n_labels)
            report.entries.append(CIEntry(feat, label, mean, lo, hi, significant))
    return report


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def render_csv(report: CIReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for e in report.entries:
        writer.writerow([e.feature, e.label, _fmt(e.mean), _fmt(e.lo), _fmt(e.hi), int(e.significant)])
    return buf.getvalue()


def parse_csv(text: str) -> list[CIEntry]:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != CSV_FIELDS:
        raise ContractError(f"CSV header must be {','.join(CSV_FIELDS)}")
    out = []
    for row in rows:
        out.append(CIEntry(
            feature=row["feature"], label=row["label"], mean=float(row["mean"]),
            lo=float(row["lo"]) if row["lo"] else None, hi=float(row["hi"]) if row["hi"] else None,
            significant=row["significant"] == "1",
        ))
    return out


def render_text(report: CIReport, digits: int = 3) -> str:
    """Features as rows, labels as columns; ``*`` marks intervals above 1/J."""
    def cell(e: CIEntry | None) -> str:
        if e is None:
            return "-"
        if e.lo is None:
            return f"mean {e.mean:.{digits}f}"
        return f"({e.lo:.{digits}f}, {e.hi:.{digits}f})" + ("*" if e.significant else "")

    columns = ["Confidence Interval"] if report.quantity == "p" else report.labels
    lookup = {(e.feature, e.label): e for e in report.entries}
    rows = []
    for feat in report.features:
        keys = [""] if report.quantity == "p" else report.labels
        if not any((feat, k) in lookup for k in keys):
            continue
        rows.append([f"{report.quantity}_{feat}"] + [cell(lookup.get((feat, k))) for k in keys])
    header = [""] + list(columns)
    widths = [max(len(str(r[c])) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
    baseline = report.baseline
    if rows and baseline is not None:
        lines.append(f"level={report.level:g}  baseline 1/J={baseline:.3f}  * = lower bound above baseline")
    return "\n".join(lines) + "\n"
