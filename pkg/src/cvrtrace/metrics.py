"""Evaluation metrics over (score, label) pairs and interval reporting.

AUC is the rank statistic (ties count half), PR-AUC is average precision
with step-wise interpolation, NLL clamps scores away from 0/1, and ECE uses
equal-width bins.  Intervals missing a class are skipped for the ranking
metrics and excluded from averages, with counts reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

NLL_CLAMP = 1e-7
ECE_BINS = 10

REPORT_COLUMNS = ("interval_start", "n", "n_pos", "auc", "nll", "pr_auc", "ece")
METRIC_NAMES = ("auc", "nll", "pr_auc", "ece")


class DegenerateMetricError(ValueError):
    """Raised when a metric is undefined for the given label distribution."""


def _as_pairs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    if scores.size and (not np.all(np.isfinite(scores))
                        or scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError("scores must be finite probabilities in [0, 1]")
    return scores, labels


def auc(scores, labels) -> float:
    """Rank-based AUC; ties between classes contribute one half."""
    scores, labels = _as_pairs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def nll(scores, labels, clamp: float = NLL_CLAMP) -> float:
    """Mean negative log-likelihood with scores clamped into (0, 1)."""
    scores, labels = _as_pairs(scores, labels)
    if scores.size == 0:
        raise DegenerateMetricError("NLL needs at least one pair")
    p = np.clip(scores, clamp, 1.0 - clamp)
    ll = np.where(labels == 1, np.log(p), np.log1p(-p))
    return float(-ll.mean())


def pr_auc(scores, labels) -> float:
    """Average precision with step-wise interpolation; ties share a threshold."""
    scores, labels = _as_pairs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateMetricError("PR-AUC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    seen = np.arange(1, y.size + 1)
    # indices where the score strictly drops: each is a threshold boundary
    ends = np.flatnonzero(np.diff(s) != 0.0)
    ends = np.concatenate([ends, [y.size - 1]])
    precision = tp[ends] / seen[ends]
    delta_tp = np.diff(np.concatenate([[0], tp[ends]]))
    return float((precision * delta_tp).sum() / n_pos)


def ece(scores, labels, bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width score bins."""
    scores, labels = _as_pairs(scores, labels)
    if scores.size == 0:
        raise DegenerateMetricError("ECE needs at least one pair")
    which = np.minimum((scores * bins).astype(np.int64), bins - 1)
    total = scores.size
    out = 0.0
    for b in range(bins):
        in_bin = which == b
        n_b = int(in_bin.sum())
        if n_b == 0:
            continue
        gap = abs(float(labels[in_bin].mean()) - float(scores[in_bin].mean()))
        out += (n_b / total) * gap
    return out


def interval_metrics(scores, labels, interval_start) -> dict:
    """All four metrics for one interval; undefined entries become None."""
    scores, labels = _as_pairs(scores, labels)
    row = {"interval_start": int(interval_start),
           "n": int(scores.size),
           "n_pos": int(labels.sum()),
           "auc": None, "nll": None, "pr_auc": None, "ece": None}
    if scores.size == 0:
        return row
    row["nll"] = nll(scores, labels)
    row["ece"] = ece(scores, labels)
    try:
        row["auc"] = auc(scores, labels)
    except DegenerateMetricError:
        pass
    try:
        row["pr_auc"] = pr_auc(scores, labels)
    except DegenerateMetricError:
        pass
    return row


@dataclass
class MetricAccumulator:
    """Collects (score, ground-truth label) pairs for one sliding interval."""

    interval_start: int
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def add(self, scores, labels):
        scores, labels = _as_pairs(scores, labels)
        self.scores.append(scores)
        self.labels.append(labels)

    def pairs(self):
        if not self.scores:
            return np.empty(0), np.empty(0, dtype=np.int64)
        return np.concatenate(self.scores), np.concatenate(self.labels)

    def compute(self) -> dict:
        scores, labels = self.pairs()
        return interval_metrics(scores, labels, self.interval_start)


def aggregate(rows, pooled_scores=None, pooled_labels=None) -> dict:
    """Per-interval means (skipping undefined entries) plus pooled metrics."""
    if not rows:
        raise ValueError("aggregate needs at least one interval")
    agg = {"intervals": len(rows)}
    for name in METRIC_NAMES:
        vals = [r[name] for r in rows if r[name] is not None]
        agg[f"mean_{name}"] = float(np.mean(vals)) if vals else None
        agg[f"defined_{name}"] = len(vals)
    if pooled_scores is not None and len(pooled_scores):
        pooled = interval_metrics(pooled_scores, pooled_labels, 0)
        for name in METRIC_NAMES:
            agg[f"pooled_{name}"] = pooled[name]
    else:
        for name in METRIC_NAMES:
            agg[f"pooled_{name}"] = None
    return agg


# ----------------------------------------------------------------------------
# Report files: one row per interval, '#' footer lines for metadata/aggregates.

def _fmt(x) -> str:
    if x is None:
        return "na"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.12g" % float(x)


def format_report(meta: dict, rows, agg: dict) -> str:
    lines = ["\t".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append("\t".join(_fmt(r[c]) for c in REPORT_COLUMNS))
    for key in sorted(meta):
        lines.append(f"#meta\t{key}={meta[key]}")
    mean_part = "\t".join(f"{m}={_fmt(agg['mean_' + m])}" for m in METRIC_NAMES)
    defined = "\t".join(f"{m}={agg['defined_' + m]}" for m in METRIC_NAMES)
    pooled = "\t".join(f"{m}={_fmt(agg['pooled_' + m])}" for m in METRIC_NAMES)
    lines.append(f"#agg\tmean\t{mean_part}")
    lines.append(f"#agg\tdefined\tintervals={agg['intervals']}\t{defined}")
    lines.append(f"#agg\tpooled\t{pooled}")
    return "\n".join(lines) + "\n"


def write_report(path, meta: dict, rows, agg: dict):
    with open(path, "w") as fh:
        fh.write(format_report(meta, rows, agg))


def _parse_kv(fields):
    out = {}
    for f in fields:
        key, _, val = f.partition("=")
        out[key] = val
    return out


def read_report(path):
    """Parse a report file back into (meta, rows, agg)."""
    meta, rows = {}, []
    agg = {}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"unrecognized report header in {path}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#meta\t"):
                meta.update(_parse_kv(line.split("\t")[1:]))
            elif line.startswith("#agg\t"):
                parts = line.split("\t")
                kind = parts[1]
                kv = _parse_kv(parts[2:])
                if kind == "mean":
                    for m, v in kv.items():
                        agg[f"mean_{m}"] = None if v == "na" else float(v)
                elif kind == "pooled":
                    for m, v in kv.items():
                        agg[f"pooled_{m}"] = None if v == "na" else float(v)
                elif kind == "defined":
                    for m, v in kv.items():
                        key = "intervals" if m == "intervals" else f"defined_{m}"
                        agg[key] = int(v)
            else:
                vals = line.split("\t")
                row = {}
                for col, val in zip(REPORT_COLUMNS, vals):
                    if col in ("interval_start", "n", "n_pos"):
                        row[col] = int(val)
                    else:
                        row[col] = None if val == "na" else float(val)
                rows.append(row)
    return meta, rows, agg
