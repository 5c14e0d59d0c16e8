"""Metrics, paired t-tests and run aggregation.

AUC is the Mann-Whitney rank statistic with average ranks for tied scores.
Zero-division conventions: precision/recall/F1 fall back to 0 with a flag
rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc")
ALPHA = 0.05


@dataclass
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    zero_division: bool = False  # precision/recall/F1 hit a 0/0 convention

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass
class TTestResult:
    t: float
    df: int
    p: float
    significant: bool
    degenerate_variance: bool = False

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "df": self.df,
            "p": self.p,
            "significant": self.significant,
            "degenerate_variance": self.degenerate_variance,
        }


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """AUC = U / (n_pos * n_neg) with average ranks over tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need both classes present")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(
    scores, labels, threshold: float = 0.5, require_auc: bool = True
) -> MetricSet:
    """Confusion-matrix metrics at `threshold` plus rank AUC.

    With a single-class label vector, AUC is an error unless require_auc is
    False (then it is reported as NaN).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) != len(labels) or len(scores) == 0:
        raise ValueError("scores and labels must have equal nonzero length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    preds = (scores >= threshold).astype(int)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    accuracy = (tp + tn) / len(labels)
    zero_division = False
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, zero_division = 0.0, True
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, zero_division = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, zero_division = 0.0, True
    try:
        auc = rank_auc(scores, labels)
    except ValueError:
        if require_auc:
            raise
        auc = float("nan")
    return MetricSet(accuracy, precision, recall, f1, auc, zero_division)


def student_t_sf(t: float, df: int) -> float:
    """Two-sided p-value via the regularized incomplete beta function."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test over matched metric vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_ttest needs two equal-length 1-D vectors")
    n = len(a)
    if n < 2:
        raise ValueError("paired_ttest needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, df=df, p=1.0, significant=False)
        t = float("inf") if mean > 0 else float("-inf")
        return TTestResult(t=t, df=df, p=0.0, significant=True, degenerate_variance=True)
    t = mean / (sd / np.sqrt(n))
    p = student_t_sf(t, df)
    return TTestResult(t=float(t), df=df, p=p, significant=p < ALPHA)


@dataclass
class AggregatedMetrics:
    mean: MetricSet
    std: MetricSet
    n_runs: int
    single_run: bool = False


def aggregate_runs(runs: list[MetricSet]) -> AggregatedMetrics:
    """Element-wise mean and sample std (n-1 denominator) over repeated runs."""
    if not runs:
        raise ValueError("aggregate_runs needs at least one run")
    values = {name: np.array([getattr(r, name) for r in runs]) for name in METRIC_NAMES}
    mean = MetricSet(**{name: float(v.mean()) for name, v in values.items()})
    if len(runs) == 1:
        std = MetricSet(**{name: 0.0 for name in METRIC_NAMES})
        return AggregatedMetrics(mean, std, 1, single_run=True)
    std = MetricSet(**{name: float(v.std(ddof=1)) for name, v in values.items()})
    return AggregatedMetrics(mean, std, len(runs))


@dataclass
class EvalReport:
    """Per-run rows, aggregates, and the pooling-strategy t-test matrix."""

    config_digest: str
    seeds: list[int]
    per_run: list[dict] = field(default_factory=list)  # strategy, classifier, seed, metrics
    aggregated: list[dict] = field(default_factory=list)
    ttests: list[dict] = field(default_factory=list)
    best_by_strategy: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "per_run": self.per_run,
            "aggregated": self.aggregated,
            "ttests": self.ttests,
            "best_by_strategy": self.best_by_strategy,
            "errors": self.errors,
            "timestamp": self.timestamp,
        }


def render_table(report_dict: dict) -> str:
    """Plain-text results table: one aggregated row per (strategy, classifier)."""
    header = ["Model", "Aggreg.", "Classifier", "Accuracy", "Precision", "Recall", "F1", "AUC"]
    rows = [header]
    for entry in report_dict["aggregated"]:
        mean, std = entry["mean"], entry["std"]
        row = [entry.get("model", "hash"), entry["strategy"], entry["classifier"]]
        for name in METRIC_NAMES:
            row.append(f"{mean[name]:.2f} ± {std[name]:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines)
