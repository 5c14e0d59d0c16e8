import math

import numpy as np
import pytest
from scipy.integrate import quad

from notematch.evaluate import (
    MetricSet,
    aggregate_runs,
    compute_metrics,
    paired_ttest,
    rank_auc,
    render_table,
)


def pair_counting_auc(scores, labels):
    """O(n^2) oracle: fraction of positive/negative pairs correctly ordered, ties half."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def t_density(x, df):
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


class TestMetrics:
    def test_perfect_ranking(self):
        m = compute_metrics([0.1, 0.9], [0, 1])
        assert m.auc == 1.0 and m.accuracy == 1.0

    def test_auc_075_example(self):
        m = compute_metrics([0.2, 0.3, 0.4, 0.5], [0, 1, 0, 1])
        assert m.auc == pytest.approx(0.75)

    def test_zero_predicted_positives_convention(self):
        m = compute_metrics([0.1, 0.2], [0, 1])
        assert m.precision == 0.0 and m.f1 == 0.0 and m.zero_division

    def test_single_class_auc_errors(self):
        with pytest.raises(ValueError, match="both classes"):
            compute_metrics([0.1, 0.9], [1, 1])
        m = compute_metrics([0.1, 0.9], [1, 1], require_auc=False)
        assert math.isnan(m.auc) and m.recall == 0.5

    def test_tie_handling_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = rng.integers(4, 60)
            scores = rng.integers(0, 5, size=n) / 4.0  # heavy ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert rank_auc(scores, labels) == pytest.approx(
                pair_counting_auc(scores, labels), abs=1e-9
            )

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        base = rank_auc(scores, labels)
        assert rank_auc(np.exp(scores), labels) == pytest.approx(base)
        assert rank_auc(3 * scores + 7, labels) == pytest.approx(base)

    def test_score_negation_complements(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=40)  # continuous, no ties
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        assert rank_auc(scores, labels) + rank_auc(-scores, labels) == pytest.approx(1.0)

    def test_confusion_matrix_against_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            scores = rng.random(20)
            labels = rng.integers(0, 2, size=20)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            m = compute_metrics(scores, labels)
            preds = scores >= 0.5
            tp = int((preds & (labels == 1)).sum())
            fp = int((preds & (labels == 0)).sum())
            fn = int((~preds & (labels == 1)).sum())
            assert m.accuracy == pytest.approx((preds == labels).mean())
            if tp + fp:
                assert m.precision == pytest.approx(tp / (tp + fp))
            if tp + fn:
                assert m.recall == pytest.approx(tp / (tp + fn))


class TestTTest:
    def test_identical_vectors(self):
        r = paired_ttest([0.8, 0.9, 0.85], [0.8, 0.9, 0.85])
        assert r.t == 0.0 and r.p == 1.0 and not r.significant

    def test_degenerate_variance(self):
        r = paired_ttest([1.0, 1.0, 1.0], [0.5, 0.5, 0.5])
        assert r.p == 0.0 and r.degenerate_variance and r.significant

    def test_antisymmetry(self):
        rng = np.random.default_rng(4)
        a, b = rng.random(8), rng.random(8)
        fwd, rev = paired_ttest(a, b), paired_ttest(b, a)
        assert fwd.t == pytest.approx(-rev.t)
        assert fwd.p == pytest.approx(rev.p)

    def test_p_matches_quadrature(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n = int(rng.integers(3, 12))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            r = paired_ttest(a, b)
            tail, _ = quad(t_density, abs(r.t), np.inf, args=(r.df,))
            assert r.p == pytest.approx(2 * tail, abs=1e-6)

    def test_df(self):
        assert paired_ttest([1.0, 2.0, 3.0], [0.0, 1.0, 5.0]).df == 2

    def test_too_short(self):
        with pytest.raises(ValueError):
            paired_ttest([1.0], [2.0])


class TestAggregate:
    def metric(self, value):
        return MetricSet(value, value, value, value, value)

    def test_identical_runs_zero_std(self):
        agg = aggregate_runs([self.metric(0.9)] * 3)
        assert agg.mean.accuracy == pytest.approx(0.9)
        assert agg.std.accuracy == 0.0

    def test_hand_example(self):
        agg = aggregate_runs([self.metric(0.8), self.metric(0.9), self.metric(1.0)])
        assert agg.mean.accuracy == pytest.approx(0.9)
        assert agg.std.accuracy == pytest.approx(0.1)

    def test_single_run_flagged(self):
        agg = aggregate_runs([self.metric(0.7)])
        assert agg.single_run and agg.std.auc == 0.0

    def test_order_invariant(self):
        runs = [self.metric(v) for v in (0.5, 0.7, 0.9)]
        a = aggregate_runs(runs)
        b = aggregate_runs(list(reversed(runs)))
        assert a.mean == b.mean and a.std == b.std


def test_render_table_contains_rows():
    report = {
        "aggregated": [
            {
                "model": "hash",
                "strategy": "mean_max",
                "classifier": "boost",
                "mean": {"accuracy": 0.9, "precision": 0.91, "recall": 0.88, "f1": 0.89, "auc": 0.96},
                "std": {"accuracy": 0.0, "precision": 0.0, "recall": 0.01, "f1": 0.0, "auc": 0.0},
            }
        ]
    }
    text = render_table(report)
    assert "mean_max" in text and "0.96 ± 0.00" in text and "AUC" in text
