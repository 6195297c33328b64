"""Clustering and ranking metrics, cross-checked against scikit-learn."""

import numpy as np
import pytest
from sklearn import metrics as sk

from fird.metrics import (
    MetricError,
    clustering_scores,
    pr_curve,
    roc_auc,
    roc_points,
    write_pr_csv,
    write_roc_csv,
)


class TestClusteringScores:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sklearn(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 200))
        true = rng.integers(0, rng.integers(2, 6), size=n)
        pred = rng.integers(0, rng.integers(2, 6), size=n)
        got = clustering_scores(true, pred)
        h, c, v = sk.homogeneity_completeness_v_measure(true, pred)
        assert abs(got.homogeneity - h) <= 1e-10
        assert abs(got.completeness - c) <= 1e-10
        assert abs(got.v_score - v) <= 1e-10

    def test_perfect(self):
        s = clustering_scores([0, 1, 2, 0, 1, 2], [5, 7, 9, 5, 7, 9])
        assert s.homogeneity == 1.0
        assert s.completeness == 1.0
        assert s.v_score == 1.0

    def test_relabel_invariance(self):
        true = [0, 0, 1, 1, 2, 2]
        pred = [1, 1, 0, 0, 2, 2]
        a = clustering_scores(true, pred)
        remap = {0: "x", 1: "y", 2: "z"}
        b = clustering_scores(true, [remap[p] for p in pred])
        assert a == b

    def test_split_clusters_two_thirds(self):
        # each predicted cluster holds two pure true classes:
        # h = 1 - log2/log4 = 0.5, c = 1, v = 2/3
        s = clustering_scores([0, 1, 2, 3], [0, 0, 1, 1])
        assert abs(s.homogeneity - 0.5) <= 1e-12
        assert s.completeness == 1.0
        assert abs(s.v_score - 2.0 / 3.0) <= 1e-12

    def test_degenerate_conventions(self):
        # single true class: h := 1; lumping everything: c := 1
        assert clustering_scores([0, 0, 0], [0, 1, 2]).homogeneity == 1.0
        assert clustering_scores([0, 1, 2], [0, 0, 0]).completeness == 1.0

    def test_errors(self):
        with pytest.raises(MetricError, match="length"):
            clustering_scores([0, 1], [0, 1, 2])
        with pytest.raises(MetricError, match="empty"):
            clustering_scores([], [])


class TestRocAuc:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sklearn_with_ties(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(20, 300))
        y = rng.random(n) < 0.4
        if not y.any() or y.all():
            y[0], y[1] = True, False
        scores = rng.integers(0, 8, size=n).astype(float)  # heavy ties
        assert abs(roc_auc(y, scores) - sk.roc_auc_score(y, scores)) <= 1e-12

    def test_perfect_and_inverted(self):
        y = np.array([0, 0, 1, 1])
        assert roc_auc(y, [0.1, 0.2, 0.8, 0.9]) == 1.0
        assert roc_auc(y, [0.9, 0.8, 0.2, 0.1]) == 0.0

    def test_constant_scores_half(self):
        assert roc_auc([0, 1, 0, 1], np.ones(4)) == 0.5

    def test_negation_symmetry(self, rng):
        y = rng.random(200) < 0.3
        y[0], y[1] = True, False
        s = rng.normal(size=200)
        assert abs(roc_auc(y, s) + roc_auc(y, -s) - 1.0) <= 1e-12

    def test_monotone_transform_invariance(self, rng):
        y = rng.random(100) < 0.5
        y[0], y[1] = True, False
        s = rng.normal(size=100)
        assert roc_auc(y, s) == roc_auc(y, np.exp(s))

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(42)
        y = rng.random(10000) < 0.5
        s = rng.random(10000)
        assert abs(roc_auc(y, s) - 0.5) <= 0.05

    def test_errors(self):
        with pytest.raises(MetricError, match="classes"):
            roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
        with pytest.raises(MetricError, match="length"):
            roc_auc([0, 1], [0.1, 0.2, 0.3])
        with pytest.raises(MetricError, match="binary"):
            roc_auc([0, 1, 2], [0.1, 0.2, 0.3])


class TestPrCurve:
    @pytest.mark.parametrize("seed", range(10))
    def test_auc_matches_sklearn_ap(self, seed):
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(20, 300))
        y = rng.random(n) < 0.3
        if not y.any():
            y[0] = True
        scores = rng.integers(0, 10, size=n).astype(float)
        got = pr_curve(y, scores).auc
        want = sk.average_precision_score(y, scores)
        assert abs(got - want) <= 1e-12

    def test_single_positive_top_ranked(self):
        y = np.array([0, 0, 0, 1])
        s = np.array([0.1, 0.2, 0.3, 0.9])
        assert pr_curve(y, s).auc == 1.0

    def test_random_scores_near_prevalence(self):
        rng = np.random.default_rng(7)
        y = rng.random(10000) < 0.3
        s = rng.random(10000)
        assert abs(pr_curve(y, s).auc - y.mean()) <= 0.05

    def test_curve_shape(self, rng):
        y = rng.random(50) < 0.4
        y[0] = True
        s = rng.normal(size=50)
        curve = pr_curve(y, s)
        assert curve.x[0] == 0.0 and curve.y[0] == 1.0
        assert curve.x[-1] == 1.0
        assert (np.diff(curve.x) >= 0).all()
        assert (np.diff(curve.thresholds) <= 0).all()
        assert ((curve.y >= 0) & (curve.y <= 1)).all()

    def test_no_positives_rejected(self):
        with pytest.raises(MetricError, match="positive"):
            pr_curve([0, 0, 0], [0.1, 0.2, 0.3])


class TestRocPoints:
    def test_trapezoid_equals_rank_auc(self, rng):
        for _ in range(5):
            y = rng.random(120) < 0.4
            y[0], y[1] = True, False
            s = rng.integers(0, 6, size=120).astype(float)
            curve = roc_points(y, s)
            area = np.trapezoid(curve.y, curve.x)
            assert abs(area - curve.auc) <= 1e-12

    def test_endpoints(self, rng):
        y = rng.random(60) < 0.5
        y[0], y[1] = True, False
        curve = roc_points(y, rng.normal(size=60))
        assert (curve.x[0], curve.y[0]) == (0.0, 0.0)
        assert (curve.x[-1], curve.y[-1]) == (1.0, 1.0)
        assert (np.diff(curve.x) >= 0).all()
        assert (np.diff(curve.y) >= 0).all()


class TestCsvWriters:
    def test_pr_csv(self, rng, tmp_path):
        y = rng.random(30) < 0.5
        y[0], y[1] = True, False
        curve = pr_curve(y, rng.normal(size=30))
        path = tmp_path / "pr.csv"
        write_pr_csv(curve, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "threshold,precision,recall"
        assert len(lines) == 1 + curve.x.shape[0]
        _, p, r = lines[1].split(",")
        assert float(p) == float(curve.y[0]) and float(r) == float(curve.x[0])

    def test_roc_csv(self, rng, tmp_path):
        y = rng.random(30) < 0.5
        y[0], y[1] = True, False
        curve = roc_points(y, rng.normal(size=30))
        path = tmp_path / "roc.csv"
        write_roc_csv(curve, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "threshold,tpr,fpr"
        last = lines[-1].split(",")
        assert float(last[1]) == 1.0 and float(last[2]) == 1.0
