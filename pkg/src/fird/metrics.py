"""Evaluation metrics: homogeneity/completeness/V-score, ROC-AUC, PR curves.

Clustering scores use the entropy formulation with natural logs; ROC-AUC is
the rank (Mann-Whitney) statistic with ties counting half; PR-AUC follows the
average-precision step rule, which avoids the optimism of trapezoidal
interpolation between operating points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    """Metric undefined for the given inputs (e.g. single-class labels)."""


@dataclass(frozen=True)
class ClusteringScore:
    homogeneity: float
    completeness: float
    v_score: float


@dataclass(frozen=True)
class CurvePoints:
    """An operating-point curve: x non-decreasing, plus its area."""

    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray
    auc: float


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def clustering_scores(true_labels, predicted_labels) -> ClusteringScore:
    """Homogeneity h = 1 - H(C|K)/H(C), completeness c = 1 - H(K|C)/H(K),
    V-score their harmonic mean; degenerate entropies score 1 by convention."""
    true = np.asarray(true_labels).ravel()
    pred = np.asarray(predicted_labels).ravel()
    if true.shape != pred.shape:
        raise MetricError(
            f"label arrays differ in length: {true.shape[0]} vs {pred.shape[0]}"
        )
    if true.shape[0] == 0:
        raise MetricError("label arrays are empty")

    _, t_inv = np.unique(true, return_inverse=True)
    _, p_inv = np.unique(pred, return_inverse=True)
    n_c = int(t_inv.max()) + 1
    n_k = int(p_inv.max()) + 1
    cont = np.bincount(t_inv * n_k + p_inv, minlength=n_c * n_k).reshape(n_c, n_k)
    cont = cont.astype(float)
    n = cont.sum()

    h_c = _entropy(cont.sum(axis=1))
    h_k = _entropy(cont.sum(axis=0))
    # conditional entropies from joint and marginal masses
    joint = cont / n
    pk = joint.sum(axis=0)
    pc = joint.sum(axis=1)
    nz = joint > 0
    h_c_given_k = float(-(joint[nz] * (np.log(joint[nz]) - np.log(np.broadcast_to(pk, joint.shape)[nz]))).sum())
    h_k_given_c = float(-(joint[nz] * (np.log(joint[nz]) - np.log(np.broadcast_to(pc[:, None], joint.shape)[nz]))).sum())

    h = 1.0 if h_c == 0.0 else 1.0 - h_c_given_k / h_c
    c = 1.0 if h_k == 0.0 else 1.0 - h_k_given_c / h_k
    h = min(max(h, 0.0), 1.0)
    c = min(max(c, 0.0), 1.0)
    v = 2.0 * h * c / (h + c) if h + c > 0 else 0.0
    return ClusteringScore(homogeneity=h, completeness=c, v_score=v)


def _binary_labels(labels) -> np.ndarray:
    arr = np.asarray(labels).ravel()
    if arr.dtype == bool:
        return arr
    out = arr.astype(float)
    if not np.isin(out, (0.0, 1.0)).all():
        raise MetricError("labels must be binary (0/1 or bool)")
    return out.astype(bool)


def roc_auc(binary_labels, scores) -> float:
    """Probability a random positive outranks a random negative, ties half."""
    y = _binary_labels(binary_labels)
    s = np.asarray(scores, dtype=float).ravel()
    if y.shape != s.shape:
        raise MetricError("labels and scores differ in length")
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC undefined: both classes must be present")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _threshold_counts(y: np.ndarray, s: np.ndarray):
    """Cumulative true/false positives at each distinct score, descending."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    cum_tp = np.cumsum(y_sorted)
    # last index of each run of equal scores
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)
    boundary = np.concatenate([boundary, [s_sorted.shape[0] - 1]])
    tp = cum_tp[boundary].astype(float)
    fp = (boundary + 1) - tp
    return s_sorted[boundary], tp, fp


def pr_curve(binary_labels, scores) -> CurvePoints:
    """Precision/recall at every distinct threshold; AUC by average precision."""
    y = _binary_labels(binary_labels)
    s = np.asarray(scores, dtype=float).ravel()
    if y.shape != s.shape:
        raise MetricError("labels and scores differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("PR curve undefined: no positive labels")
    thresholds, tp, fp = _threshold_counts(y, s)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    ap = float((np.diff(recall, prepend=0.0) * precision).sum())
    # anchor the curve at recall 0 so the x axis spans [0, 1]
    x = np.concatenate([[0.0], recall])
    yy = np.concatenate([[1.0], precision])
    th = np.concatenate([[np.inf], thresholds])
    return CurvePoints(x=x, y=yy, thresholds=th, auc=ap)


def roc_points(binary_labels, scores) -> CurvePoints:
    """ROC operating points (x = FPR, y = TPR); the area is the rank AUC."""
    y = _binary_labels(binary_labels)
    s = np.asarray(scores, dtype=float).ravel()
    if y.shape != s.shape:
        raise MetricError("labels and scores differ in length")
    auc = roc_auc(y, s)
    thresholds, tp, fp = _threshold_counts(y, s)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    x = np.concatenate([[0.0], fp / n_neg])
    yy = np.concatenate([[0.0], tp / n_pos])
    th = np.concatenate([[np.inf], thresholds])
    return CurvePoints(x=x, y=yy, thresholds=th, auc=auc)


def write_pr_csv(curve: CurvePoints, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in zip(curve.thresholds, curve.y, curve.x):
            fh.write(f"{float(t)!r},{float(p)!r},{float(r)!r}\n")


def write_roc_csv(curve: CurvePoints, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,tpr,fpr\n")
        for t, tpr, fpr in zip(curve.thresholds, curve.y, curve.x):
            fh.write(f"{float(t)!r},{float(tpr)!r},{float(fpr)!r}\n")
