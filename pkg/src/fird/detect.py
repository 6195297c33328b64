"""Detection on a fitted model: outliers, anomaly scores, fraud-group flags.

Scores compare observed information against what a component's own mixed
distribution (for rows) or a uniform-randomness null (for groups) would
produce, with a relative slack epsilon; rows and groups are flagged when they
carry more information than the reference admits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .data import EncodedDataset
from .em import Responsibilities, e_step
from .model import ModelParams, log_feature_terms

FRAUD_MODES = ("binomial", "literal")


def _mixed_distributions(params: ModelParams, g: int) -> list[np.ndarray]:
    """Per-feature category distributions mu*alpha + (1-mu)*beta of component g."""
    out = []
    for m in range(params.n_features):
        mu = params.mu[g, m]
        out.append(mu * params.alpha[m][g] + (1.0 - mu) * params.beta[m][g])
    return out


def cluster_entropy(params: ModelParams, g: int) -> float:
    """Entropy of component g's mixed per-feature distributions, summed over
    features; the information budget a typical member row consumes."""
    total = 0.0
    for y in _mixed_distributions(params, g):
        nz = y > 0
        total -= float((y[nz] * np.log(y[nz])).sum())
    return total


def row_information(row: np.ndarray, g: int, params: ModelParams) -> float:
    """Negative log-likelihood of one row under component g alone."""
    log_gamma, log_gamma_bar = log_feature_terms(np.asarray(row), g, params)
    return -float(np.logaddexp(log_gamma, log_gamma_bar).sum())


def _info_matrix(
    dataset: EncodedDataset,
    params: ModelParams,
    resp: Responsibilities | None,
    threads: int,
) -> np.ndarray:
    if resp is not None:
        return resp.row_info
    return e_step(dataset, params, threads=threads, want_gamma=False).row_info


def filter_outliers(
    dataset: EncodedDataset,
    params: ModelParams,
    epsilon: float,
    resp: Responsibilities | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Mark rows carrying too much information for every active component.

    A row is an outlier iff its information exceeds (1 + epsilon) times the
    component entropy for all active g; it fits nowhere, not merely badly in
    its best home.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    active = np.flatnonzero(params.active)
    if active.size == 0:
        raise ValueError("model has no active components")
    info = _info_matrix(dataset, params, resp, threads)
    thresholds = np.array(
        [(1.0 + epsilon) * cluster_entropy(params, g) for g in active]
    )
    return np.all(info[:, active] > thresholds[None, :], axis=1)


def anomaly_scores(
    dataset: EncodedDataset,
    params: ModelParams,
    resp: Responsibilities | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Best-case information ratio min_g I(row, g) / H(g) over active g.

    Degenerate zero-entropy components score 1 for rows matching them exactly
    and +inf otherwise. Higher means more anomalous; ~1 is typical.
    """
    active = np.flatnonzero(params.active)
    if active.size == 0:
        raise ValueError("model has no active components")
    info = _info_matrix(dataset, params, resp, threads)[:, active]
    ent = np.array([cluster_entropy(params, g) for g in active])
    ratios = np.empty_like(info)
    pos = ent > 0
    ratios[:, pos] = info[:, pos] / ent[pos]
    if (~pos).any():
        ratios[:, ~pos] = np.where(info[:, ~pos] == 0.0, 1.0, np.inf)
    return ratios.min(axis=1)


@dataclass
class GroupScores:
    """Per-component fraud evidence: information vs the randomness threshold."""

    info: np.ndarray          # (G,) I_g
    threshold: np.ndarray     # (G,) H_g at epsilon = 0
    n_soft: np.ndarray        # (G,) soft member counts
    flags: np.ndarray         # (G,) bool, I_g > (1 + epsilon) H_g
    epsilon: float
    mode: str


def _soft_counts(dataset: EncodedDataset, resp: Responsibilities) -> list[np.ndarray]:
    """counts[m][g, i] = sum over rows with x_m = i of phi[n, g]."""
    N, G = resp.phi.shape
    counts = []
    col = np.arange(G)
    for m in range(dataset.n_features):
        codes = dataset.codes[:, m]
        unk = codes < 0
        w = np.where(unk[:, None], 0.0, resp.phi) if unk.any() else resp.phi
        safe = np.where(unk, 0, codes)
        flat = (safe[:, None] * G + col).ravel()
        d = dataset.dims[m]
        counts.append(
            np.bincount(flat, weights=w.ravel(), minlength=d * G).reshape(d, G).T
        )
    return counts


def _log_choose(n, k):
    """log C(n, k) continued to real arguments via gammaln."""
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def fraud_group_scores(
    dataset: EncodedDataset,
    resp: Responsibilities,
    params: ModelParams,
    epsilon: float = 0.05,
    mode: str = "binomial",
) -> GroupScores:
    """Flag components whose soft member rows synchronize beyond chance.

    The information of group g is the improbability of its per-category soft
    counts under uniform randomness; the threshold is the same expression
    evaluated at perfectly even counts N_g / D_m, so it is the minimum a group
    of that size can carry and the flag margin (1 + epsilon) is meaningful.
    binomial mode scores each count against the full Binomial(N_g, 1/D_m)
    log-pmf (real-valued via the gamma function); literal mode uses the
    C(D_m, c) reading with c > D_m terms dropped. Empty and frozen groups are
    never flagged.
    """
    if mode not in FRAUD_MODES:
        raise ValueError(f"unknown fraud scoring mode {mode!r}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    G = params.n_components
    counts = _soft_counts(dataset, resp)
    n_soft = resp.phi.sum(axis=0)
    info = np.zeros(G)
    threshold = np.zeros(G)
    live = params.active & (n_soft > 0)
    for m in range(dataset.n_features):
        d = dataset.dims[m]
        if d == 1:
            # a single-category feature is certain under any model
            continue
        logd = np.log(d)
        c = np.clip(counts[m][live], 0.0, n_soft[live, None])
        if mode == "binomial":
            n = n_soft[live, None]
            logq = -np.log1p(-1.0 / d)  # log of D/(D-1), the miss odds
            info[live] += (
                c * logd + (n - c) * logq - _log_choose(n, c)
            ).sum(axis=1)
            even = n_soft[live] / d
            threshold[live] += d * (
                even * logd
                + (n_soft[live] - even) * logq
                - _log_choose(n_soft[live], even)
            )
        else:
            ok = c <= d
            term = np.where(ok, c * logd - _log_choose(float(d), np.minimum(c, d)), 0.0)
            info[live] += term.sum(axis=1)
            even = n_soft[live] / d
            ok_even = even <= d
            threshold[live] += np.where(
                ok_even, d * (even * logd - _log_choose(float(d), np.minimum(even, d))), 0.0
            )
    flags = np.zeros(G, dtype=bool)
    flags[live] = info[live] > (1.0 + epsilon) * threshold[live]
    return GroupScores(
        info=info, threshold=threshold, n_soft=n_soft, flags=flags,
        epsilon=epsilon, mode=mode,
    )


def infer_labels(
    resp: Responsibilities,
    decision: np.ndarray,
    outlier_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior fraud scores: responsibilities mixed through a per-component
    decision distribution p(fraud | g); filtered outliers score 0."""
    decision = np.asarray(decision, dtype=float)
    G = resp.phi.shape[1]
    if decision.shape != (G,):
        raise ValueError(f"decision distribution must have shape ({G},)")
    if ((decision < 0) | (decision > 1)).any() or not np.isfinite(decision).all():
        raise ValueError("decision entries must lie in [0, 1]")
    scores = np.clip(resp.phi @ decision, 0.0, 1.0)
    if outlier_mask is not None:
        scores = np.where(outlier_mask, 0.0, scores)
    return scores


@dataclass
class DetectionReport:
    """Everything the detect pipeline knows about a dataset under one model."""

    assignments: np.ndarray        # (N,) argmax component per row
    outlier_mask: np.ndarray       # (N,) bool
    label_scores: np.ndarray       # (N,) p(fraud) per row
    anomaly: np.ndarray            # (N,) information ratio per row
    groups: GroupScores
    decision: np.ndarray           # (G,) p(fraud | g) used for label_scores

    def write_rows(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,assignment,outlier,label_score,anomaly_score\n")
            for n in range(self.assignments.shape[0]):
                fh.write(
                    f"{n},{int(self.assignments[n])},{int(self.outlier_mask[n])},"
                    f"{float(self.label_scores[n])!r},{float(self.anomaly[n])!r}\n"
                )

    def write_groups(self, path: str, params: ModelParams) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("group,pi,n_soft,I,H,flagged\n")
            for g in range(params.n_components):
                fh.write(
                    f"{g},{float(params.pi[g])!r},{float(self.groups.n_soft[g])!r},"
                    f"{float(self.groups.info[g])!r},{float(self.groups.threshold[g])!r},"
                    f"{int(self.groups.flags[g])}\n"
                )


def build_report(
    dataset: EncodedDataset,
    params: ModelParams,
    resp: Responsibilities | None = None,
    epsilon: float = 0.05,
    mode: str = "binomial",
    decision: np.ndarray | None = None,
    threads: int = 1,
) -> DetectionReport:
    """Run the full detection pipeline; decision=None derives p(fraud | g)
    from the group scores as the relative information excess
    max(0, (I_g - (1+eps)*H_g) / I_g), which is positive exactly for flagged
    groups and grades them by how far past the randomness threshold they sit."""
    if resp is None:
        resp = e_step(dataset, params, threads=threads, want_gamma=False)
    groups = fraud_group_scores(dataset, resp, params, epsilon=epsilon, mode=mode)
    if decision is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            excess = 1.0 - (1.0 + epsilon) * groups.threshold / groups.info
        decision = np.where(groups.info > 0.0, np.clip(excess, 0.0, 1.0), 0.0)
    outliers = filter_outliers(dataset, params, epsilon, resp=resp)
    labels = infer_labels(resp, decision, outlier_mask=outliers)
    anomaly = anomaly_scores(dataset, params, resp=resp)
    assignments = resp.phi.argmax(axis=1)
    return DetectionReport(
        assignments=assignments,
        outlier_mask=outliers,
        label_scores=labels,
        anomaly=anomaly,
        groups=groups,
        decision=decision,
    )
