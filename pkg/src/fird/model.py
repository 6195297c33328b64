"""Model parameters, initialization, regularizer weights, and persistence.

A model over M categorical features with G mixture components holds, per
component g and feature m, an adversarial pair of multinomials: a
synchronization distribution alpha (driven sparse by the regularizer) and a
randomness distribution beta (driven smooth), mixed by a Bernoulli weight mu.
Components with pi[g] == 0 are frozen: they keep their last parameters but are
excluded from every sum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import UNK_CODE

MODEL_FORMAT_VERSION = 1

# Probability entries are clamped at least this far from zero so every log
# taken anywhere in the pipeline is finite.
DEFAULT_PROB_FLOOR = 1e-12


class ModelFormatError(ValueError):
    """Model file missing, malformed, or of an unsupported version."""


def clamp_simplex(rows: np.ndarray, floor: float) -> np.ndarray:
    """Clamp entries to at least ``floor`` and renormalize each row to sum 1."""
    out = np.maximum(rows, floor)
    out /= out.sum(axis=-1, keepdims=True)
    return out


@dataclass
class ModelParams:
    """All free parameters; alpha/beta are per-feature (G, D_m) matrices."""

    pi: np.ndarray                 # (G,) mixture weights, 0 marks a frozen component
    mu: np.ndarray                 # (G, M) synchronization rates in [0, 1]
    alpha: list[np.ndarray]        # alpha[m] is (G, D_m), rows on the simplex
    beta: list[np.ndarray]         # beta[m] is (G, D_m), rows on the simplex

    @property
    def n_components(self) -> int:
        return int(self.pi.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.mu.shape[1])

    @property
    def dims(self) -> list[int]:
        return [int(a.shape[1]) for a in self.alpha]

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of live components."""
        return self.pi > 0.0

    def copy(self) -> "ModelParams":
        return ModelParams(
            pi=self.pi.copy(),
            mu=self.mu.copy(),
            alpha=[a.copy() for a in self.alpha],
            beta=[b.copy() for b in self.beta],
        )

    def validate(self, atol: float = 1e-8) -> None:
        G, M = self.pi.shape[0], self.mu.shape[1]
        if self.mu.shape != (G, M):
            raise ValueError(f"mu shape {self.mu.shape} != ({G}, {M})")
        if len(self.alpha) != M or len(self.beta) != M:
            raise ValueError("alpha/beta must have one matrix per feature")
        if not np.isfinite(self.pi).all() or (self.pi < 0).any():
            raise ValueError("pi must be finite and non-negative")
        if abs(self.pi.sum() - 1.0) > atol:
            raise ValueError(f"pi sums to {self.pi.sum()!r}, expected 1")
        if ((self.mu < 0) | (self.mu > 1)).any():
            raise ValueError("mu entries must lie in [0, 1]")
        for m, (a, b) in enumerate(zip(self.alpha, self.beta)):
            if a.shape != b.shape or a.shape[0] != G:
                raise ValueError(f"feature {m}: alpha/beta shapes disagree")
            for name, mat in (("alpha", a), ("beta", b)):
                if not np.isfinite(mat).all() or (mat <= 0).any():
                    raise ValueError(f"feature {m}: {name} must be finite and positive")
                if np.abs(mat.sum(axis=1) - 1.0).max() > atol:
                    raise ValueError(f"feature {m}: {name} rows must sum to 1")


def init_params(
    G: int,
    dims: Sequence[int],
    seed: int,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> ModelParams:
    """Deterministic starting point: uniform pi, balanced mu, random simplices.

    mu starts at exactly 0.5 so neither branch of the adversarial pair is
    favored before the data weighs in.
    """
    if G < 1:
        raise ValueError(f"need at least one component, got G={G}")
    if any(d < 1 for d in dims):
        raise ValueError("every feature needs at least one category")
    rng = np.random.default_rng(seed)
    pi = np.full(G, 1.0 / G)
    mu = np.full((G, len(dims)), 0.5)
    alpha = [clamp_simplex(rng.random((G, d)), prob_floor) for d in dims]
    beta = [clamp_simplex(rng.random((G, d)), prob_floor) for d in dims]
    return ModelParams(pi=pi, mu=mu, alpha=alpha, beta=beta)


@dataclass(frozen=True)
class RegWeights:
    """Per-parameter regularizer weights after dataset-size normalization.

    lam1[g] applies to log pi[g]; lam2[m][g, i] applies to the alpha/beta pair
    of feature m. Raw strengths are scaled by N/G (and per category for lam2)
    so one CLI-level value behaves comparably across dataset shapes.
    """

    lam1: np.ndarray               # (G,)
    lam2: list[np.ndarray]         # lam2[m] is (G, D_m)


def normalize_lambda(
    lambda1: float, lambda2: float, n_rows: int, G: int, dims: Sequence[int]
) -> RegWeights:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("regularizer strengths must be non-negative")
    lam1 = np.full(G, lambda1 * n_rows / G)
    lam2 = [np.full((G, d), lambda2 * n_rows / (2.0 * G * d)) for d in dims]
    return RegWeights(lam1=lam1, lam2=lam2)


def log_feature_terms(
    row: np.ndarray, g: int, params: ModelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature log branch masses for one row under component g.

    Returns (log_gamma, log_gamma_bar) with log_gamma[m] =
    log(mu[g, m] * alpha[m][g, x_m]) and the bar term its (1 - mu) * beta
    counterpart. An UNK code substitutes the uniform mass 1/D_m for both
    alpha and beta, leaving the mu weighting in place.
    """
    M = params.n_features
    log_gamma = np.empty(M)
    log_gamma_bar = np.empty(M)
    with np.errstate(divide="ignore"):
        log_mu = np.log(params.mu[g])
        log_one_minus_mu = np.log1p(-params.mu[g])
        for m in range(M):
            code = int(row[m])
            d = params.alpha[m].shape[1]
            if code == UNK_CODE:
                la = lb = -np.log(d)
            elif 0 <= code < d:
                la = np.log(params.alpha[m][g, code])
                lb = np.log(params.beta[m][g, code])
            else:
                raise ValueError(f"feature {m}: code {code} out of range [0, {d})")
            log_gamma[m] = log_mu[m] + la
            log_gamma_bar[m] = log_one_minus_mu[m] + lb
    return log_gamma, log_gamma_bar


@dataclass
class LoadedModel:
    """A model file's contents: parameters plus fit-time context."""

    params: ModelParams
    vocab: list[list[str]]
    lambda1: float
    lambda2: float
    seed: int


def save_model(
    path: str,
    params: ModelParams,
    vocab: list[list],
    lambda1: float,
    lambda2: float,
    seed: int,
) -> None:
    """Write the model as JSON; floats serialize via repr and round-trip exactly."""
    dims = params.dims
    if [len(v) for v in vocab] != dims:
        raise ValueError("vocabulary sizes disagree with parameter dims")
    G, M = params.n_components, params.n_features
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "G": G,
        "dims": dims,
        "vocab": [[str(v) for v in vocab_m] for vocab_m in vocab],
        "pi": params.pi.tolist(),
        "mu": params.mu.tolist(),
        "alpha": [[params.alpha[m][g].tolist() for m in range(M)] for g in range(G)],
        "beta": [[params.beta[m][g].tolist() for m in range(M)] for g in range(G)],
        "reg": {"lambda1": lambda1, "lambda2": lambda2},
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str) -> LoadedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ModelFormatError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON: {exc}") from None

    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model format version {version!r}"
        )
    try:
        G = int(doc["G"])
        dims = [int(d) for d in doc["dims"]]
        vocab = [list(v) for v in doc["vocab"]]
        pi = np.asarray(doc["pi"], dtype=float)
        mu = np.asarray(doc["mu"], dtype=float)
        alpha_gm = doc["alpha"]
        beta_gm = doc["beta"]
        reg = doc["reg"]
        lambda1 = float(reg["lambda1"])
        lambda2 = float(reg["lambda2"])
        seed = int(doc["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model file: {exc}") from None

    M = len(dims)
    alpha = [
        np.asarray([alpha_gm[g][m] for g in range(G)], dtype=float) for m in range(M)
    ]
    beta = [
        np.asarray([beta_gm[g][m] for g in range(G)], dtype=float) for m in range(M)
    ]
    params = ModelParams(pi=pi, mu=mu, alpha=alpha, beta=beta)
    try:
        params.validate()
    except ValueError as exc:
        raise ModelFormatError(f"{path}: invalid parameters: {exc}") from None
    if [len(v) for v in vocab] != dims:
        raise ModelFormatError(f"{path}: vocabulary sizes disagree with dims")
    return LoadedModel(
        params=params, vocab=vocab, lambda1=lambda1, lambda2=lambda2, seed=seed
    )
