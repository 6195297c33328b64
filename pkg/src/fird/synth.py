"""Seeded synthetic data following the model's own generative process.

Structured rows pick a cluster, then per feature flip a synchronization coin:
heads draws from that cluster's sparse support, tails draws uniformly. A
configurable batch of fully uniform noise rows (labeled d = -1) is appended
for fraud-mix experiments, where structured rows play the fraud class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import DataError, EncodedDataset, FeatureSchema, FeatureSpec


@dataclass(frozen=True)
class GenConfig:
    """Generation knobs; defaults give the recovery-test pattern."""

    n_rows: int                            # structured rows before noise
    n_features: int
    g_true: int
    dims: int | Sequence[int] = 50         # D_m, scalar or per feature
    pi: Sequence[float] | None = None      # cluster weights, uniform if None
    mu: float | np.ndarray | None = None   # sync rates; None = 0.8/0.2 pattern
    support_size: int = 2                  # values carrying alpha* mass
    nfr: float = 0.0                       # appended noise rows per structured row
    seed: int = 0
    m_sweep: tuple[int, ...] | None = None  # runtime preset: M values to emit

    def __post_init__(self) -> None:
        if self.n_rows < 1 or self.n_features < 1 or self.g_true < 1:
            raise ValueError("n_rows, n_features, g_true must be positive")
        if self.support_size < 1:
            raise ValueError("support_size must be >= 1")
        if self.nfr < 0:
            raise ValueError("nfr must be non-negative")

    def dims_list(self) -> list[int]:
        if isinstance(self.dims, int):
            return [self.dims] * self.n_features
        dims = [int(d) for d in self.dims]
        if len(dims) != self.n_features:
            raise ValueError("dims must match n_features")
        return dims


@dataclass
class GroundTruth:
    """Latents behind a generated dataset; noise rows carry d = -1."""

    d: np.ndarray       # (N_total,) cluster index or -1
    f: np.ndarray       # (N_total, M) sync indicators, 0 on noise rows
    fraud: np.ndarray   # (N_total,) True for structured rows

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("row,d,fraud\n")
            for n in range(self.d.shape[0]):
                fh.write(f"{n},{self.d[n]},{int(self.fraud[n])}\n")


def load_truth(path: str) -> GroundTruth:
    """Read a row,d,fraud CSV back (f indicators are not persisted)."""
    d: list[int] = []
    fraud: list[bool] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"ground truth file not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row", "d", "fraud"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns row,d,fraud")
        for rec in reader:
            d.append(int(rec["d"]))
            fraud.append(bool(int(rec["fraud"])))
    n = len(d)
    return GroundTruth(
        d=np.asarray(d, dtype=np.int64),
        f=np.zeros((n, 0), dtype=np.int8),
        fraud=np.asarray(fraud, dtype=bool),
    )


def default_mu_pattern(g_true: int, n_features: int, rng: np.random.Generator) -> np.ndarray:
    """0.8 on a random half of features per cluster, 0.2 elsewhere."""
    mu = np.full((g_true, n_features), 0.2)
    half = (n_features + 1) // 2
    for g in range(g_true):
        mu[g, rng.permutation(n_features)[:half]] = 0.8
    return mu


def generate(cfg: GenConfig) -> tuple[EncodedDataset, GroundTruth]:
    """Draw a dataset plus its latent ground truth, deterministically by seed.

    The RNG consumption order (mu pattern, supports, cluster draws, coin flips,
    values, noise rows) is fixed, so identical configs give identical bytes.
    """
    rng = np.random.default_rng(cfg.seed)
    N, M, G = cfg.n_rows, cfg.n_features, cfg.g_true
    dims = cfg.dims_list()
    if cfg.support_size > min(dims):
        raise ValueError("support_size exceeds a feature's vocabulary size")

    if cfg.pi is None:
        pi = np.full(G, 1.0 / G)
    else:
        pi = np.asarray(cfg.pi, dtype=float)
        if pi.shape != (G,) or (pi < 0).any() or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be a G-simplex vector")

    if cfg.mu is None:
        mu = default_mu_pattern(G, M, rng)
    elif np.isscalar(cfg.mu):
        mu = np.full((G, M), float(cfg.mu))
    else:
        mu = np.asarray(cfg.mu, dtype=float)
        if mu.shape != (G, M):
            raise ValueError(f"mu must have shape ({G}, {M})")
    if ((mu < 0) | (mu > 1)).any():
        raise ValueError("mu entries must lie in [0, 1]")

    supports = [
        [rng.choice(dims[m], size=cfg.support_size, replace=False) for m in range(M)]
        for g in range(G)
    ]

    d = rng.choice(G, size=N, p=pi)
    f = (rng.random((N, M)) < mu[d]).astype(np.int8)
    codes = np.empty((N, M), dtype=np.int32)
    for m in range(M):
        codes[:, m] = rng.integers(0, dims[m], size=N)
    for g in range(G):
        rows_g = d == g
        for m in range(M):
            sync = rows_g & (f[:, m] == 1)
            count = int(sync.sum())
            if count:
                codes[sync, m] = supports[g][m][rng.integers(0, cfg.support_size, size=count)]

    n_noise = int(np.floor(cfg.nfr * N))
    if n_noise:
        noise = np.empty((n_noise, M), dtype=np.int32)
        for m in range(M):
            noise[:, m] = rng.integers(0, dims[m], size=n_noise)
        codes = np.vstack([codes, noise])
        d = np.concatenate([d, np.full(n_noise, -1, dtype=d.dtype)])
        f = np.vstack([f, np.zeros((n_noise, M), dtype=np.int8)])

    fraud = np.concatenate([np.ones(N, dtype=bool), np.zeros(n_noise, dtype=bool)])
    dataset = EncodedDataset(
        codes=codes,
        vocab=[list(range(dims[m])) for m in range(M)],
        feature_names=[f"f{m}" for m in range(M)],
    )
    return dataset, GroundTruth(d=d, f=f, fraud=fraud)


def dataset_schema(dataset: EncodedDataset) -> FeatureSchema:
    """Schema describing a generated dataset: every feature categorical."""
    return FeatureSchema(
        features=tuple(FeatureSpec(name=n) for n in dataset.feature_names)
    )


def write_dataset_csv(dataset: EncodedDataset, path: str) -> None:
    """Write raw vocabulary values under the feature-name header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names)
        for n in range(dataset.n_rows):
            writer.writerow(
                [dataset.vocab[m][dataset.codes[n, m]] for m in range(dataset.n_features)]
            )


PRESETS = ("dcr", "lambda", "runtime")


def paper_analysis_preset(name: str) -> GenConfig:
    """Canned configurations for the dimension-capacity, regularizer, and
    runtime analyses."""
    if name in ("dcr", "lambda"):
        return GenConfig(n_rows=20000, n_features=20, g_true=10, dims=200)
    if name == "runtime":
        return GenConfig(
            n_rows=20000, n_features=10, g_true=10, dims=30,
            m_sweep=tuple(range(10, 101, 10)),
        )
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")


def sweep_configs(cfg: GenConfig) -> list[GenConfig]:
    """Expand a config with an m_sweep into one config per feature count."""
    if not cfg.m_sweep:
        return [cfg]
    return [replace(cfg, n_features=m, m_sweep=None) for m in cfg.m_sweep]
