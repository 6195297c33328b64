"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fird.data import EncodedDataset
from fird.model import ModelParams, RegWeights, clamp_simplex


def make_dataset(codes, dims=None, labels=None) -> EncodedDataset:
    """Wrap an integer code matrix in a dataset with trivial vocabularies."""
    codes = np.asarray(codes, dtype=np.int32)
    if codes.ndim != 2:
        raise ValueError("codes must be 2-D")
    if dims is None:
        dims = [int(codes[:, m].max()) + 1 for m in range(codes.shape[1])]
    vocab = [list(range(d)) for d in dims]
    names = [f"f{m}" for m in range(codes.shape[1])]
    lab = None if labels is None else np.asarray(labels)
    return EncodedDataset(codes=codes, vocab=vocab, feature_names=names, labels=lab)


def random_params(rng, G, dims, floor=1e-12) -> ModelParams:
    """A valid random parameter point (interior of the feasible set)."""
    pi = rng.dirichlet(np.full(G, 2.0))
    pi = np.maximum(pi, 1e-6)
    pi = pi / pi.sum()
    mu = rng.uniform(0.05, 0.95, size=(G, len(dims)))
    alpha = [clamp_simplex(rng.dirichlet(np.full(d, 1.5), size=G), floor) for d in dims]
    beta = [clamp_simplex(rng.dirichlet(np.full(d, 1.5), size=G), floor) for d in dims]
    return ModelParams(pi=pi, mu=mu, alpha=alpha, beta=beta)


def random_reg(rng, G, dims, scale=1.0) -> RegWeights:
    """Strictly positive random regularization weights."""
    lam1 = rng.uniform(0.1, 1.0, size=G) * scale
    lam2 = [rng.uniform(0.05, 0.5, size=(G, d)) * scale for d in dims]
    return RegWeights(lam1=lam1, lam2=lam2)


def tiny_instance(seed, with_unk=False):
    """A random instance at enumeration scale: N<=5, M<=3, G<=3, D_m<=3."""
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 6))
    M = int(rng.integers(1, 4))
    G = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 4)) for _ in range(M)]
    codes = np.stack(
        [rng.integers(0, d, size=N) for d in dims], axis=1
    ).astype(np.int32)
    if with_unk and N > 1:
        codes[rng.integers(0, N), rng.integers(0, M)] = -1
    dataset = make_dataset(codes, dims=dims)
    params = random_params(rng, G, dims)
    reg = random_reg(rng, G, dims)
    return dataset, params, reg


def oracle_suffstats(codes, phi, gamma, dims):
    """Sufficient statistics computed the slow, obvious way.

    Returns (s_phi, s_mu, s_alpha, s_beta); UNK positions keep their mu
    weight but attribute no category mass.
    """
    N, M = codes.shape
    G = phi.shape[1]
    s_phi = phi.sum(axis=0)
    s_mu = np.zeros((G, M))
    s_alpha = [np.zeros((G, d)) for d in dims]
    s_beta = [np.zeros((G, d)) for d in dims]
    for n in range(N):
        for g in range(G):
            for m in range(M):
                w = phi[n, g] * gamma[n, g, m]
                s_mu[g, m] += w
                x = codes[n, m]
                if x >= 0:
                    s_alpha[m][g, x] += w
                    s_beta[m][g, x] += phi[n, g] - w
    return s_phi, s_mu, s_alpha, s_beta


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
