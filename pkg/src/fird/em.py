"""Regularized EM for the adversarial-pair mixture.

Each outer iteration evaluates the objective, takes an E-step, then updates
mu/beta in closed form and pi/alpha by a converged fixed-point inner loop.
The regularizer pushes pi and alpha toward sparsity (entries whose expected
counts fall below their weight decay to the probability floor) and beta toward
uniformity, which is what separates the synchronization distribution from the
randomness distribution per feature.

All row scans run in fixed-size blocks whose partial results are combined in
block order, so results are bit-identical for a given seed regardless of the
thread count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import EncodedDataset
from .model import (
    DEFAULT_PROB_FLOOR,
    ModelParams,
    RegWeights,
    clamp_simplex,
    init_params,
    normalize_lambda,
)

# Rows are scanned in blocks of this size; partials combine in block order.
BLOCK_ROWS = 2048


class NumericFailure(RuntimeError):
    """A non-finite value appeared during fitting."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class FitConfig:
    """Knobs for fit(); defaults match the command line."""

    G: int
    lambda1: float = 0.5
    lambda2: float = 0.5
    tol: float = 1e-6
    max_outer_iters: int = 500
    inner_tol: float = 1e-8
    max_inner_iters: int = 100
    prob_floor: float = DEFAULT_PROB_FLOOR
    seed: int = 0

    def __post_init__(self) -> None:
        if self.G < 1:
            raise ValueError(f"need at least one component, got G={self.G}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularizer strengths must be non-negative")
        if not (0 < self.prob_floor < 1e-3):
            raise ValueError("prob_floor must be a small positive number")


@dataclass
class Responsibilities:
    """E-step outputs, materialized row-major.

    phi[n, g] is the posterior over components (zero for frozen components);
    gamma[n, g, m] the posterior probability that feature m of row n came from
    the synchronization branch; row_info[n, g] the negative log-likelihood of
    row n under component g alone (the detection information score).
    """

    phi: np.ndarray                    # (N, G)
    row_loglik: np.ndarray             # (N,)
    row_info: np.ndarray               # (N, G)
    gamma: np.ndarray | None = None    # (N, G, M) when materialized


@dataclass
class TraceRow:
    iteration: int
    objective: float
    active_components: int
    seconds: float


@dataclass
class FitTrace:
    """Objective history; seconds are wall-clock and excluded from determinism."""

    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False
    pruned: list[tuple[int, int]] = field(default_factory=list)  # (iteration, g)
    resets: list[tuple[int, int, int]] = field(default_factory=list)  # (iteration, m, g)

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.rows]

    @property
    def n_iterations(self) -> int:
        return len(self.rows)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,objective,active_components,seconds\n")
            for r in self.rows:
                fh.write(
                    f"{r.iteration},{r.objective!r},{r.active_components},{r.seconds:.6f}\n"
                )


@dataclass
class FitResult:
    params: ModelParams
    trace: FitTrace
    responsibilities: Responsibilities | None


class _LogParams:
    """Per-iteration log caches; alpha/beta logs stored (D_m, G) for row gathers."""

    def __init__(self, params: ModelParams):
        with np.errstate(divide="ignore"):
            self.log_pi = np.log(params.pi)
            self.log_mu = np.log(params.mu)
            self.log_one_minus_mu = np.log1p(-params.mu)
            self.la_T = [np.ascontiguousarray(np.log(a).T) for a in params.alpha]
            self.lb_T = [np.ascontiguousarray(np.log(b).T) for b in params.beta]
        self.dims = params.dims
        self.G = params.n_components
        self.M = params.n_features


def _block_mix(codes_blk: np.ndarray, logp: _LogParams):
    """Mixture terms for one row block.

    Returns (smix, gammas): smix[b, g] = sum_m log(gamma + gamma_bar) and
    gammas[m][b, g] the synchronization posteriors. UNK codes contribute the
    uniform mass 1/D_m to both branches.
    """
    B = codes_blk.shape[0]
    smix = np.zeros((B, logp.G))
    gammas: list[np.ndarray] = []
    for m in range(logp.M):
        codes = codes_blk[:, m]
        unk = codes < 0
        safe = np.where(unk, 0, codes)
        la = logp.la_T[m][safe]
        lb = logp.lb_T[m][safe]
        if unk.any():
            la = la.copy()
            lb = lb.copy()
            la[unk] = -math.log(logp.dims[m])
            lb[unk] = -math.log(logp.dims[m])
        lg = logp.log_mu[:, m] + la
        lgb = logp.log_one_minus_mu[:, m] + lb
        lmix = np.logaddexp(lg, lgb)
        smix += lmix
        with np.errstate(invalid="ignore"):
            g_tilde = np.exp(lg - lmix)
        dead = np.isneginf(lmix)
        if dead.any():
            # zero-probability cell: fall back to the uninformative value,
            # matching the unknown-code convention
            g_tilde = np.where(dead, np.exp(logp.log_mu[:, m]), g_tilde)
        gammas.append(g_tilde)
    return smix, gammas


def _block_posteriors(codes_blk: np.ndarray, logp: _LogParams):
    """(phi, row_loglik, row_info, gammas) for one block."""
    smix, gammas = _block_mix(codes_blk, logp)
    acc = logp.log_pi + smix
    hi = acc.max(axis=1)
    dead = np.isneginf(hi)
    safe_hi = np.where(dead, 0.0, hi)
    with np.errstate(divide="ignore"):
        row_loglik = safe_hi + np.log(np.exp(acc - safe_hi[:, None]).sum(axis=1))
    with np.errstate(invalid="ignore"):
        phi = np.exp(acc - row_loglik[:, None])
    if dead.any():
        # rows impossible under every component: uniform over active ones
        active = np.isfinite(logp.log_pi)
        phi[dead] = active / max(active.sum(), 1)
    return phi, row_loglik, -smix, gammas


def _block_stats(codes_blk: np.ndarray, logp: _LogParams):
    """Log-likelihood and sufficient-statistic partials for one block."""
    phi, row_loglik, _, gammas = _block_posteriors(codes_blk, logp)
    G, M = logp.G, logp.M
    s_phi = phi.sum(axis=0)
    s_mu = np.empty((G, M))
    s_alpha: list[np.ndarray] = []
    s_beta: list[np.ndarray] = []
    col = np.arange(G)
    for m in range(M):
        w_sync = gammas[m] * phi
        s_mu[:, m] = w_sync.sum(axis=0)
        w_rand = phi - w_sync
        codes = codes_blk[:, m]
        unk = codes < 0
        if unk.any():
            w_sync = np.where(unk[:, None], 0.0, w_sync)
            w_rand = np.where(unk[:, None], 0.0, w_rand)
        safe = np.where(unk, 0, codes)
        flat = (safe[:, None] * G + col).ravel()
        d = logp.dims[m]
        s_alpha.append(
            np.bincount(flat, weights=w_sync.ravel(), minlength=d * G).reshape(d, G).T
        )
        s_beta.append(
            np.bincount(flat, weights=w_rand.ravel(), minlength=d * G).reshape(d, G).T
        )
    return float(row_loglik.sum()), s_phi, s_mu, s_alpha, s_beta


def _iter_blocks(n_rows: int):
    for start in range(0, n_rows, BLOCK_ROWS):
        yield start, min(start + BLOCK_ROWS, n_rows)


def _map_blocks(fn, codes: np.ndarray, threads: int):
    """Apply fn to each block; results come back in block order."""
    spans = list(_iter_blocks(codes.shape[0]))
    if threads <= 1 or len(spans) <= 1:
        return [fn(codes[a:b]) for a, b in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda sp: fn(codes[sp[0]:sp[1]]), spans))


def _stream_stats(dataset: EncodedDataset, logp: _LogParams, threads: int):
    parts = _map_blocks(lambda blk: _block_stats(blk, logp), dataset.codes, threads)
    loglik = math.fsum(p[0] for p in parts)
    s_phi = parts[0][1].copy()
    s_mu = parts[0][2].copy()
    s_alpha = [a.copy() for a in parts[0][3]]
    s_beta = [b.copy() for b in parts[0][4]]
    for _, p_phi, p_mu, p_alpha, p_beta in parts[1:]:
        s_phi += p_phi
        s_mu += p_mu
        for m in range(logp.M):
            s_alpha[m] += p_alpha[m]
            s_beta[m] += p_beta[m]
    return loglik, s_phi, s_mu, s_alpha, s_beta


def e_step(
    dataset: EncodedDataset,
    params: ModelParams,
    threads: int = 1,
    want_gamma: bool = True,
) -> Responsibilities:
    """Posterior responsibilities for every row under the current parameters."""
    logp = _LogParams(params)
    N, G, M = dataset.n_rows, params.n_components, params.n_features
    phi = np.empty((N, G))
    row_loglik = np.empty(N)
    row_info = np.empty((N, G))
    gamma = np.empty((N, G, M)) if want_gamma else None

    def run(span):
        a, b = span
        blk_phi, blk_ll, blk_info, gammas = _block_posteriors(dataset.codes[a:b], logp)
        phi[a:b] = blk_phi
        row_loglik[a:b] = blk_ll
        row_info[a:b] = blk_info
        if gamma is not None:
            for m in range(M):
                gamma[a:b, :, m] = gammas[m]

    spans = list(_iter_blocks(N))
    if threads <= 1 or len(spans) <= 1:
        for sp in spans:
            run(sp)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    return Responsibilities(phi=phi, row_loglik=row_loglik, row_info=row_info, gamma=gamma)


def _reg_value(params: ModelParams, reg: RegWeights) -> float:
    """Regularizer contribution over active components (finite by the floor)."""
    active = params.active
    if not active.any():
        return 0.0
    val = -float(np.dot(reg.lam1[active], np.log(params.pi[active])))
    for m in range(params.n_features):
        la = np.log(params.alpha[m][active])
        lb = np.log(params.beta[m][active])
        val -= float((reg.lam2[m][active] * (la - lb)).sum())
    return val


def objective(
    dataset: EncodedDataset,
    params: ModelParams,
    reg: RegWeights,
    threads: int = 1,
) -> float:
    """Regularized log-likelihood: data term plus sparsity/smoothness terms."""
    logp = _LogParams(params)
    parts = _map_blocks(
        lambda blk: float(_block_posteriors(blk, logp)[1].sum()), dataset.codes, threads
    )
    return math.fsum(parts) + _reg_value(params, reg)


def _suffstats_from_resp(dataset: EncodedDataset, resp: Responsibilities):
    """Sufficient statistics from materialized responsibilities.

    Accumulates per block in block order, matching the streaming path bit for
    bit, so m_step_* composed with e_step reproduce fit()'s internal updates.
    """
    if resp.gamma is None:
        raise ValueError("responsibilities must carry gamma (e_step want_gamma=True)")
    N, G = resp.phi.shape
    M = dataset.n_features
    s_phi = np.zeros(G)
    s_mu = np.zeros((G, M))
    s_alpha = [np.zeros((G, d)) for d in dataset.dims]
    s_beta = [np.zeros((G, d)) for d in dataset.dims]
    col = np.arange(G)
    for a, b in _iter_blocks(N):
        phi = resp.phi[a:b]
        s_phi += phi.sum(axis=0)
        for m in range(M):
            w_sync = resp.gamma[a:b, :, m] * phi
            s_mu[:, m] += w_sync.sum(axis=0)
            w_rand = phi - w_sync
            codes = dataset.codes[a:b, m]
            unk = codes < 0
            if unk.any():
                w_sync = np.where(unk[:, None], 0.0, w_sync)
                w_rand = np.where(unk[:, None], 0.0, w_rand)
            safe = np.where(unk, 0, codes)
            flat = (safe[:, None] * G + col).ravel()
            d = dataset.dims[m]
            s_alpha[m] += (
                np.bincount(flat, weights=w_sync.ravel(), minlength=d * G).reshape(d, G).T
            )
            s_beta[m] += (
                np.bincount(flat, weights=w_rand.ravel(), minlength=d * G).reshape(d, G).T
            )
    return s_phi, s_mu, s_alpha, s_beta


def _closed_update(s_phi, s_mu, s_beta, reg: RegWeights, params: ModelParams, floor: float):
    """Exact maximizers for mu and beta; zero-mass active rows fall back to
    the prior limit (mu 0.5, beta uniform). Frozen rows keep their values."""
    active = params.active
    mass = s_phi > 0
    update = active & mass
    mu = params.mu.copy()
    mu[update] = s_mu[update] / s_phi[update, None]
    np.clip(mu, 0.0, 1.0, out=mu)
    mu[active & ~mass] = 0.5

    beta = [b.copy() for b in params.beta]
    for m in range(params.n_features):
        num = reg.lam2[m] + s_beta[m]
        denom = num.sum(axis=1, keepdims=True)
        rows = update & (denom[:, 0] > 0)
        beta[m][rows] = clamp_simplex(num[rows] / denom[rows], floor)
        dead = active & ~rows
        if dead.any():
            beta[m][dead] = 1.0 / beta[m].shape[1]
    return mu, beta


def _fp_simplex(coef: np.ndarray, total, lam: np.ndarray, start: np.ndarray,
                inner_tol: float, max_iters: int, floor: float):
    """Converge the per-entry fixed-point map, then project to the simplex.

    Each row solves x_i <- (coef_i + lam_i x_i) / (total + lam_i / x_i); entries
    whose coefficient is below their weight decay geometrically to the floor,
    which is what sparsifies alpha and prunes mixture weights. Normalizing
    after convergence lands on the constrained maximizer, provided entries
    that decayed onto the floor stay there: only the interior entries share
    the leftover mass. Renormalizing every sweep would bias the result.

    Returns (solution, dead) where dead marks rows whose entries all decayed
    to the floor (every coefficient zero); such rows are reset to uniform.
    """
    x = np.maximum(start, floor)
    total = np.asarray(total, dtype=float)
    for _ in range(max_iters):
        x_new = (coef + lam * x) / (total + lam / x)
        np.maximum(x_new, floor, out=x_new)
        delta = np.abs(x_new - x).max()
        x = x_new
        if delta < inner_tol:
            break
    if not np.isfinite(x).all():
        raise NumericFailure("fixed-point update produced non-finite values")

    rows = np.atleast_2d(x)
    at_floor = rows <= floor
    n_floor = at_floor.sum(axis=1, keepdims=True)
    leftover = 1.0 - floor * n_floor
    live_sum = np.where(at_floor, 0.0, rows).sum(axis=1, keepdims=True)
    dead = live_sum[:, 0] <= 0.0
    live_sum[dead] = 1.0  # placeholder; fully-decayed rows become uniform below
    out = np.where(at_floor, floor, rows * (leftover / live_sum))
    out[dead] = 1.0 / rows.shape[1]
    if x.ndim == 1:
        return out[0], bool(dead[0])
    return out, dead


def _fp_update(
    s_phi, s_mu, s_alpha, reg: RegWeights, params: ModelParams,
    inner_tol: float, max_inner_iters: int, floor: float, n_rows: int,
):
    """Fixed-point updates of pi (over active components) and alpha.

    Returns (pi, alpha, resets) where resets lists the (feature, component)
    pairs whose alpha row fully decayed this update and was replaced by the
    uniform row. Only rows that actually changed are reported, so a branch
    that stays dead is reset once, not every iteration.
    """
    active = params.active
    pi = np.zeros_like(params.pi)
    pi[active], _ = _fp_simplex(
        s_phi[active], float(n_rows), reg.lam1[active], params.pi[active],
        inner_tol, max_inner_iters, floor,
    )
    alpha = [a.copy() for a in params.alpha]
    resets: list[tuple[int, int]] = []
    for m in range(params.n_features):
        totals = s_alpha[m][active].sum(axis=1, keepdims=True)
        lam_rows = reg.lam2[m][active]
        live = (totals[:, 0] + lam_rows.sum(axis=1)) > 0
        if not live.any():
            continue
        rows = np.flatnonzero(active)[live]
        solved, dead = _fp_simplex(
            s_alpha[m][rows], totals[live], reg.lam2[m][rows], params.alpha[m][rows],
            inner_tol, max_inner_iters, floor,
        )
        if dead.any():
            uniform = 1.0 / params.alpha[m].shape[1]
            was_uniform = (params.alpha[m][rows] == uniform).all(axis=1)
            resets.extend((m, int(g)) for g in rows[dead & ~was_uniform])
        alpha[m][rows] = solved
    return pi, alpha, resets


def m_step_closed(
    dataset: EncodedDataset,
    resp: Responsibilities,
    reg: RegWeights,
    params: ModelParams,
    prob_floor: float = DEFAULT_PROB_FLOOR,
):
    """Closed-form mu and beta maximizers given responsibilities."""
    s_phi, s_mu, _, s_beta = _suffstats_from_resp(dataset, resp)
    return _closed_update(s_phi, s_mu, s_beta, reg, params, prob_floor)


def m_step_fixed_point(
    dataset: EncodedDataset,
    resp: Responsibilities,
    reg: RegWeights,
    params: ModelParams,
    inner_tol: float = 1e-8,
    max_inner_iters: int = 100,
    prob_floor: float = DEFAULT_PROB_FLOOR,
):
    """Fixed-point pi and alpha maximizers given responsibilities."""
    s_phi, s_mu, s_alpha, _ = _suffstats_from_resp(dataset, resp)
    pi, alpha, _ = _fp_update(
        s_phi, s_mu, s_alpha, reg, params,
        inner_tol, max_inner_iters, prob_floor, dataset.n_rows,
    )
    return pi, alpha


def _check_codes(dataset: EncodedDataset) -> None:
    dims = np.asarray(dataset.dims, dtype=np.int64)
    codes = dataset.codes
    if codes.size == 0:
        raise ValueError("dataset has no rows")
    if (codes < 0).any() or (codes >= dims[None, :]).any():
        raise ValueError("dataset codes out of range for its vocabulary")


def fit(
    dataset: EncodedDataset,
    config: FitConfig,
    threads: int = 1,
    keep_responsibilities: bool = True,
    initial: ModelParams | None = None,
) -> FitResult:
    """Run regularized EM to convergence.

    Two structural cleanups interrupt plain coordinate ascent: components
    whose weight falls below 1/(10N) are frozen (weight zeroed, survivors
    renormalized), and synchronization rows whose soft counts vanish are
    reset to uniform rather than left as stale spikes. Both change what the
    regularizer sums over, so the objective is only comparable between
    iterations with the same structure; the convergence test is suspended
    for one iteration after either event, and the trace records them.

    `initial` warm-starts EM from the given parameters instead of the seeded
    random init; it must match the dataset's dims and the configured G.
    """
    _check_codes(dataset)
    N = dataset.n_rows
    dims = dataset.dims
    if initial is None:
        params = init_params(config.G, dims, config.seed, config.prob_floor)
    else:
        if initial.n_components != config.G:
            raise ValueError(
                f"initial params have {initial.n_components} components, config has {config.G}"
            )
        if initial.dims != dims:
            raise ValueError("initial params dims disagree with the dataset")
        initial.validate()
        params = initial.copy()
    reg = normalize_lambda(config.lambda1, config.lambda2, N, config.G, dims)
    prune_below = 1.0 / (10.0 * N)

    trace = FitTrace()
    started = time.perf_counter()
    prev_objective: float | None = None
    last_change = -2

    for it in range(config.max_outer_iters):
        logp = _LogParams(params)
        loglik, s_phi, s_mu, s_alpha, s_beta = _stream_stats(dataset, logp, threads)
        obj = loglik + _reg_value(params, reg)
        if not np.isfinite(obj):
            raise NumericFailure("objective is not finite", iteration=it)
        trace.rows.append(
            TraceRow(
                iteration=it,
                objective=obj,
                active_components=int(params.active.sum()),
                seconds=time.perf_counter() - started,
            )
        )
        if prev_objective is not None and it > last_change + 1:
            improvement = (obj - prev_objective) / max(1.0, abs(prev_objective))
            if improvement < config.tol:
                trace.converged = True
                break
        prev_objective = obj

        try:
            mu, beta = _closed_update(s_phi, s_mu, s_beta, reg, params, config.prob_floor)
            pi, alpha, resets = _fp_update(
                s_phi, s_mu, s_alpha, reg, params,
                config.inner_tol, config.max_inner_iters, config.prob_floor, N,
            )
        except NumericFailure as exc:
            raise NumericFailure(str(exc), iteration=it) from None
        params = ModelParams(pi=pi, mu=mu, alpha=alpha, beta=beta)
        if resets:
            trace.resets.extend((it, m, g) for m, g in resets)
            last_change = it

        doomed = params.active & ((params.pi < prune_below) | (s_phi <= 0))
        if doomed.any():
            survivors = params.active & ~doomed
            if not survivors.any():
                raise NumericFailure("all components pruned", iteration=it)
            params.pi[doomed] = 0.0
            params.pi[survivors] /= params.pi[survivors].sum()
            trace.pruned.extend((it, int(g)) for g in np.flatnonzero(doomed))
            last_change = it

    resp = e_step(dataset, params, threads=threads) if keep_responsibilities else None
    return FitResult(params=params, trace=trace, responsibilities=resp)


def fit_annealed(
    dataset: EncodedDataset,
    config: FitConfig,
    survivor_rows: Sequence[float] = (125.0, 250.0),
    threads: int = 1,
    keep_responsibilities: bool = True,
) -> FitResult:
    """EM with a mixture-weight continuation schedule.

    Overprovisioned fits (G well above the true cluster count) tend to leave
    several converged components covering one cluster: each shard holds enough
    rows to survive the configured weight, and plain EM has no merge moves.
    This runs `fit` through a ladder of lambda1 values — a gentle weight first
    so structure can form without starving components, then rungs whose
    per-component survival pseudo-count lambda1*N/G is pinned at `survivor_rows`
    rows so duplicate shards decay into their siblings, and finally the
    configured lambda1 — warm-starting each stage from the previous one. The
    returned result is a converged fixed point of the configured objective;
    only the starting point differs from a plain `fit`.
    """
    N = dataset.n_rows
    ladder = [min(config.lambda1, 0.5)]
    ladder += [max(config.lambda1, rows * config.G / N) for rows in survivor_rows]
    ladder.append(config.lambda1)
    rungs = [lam for i, lam in enumerate(ladder) if i == 0 or lam != ladder[i - 1]]

    result: FitResult | None = None
    for i, lam in enumerate(rungs):
        last = i == len(rungs) - 1
        stage = replace(config, lambda1=lam)
        result = fit(
            dataset, stage, threads=threads,
            keep_responsibilities=keep_responsibilities and last,
            initial=None if result is None else result.params,
        )
    assert result is not None
    return result
