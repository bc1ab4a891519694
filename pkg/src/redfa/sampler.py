"""Metropolis-within-Gibbs sampler for factor analysis with clustered loadings.

One sweep updates the factor scores, the cluster loading rows and the
uniquenesses from their Gaussian / inverse-gamma full conditionals, then makes
``moves_per_sweep`` block-reallocation attempts on the variable partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln
from sklearn.cluster import KMeans

from .exceptions import ConfigurationError, NumericError, UsageError
from .fa import StandardFaFit, fit_standard_fa
from .model import (
    LOG_2PI,
    DataMatrix,
    Hyperparameters,
    Partition,
    SamplerState,
    covariance_to_correlation,
    expand_loadings,
    factor_marginal_loglik,
    log_likelihood,
    log_ppm_cohesion,
    log_prior,
)


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 3000
    burn_in: int = 1000
    thin: int = 2
    seed: int = 0
    moves_per_sweep: Optional[int] = None  # None -> ceil(p / 10)
    distance_epsilon: float = 1e-8
    exact_group_ratio: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.n_iter < 0 or self.burn_in < 0 or self.thin < 1:
            raise ConfigurationError("n_iter, burn_in must be >= 0 and thin >= 1")
        if self.n_iter > 0 and self.burn_in >= self.n_iter:
            raise ConfigurationError("burn_in must be smaller than n_iter")
        if self.n_iter > 0 and self.thin > self.n_iter - self.burn_in:
            raise ConfigurationError("thin exceeds the number of post-burn-in sweeps")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.moves_per_sweep is not None and self.moves_per_sweep < 1:
            raise ConfigurationError("moves_per_sweep must be positive")
        if self.distance_epsilon <= 0:
            raise ConfigurationError("distance_epsilon must be positive")

    def resolved_moves(self, p: int) -> int:
        if self.moves_per_sweep is not None:
            return self.moves_per_sweep
        return max(1, math.ceil(p / 10))


@dataclass
class ChainTrace:
    K: int
    G: int
    config: SamplerConfig
    loadings: np.ndarray  # D x G x K, labels not aligned across draws
    psi: np.ndarray  # D x p
    assignments: np.ndarray  # D x p
    kept_loglik: np.ndarray
    kept_marginal_loglik: np.ndarray
    kept_logpost: np.ndarray
    loglik_trace: np.ndarray
    marginal_loglik_trace: np.ndarray
    accept_count: int
    attempt_count: int
    final_state: SamplerState
    loadings_label_variant: bool = True

    @property
    def n_kept(self) -> int:
        return self.psi.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.attempt_count if self.attempt_count else 0.0


# --- full conditionals -----------------------------------------------------

def score_posterior(data: DataMatrix, partition: Partition, loadings, psi):
    """Mean (n x K) and shared covariance (K x K) of the factor-score conditional."""
    L = expand_loadings(partition, loadings)
    W = L / np.asarray(psi)[:, None]
    A = np.eye(L.shape[1]) + L.T @ W
    cov = np.linalg.inv(A)
    cov = 0.5 * (cov + cov.T)
    mean = data.values @ W @ cov
    return mean, cov


def sample_scores(data: DataMatrix, partition: Partition, loadings, psi, rng) -> np.ndarray:
    mean, cov = score_posterior(data, partition, loadings, psi)
    try:
        c = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("score covariance is not positive definite") from exc
    return mean + rng.standard_normal(mean.shape) @ c.T


def cluster_precision_weights(partition: Partition, psi) -> np.ndarray:
    """Diagonal of ``Z' Psi^-1 Z``: the summed inverse uniquenesses of each cluster."""
    return np.bincount(partition.assignment, weights=1.0 / np.asarray(psi), minlength=partition.G)


def loading_precision(partition: Partition, scores, psi, sigma_lambda: float) -> np.ndarray:
    """``U'U kron Z'Psi^-1 Z + sigma^-2 I`` acting on the column-major ``vec(Lc)``."""
    U = np.asarray(scores)
    ZPZ = np.diag(cluster_precision_weights(partition, psi))
    P = np.kron(U.T @ U, ZPZ)
    P[np.diag_indices_from(P)] += sigma_lambda ** -2
    return P


def loading_posterior(data: DataMatrix, partition: Partition, scores, psi, sigma_lambda: float):
    """Mean (G x K) and covariance (GK x GK, column-major vec) of the loadings conditional."""
    P = loading_precision(partition, scores, psi, sigma_lambda)
    c = np.linalg.cholesky(P)
    rhs = _loading_rhs(data, partition, scores, psi)
    mean = cho_solve((c, True), rhs.ravel(order="F"))
    return mean.reshape(rhs.shape, order="F"), cho_solve((c, True), np.eye(P.shape[0]))


def _loading_rhs(data, partition, scores, psi):
    # Z' Psi^-1 X' U, G x K
    XtU = data.values.T @ np.asarray(scores)
    out = np.zeros((partition.G, XtU.shape[1]))
    np.add.at(out, partition.assignment, XtU / np.asarray(psi)[:, None])
    return out


def sample_cluster_loadings(data: DataMatrix, partition: Partition, scores, psi,
                            sigma_lambda: float, rng) -> np.ndarray:
    P = loading_precision(partition, scores, psi, sigma_lambda)
    try:
        c = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericError("loading precision is not positive definite") from exc
    rhs = _loading_rhs(data, partition, scores, psi)
    mean = cho_solve((c, True), rhs.ravel(order="F"))
    draw = mean + solve_triangular(c.T, rng.standard_normal(mean.size), lower=False)
    return draw.reshape(rhs.shape, order="F")


def sample_uniquenesses(data: DataMatrix, partition: Partition, loadings, scores,
                        alpha: float, beta, rng, rss: Optional[np.ndarray] = None) -> np.ndarray:
    """Inverse-gamma draws with shape ``alpha + n/2`` and rate ``beta_j + M_jj/2``."""
    if rss is None:
        L = expand_loadings(partition, loadings)
        R = data.values - np.asarray(scores) @ L.T
        rss = np.einsum("ij,ij->j", R, R)
    rate = np.broadcast_to(np.asarray(beta, dtype=float), rss.shape) + 0.5 * rss
    shape = alpha + 0.5 * data.n
    return rate / rng.standard_gamma(shape, size=rss.shape)


# --- allocation move ---------------------------------------------------------

def _harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1)))


def allocation_proposal_log_ratio(n_g1: int, n_g2: int, m: int) -> float:
    """Log of P(Z' -> Z) / P(Z -> Z') for the size/subset part of a block move."""
    return (math.log(_harmonic(n_g1)) - math.log(_harmonic(n_g2 + m))
            + gammaln(n_g1 + 1) + gammaln(n_g2 + 1)
            - gammaln(n_g1 - m + 1) - gammaln(n_g2 + m + 1))


def allocation_proposal_ratio_exact(n_g1: int, n_g2: int, m: int) -> Fraction:
    def h(k):
        return sum(Fraction(1, i) for i in range(1, k + 1))
    return (h(n_g1) / h(n_g2 + m)) * Fraction(
        math.factorial(n_g1) * math.factorial(n_g2),
        math.factorial(n_g1 - m) * math.factorial(n_g2 + m))


def rss_table(data: DataMatrix, loadings, scores, col_ss: Optional[np.ndarray] = None) -> np.ndarray:
    """``T[j, g] = ||x_j - U Lc_g||^2``, the residual sum of squares of variable ``j``
    if it were allocated to cluster ``g``."""
    U = np.asarray(scores)
    Lc = np.asarray(loadings)
    X = data.values
    if col_ss is None:
        col_ss = np.einsum("ij,ij->j", X, X)
    XtU = X.T @ U
    quad = np.einsum("gk,kl,gl->g", Lc, U.T @ U, Lc)
    return np.maximum(col_ss[:, None] - 2.0 * XtU @ Lc.T + quad[None, :], 0.0)


def _target_weights(loadings, g1: int, eps: float) -> np.ndarray:
    d = np.linalg.norm(loadings - loadings[g1], axis=1)
    w = 1.0 / np.maximum(d, eps)
    w[g1] = 0.0
    return w


def propose_allocation_move(state: SamplerState, data: DataMatrix, hyper: Hyperparameters,
                            config: SamplerConfig, rng, table: Optional[np.ndarray] = None):
    """One block-reallocation Metropolis-Hastings step on the partition.

    Moves ``M`` variables from a cluster ``g1`` to a cluster ``g2`` chosen with
    probability inversely proportional to the distance between their loading rows.
    On acceptance ``state.partition`` and ``state.loglik`` are updated in place.

    Returns
    -------
    (Partition, bool, float)
        Current partition, whether the proposal was accepted, and ``log R``
        (``-inf`` when the source cluster was empty).
    """
    part = state.partition
    G = part.G
    if G < 2:
        raise UsageError("allocation moves need G >= 2")
    occ = part.occupancy
    g1 = int(rng.integers(G))
    n1 = int(occ[g1])
    if n1 == 0:
        return part, False, -np.inf
    w1 = _target_weights(state.loadings, g1, config.distance_epsilon)
    g2 = int(rng.choice(G, p=w1 / w1.sum()))
    sizes = np.arange(1, n1 + 1)
    pm = 1.0 / sizes
    m = int(rng.choice(sizes, p=pm / pm.sum()))
    moved = rng.choice(part.members(g1), size=m, replace=False)
    n2 = int(occ[g2])

    if table is None:
        table = rss_table(data, state.loadings, state.scores)
    psi_m = state.psi[moved]
    d_loglik = -0.5 * float(np.sum((table[moved, g2] - table[moved, g1]) / psi_m))
    new_occ = occ.copy()
    new_occ[g1] -= m
    new_occ[g2] += m
    d_prior = log_ppm_cohesion(new_occ, hyper.alpha_z) - log_ppm_cohesion(occ, hyper.alpha_z)
    log_r = d_loglik + d_prior + allocation_proposal_log_ratio(n1, n2, m)
    if config.exact_group_ratio:
        w2 = _target_weights(state.loadings, g2, config.distance_epsilon)
        log_r += math.log(w1.sum()) - math.log(w2.sum())

    if math.log(rng.random()) < log_r:
        new_part = part.with_moved(moved, g2)
        if config.debug:
            old = state.loglik
            state.partition = new_part
            full = log_likelihood(data, state)
            if not np.isclose(full - old, d_loglik, rtol=1e-8, atol=1e-8 * max(1.0, abs(old))):
                raise NumericError(f"incremental loglik {d_loglik} != full difference {full - old}")
        state.partition = new_part
        state.loglik += d_loglik
        return new_part, True, log_r
    return part, False, log_r


# --- chain -------------------------------------------------------------------

def initialize_state(data: DataMatrix, K: int, G: int, seed: int = 0,
                     fa_fit: Optional[StandardFaFit] = None) -> SamplerState:
    """Starting values from a standard FA fit whose loading rows are grouped by k-means.

    The k-means centroids give the cluster loading rows, the FA uniquenesses give
    ``Psi`` and the scores are the FA conditional means under the collapsed loadings.
    """
    if not 1 <= G <= data.p:
        raise ConfigurationError(f"need 1 <= G <= p, got G={G}")
    if fa_fit is None or fa_fit.K != K:
        fa_fit = fit_standard_fa(data, K)
    rows = fa_fit.loadings
    if G == 1:
        labels = np.zeros(data.p, dtype=np.intp)
        centers = rows.mean(axis=0, keepdims=True)
    else:
        km = KMeans(n_clusters=G, n_init=10, random_state=seed % (2 ** 32)).fit(rows)
        labels, centers = km.labels_, km.cluster_centers_
    partition = Partition(labels, G)
    # k-means can leave a cluster empty when rows coincide; keep its centroid anyway
    scores = fa_fit.posterior_scores(data, centers[labels])
    return SamplerState.build(data, partition, centers, fa_fit.psi.copy(), scores)


def _loglik_from_table(table, assignment, psi, n):
    rss = table[np.arange(assignment.size), assignment]
    return float(-0.5 * (n * psi.size * LOG_2PI + n * np.log(psi).sum() + (rss / psi).sum()))


def run_chain(data: DataMatrix, K: int, G: int, hyper: Hyperparameters, config: SamplerConfig,
              init: SamplerState) -> ChainTrace:
    """Run one chain from ``init`` (which is copied, never mutated)."""
    if init.K != K or init.G != G:
        raise ConfigurationError(f"init has (K, G)=({init.K}, {init.G}), expected ({K}, {G})")
    init.validate(data, check_loglik=False)
    rng = np.random.default_rng(config.seed)
    state = init.copy()
    n, p = data.n, data.p
    X = data.values
    col_ss = np.einsum("ij,ij->j", X, X)
    S = data.sample_covariance()
    moves = config.resolved_moves(p) if G >= 2 else 0

    kept = {k: [] for k in ("loadings", "psi", "assign", "ll", "mll", "lpost")}
    ll_trace = np.empty(config.n_iter)
    mll_trace = np.empty(config.n_iter)
    accepted = attempts = 0
    for it in range(config.n_iter):
        stage = "scores"
        try:
            state.scores = sample_scores(data, state.partition, state.loadings, state.psi, rng)
            stage = "loadings"
            state.loadings = sample_cluster_loadings(data, state.partition, state.scores,
                                                     state.psi, hyper.sigma_lambda, rng)
            stage = "uniquenesses"
            table = rss_table(data, state.loadings, state.scores, col_ss)
            rss = table[np.arange(p), state.partition.assignment]
            state.psi = sample_uniquenesses(data, state.partition, state.loadings, state.scores,
                                            hyper.alpha, hyper.beta, rng, rss=rss)
            state.loglik = _loglik_from_table(table, state.partition.assignment, state.psi, n)
            stage = "allocation"
            for _ in range(moves):
                _, acc, _ = propose_allocation_move(state, data, hyper, config, rng, table)
                attempts += 1
                accepted += acc
            stage = "marginal likelihood"
            L = expand_loadings(state.partition, state.loadings)
            mll = factor_marginal_loglik(S, n, L, state.psi)
        except (np.linalg.LinAlgError, NumericError, FloatingPointError) as exc:
            raise NumericError(f"sampler failed at iteration {it} in the {stage} update: {exc}") from exc
        if not np.isfinite(state.loglik):
            raise NumericError(f"sampler failed at iteration {it}: non-finite log-likelihood")
        ll_trace[it] = state.loglik
        mll_trace[it] = mll
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            kept["loadings"].append(state.loadings.copy())
            kept["psi"].append(state.psi.copy())
            kept["assign"].append(state.partition.assignment.copy())
            kept["ll"].append(state.loglik)
            kept["mll"].append(mll)
            kept["lpost"].append(state.loglik + log_prior(state, hyper))

    def stack(key, shape):
        return np.array(kept[key]) if kept[key] else np.empty(shape)

    return ChainTrace(
        K=K, G=G, config=config,
        loadings=stack("loadings", (0, G, K)),
        psi=stack("psi", (0, p)),
        assignments=stack("assign", (0, p)).astype(np.intp),
        kept_loglik=stack("ll", (0,)),
        kept_marginal_loglik=stack("mll", (0,)),
        kept_logpost=stack("lpost", (0,)),
        loglik_trace=ll_trace,
        marginal_loglik_trace=mll_trace,
        accept_count=accepted,
        attempt_count=attempts,
        final_state=state,
    )


# --- posterior summaries -----------------------------------------------------

@dataclass
class PointEstimates:
    covariance: np.ndarray
    correlation: np.ndarray
    partition: Partition
    coclustering: np.ndarray
    psi_mean: np.ndarray
    loadings_mean: np.ndarray
    partition_method: str = "binder"
    loadings_label_variant: bool = True


def coclustering_matrix(assignments, G: int) -> np.ndarray:
    """Posterior probability that each pair of variables shares a cluster."""
    A = np.asarray(assignments)
    D, p = A.shape
    Z = np.zeros((p, D * G))
    Z[np.tile(np.arange(p), D), (np.arange(D)[:, None] * G + A).ravel()] = 1.0
    C = Z @ Z.T / D
    C[np.diag_indices_from(C)] = 1.0
    return C


def binder_losses(candidates, coclust) -> np.ndarray:
    """Expected Binder loss (unit costs, up to a constant) of each candidate partition."""
    cands = np.asarray(candidates)
    cost = 1.0 - 2.0 * np.asarray(coclust)
    np.fill_diagonal(cost, 0.0)
    out = np.empty(len(cands))
    for i, a in enumerate(cands):
        same = a[:, None] == a[None, :]
        out[i] = 0.5 * cost[same].sum()
    return out


def point_estimates(trace: ChainTrace, partition_method: str = "binder") -> PointEstimates:
    if trace.n_kept == 0:
        raise UsageError("cannot summarise an empty trace")
    D, G, K = trace.loadings.shape
    p = trace.psi.shape[1]
    # mean of L~ L~' + Psi over draws, as one product of the stacked expanded loadings
    B = np.concatenate([trace.loadings[d][trace.assignments[d]] for d in range(D)], axis=1)
    cov = B @ B.T / D
    cov[np.diag_indices(p)] += trace.psi.mean(axis=0)
    cov = 0.5 * (cov + cov.T)
    coclust = coclustering_matrix(trace.assignments, G)
    if partition_method == "binder":
        uniq, first = np.unique(trace.assignments, axis=0, return_index=True)
        losses = binder_losses(uniq, coclust)
        # ties resolved towards the earliest kept draw
        best = min(range(len(uniq)), key=lambda i: (round(losses[i], 9), first[i]))
        chosen = trace.assignments[first[best]]
    elif partition_method == "map":
        chosen = trace.assignments[int(np.argmax(trace.kept_logpost))]
    else:
        raise UsageError(f"unknown partition_method {partition_method!r}")
    return PointEstimates(
        covariance=cov,
        correlation=covariance_to_correlation(cov),
        partition=Partition(chosen, G),
        coclustering=coclust,
        psi_mean=trace.psi.mean(axis=0),
        loadings_mean=trace.loadings.mean(axis=0),
        partition_method=partition_method,
    )
