"""Choosing the number of factors ``K`` and variable clusters ``G``.

``initialize_kg`` gives a starting configuration from standard FA fits whose
loading rows are clustered and collapsed to cluster means. ``greedy_search``
then explores neighbouring configurations with full MCMC fits, compared by
BIC-MCMC.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .exceptions import UsageError
from .fa import StandardFaFit, fit_standard_fa
from .mbc import cluster_loading_rows
from .model import DataMatrix, Hyperparameters, factor_marginal_loglik, n_params
from .sampler import (
    ChainTrace,
    PointEstimates,
    SamplerConfig,
    initialize_state,
    point_estimates,
    run_chain,
)

log = logging.getLogger(__name__)


@dataclass
class ModelScore:
    K: int
    G: int
    bic: Optional[float] = None
    bicm: Optional[float] = None
    aicm: Optional[float] = None
    bic_mcmc: Optional[float] = None

    def __post_init__(self):
        if all(v is None for v in (self.bic, self.bicm, self.aicm, self.bic_mcmc)):
            raise ValueError("a ModelScore needs at least one criterion")


@dataclass
class InitCandidate:
    K: int
    G: int
    loglik: float
    n_params: int
    bic: float
    assignment: np.ndarray = field(repr=False)


def criteria_from_loglik(loglik, n: int, nu: int, K: int = 0, G: int = 0,
                         scale: str = "log") -> ModelScore:
    """BICM, AICM and BIC-MCMC from a sequence of posterior log-likelihood draws.

    With ``scale="log"`` (default) the mean and variance are taken over the
    log-likelihood values. ``scale="likelihood"`` uses moments of the likelihood
    itself, evaluated stably relative to the maximum; the variance usually
    underflows to zero for realistic sample sizes.
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.size == 0:
        raise UsageError("empty log-likelihood trace")
    l_max = float(ll.max())
    bic_mcmc = 2.0 * l_max - nu * np.log(n)
    if ll.size < 2:
        return ModelScore(K, G, bic_mcmc=bic_mcmc)
    if scale == "log":
        log_mean = float(ll.mean())
        s2 = float(ll.var(ddof=1))
    elif scale == "likelihood":
        log_mean = float(logsumexp(ll) - np.log(ll.size))
        rel = np.exp(ll - l_max)
        s2 = float(rel.var(ddof=1) * np.exp(2.0 * l_max))
    else:
        raise UsageError(f"unknown scale {scale!r}")
    return ModelScore(
        K, G,
        bicm=2.0 * l_max - 2.0 * s2 * np.log(n),
        aicm=2.0 * log_mean - 2.0 * s2,
        bic_mcmc=bic_mcmc,
    )


def compute_criteria(trace: ChainTrace, n: int, K: int, G: int, p: Optional[int] = None,
                     source: str = "marginal", scale: str = "log") -> ModelScore:
    """Information criteria of one chain.

    ``source="marginal"`` scores each kept draw by the Gaussian likelihood with the
    scores integrated out, ``N(0, L~L~' + Psi)``; ``"conditional"`` uses the
    likelihood given the sampled factor scores.
    """
    ll = {"marginal": trace.kept_marginal_loglik,
          "conditional": trace.kept_loglik}.get(source)
    if ll is None:
        raise UsageError(f"unknown likelihood source {source!r}")
    p = trace.psi.shape[1] if p is None else p
    return criteria_from_loglik(ll, n, n_params(p, K, G), K, G, scale)


def collapse_loadings(loadings, assignment) -> np.ndarray:
    """Replace each loading row by the mean row of its cluster."""
    L = np.asarray(loadings, dtype=float)
    a = np.asarray(assignment)
    G = int(a.max()) + 1
    sums = np.zeros((G, L.shape[1]))
    np.add.at(sums, a, L)
    return (sums / np.bincount(a, minlength=G)[:, None])[a]


def score_initial_configurations(data: DataMatrix, K_max: int = 10, G_max: Optional[int] = None,
                                 seed: int = 0, fa_fits: Optional[dict] = None) -> list:
    """BIC of the collapsed model for every ``k = 1..K_max`` (capped at ``p - 1``)."""
    if K_max < 1:
        raise UsageError("K_max must be at least 1")
    G_max = min(data.p, 30) if G_max is None else min(G_max, data.p)
    S = data.sample_covariance()
    out = []
    for k in range(1, min(K_max, data.p - 1) + 1):
        fa = fa_fits.get(k) if fa_fits is not None else None
        if fa is None:
            fa = fit_standard_fa(data, k)
            if fa_fits is not None:
                fa_fits[k] = fa
        assignment, G_k = cluster_loading_rows(fa.loadings, G_max, seed=seed)
        L_bar = collapse_loadings(fa.loadings, assignment)
        ll = factor_marginal_loglik(S, data.n, L_bar, fa.psi)
        nu = n_params(data.p, k, G_k)
        out.append(InitCandidate(k, G_k, ll, nu, 2.0 * ll - nu * np.log(data.n), assignment))
    return out


def initialize_kg(data: DataMatrix, K_max: int = 10, G_max: Optional[int] = None,
                  seed: int = 0, fa_fits: Optional[dict] = None):
    """Return the ``(K_init, G_init)`` pair with the highest collapsed-model BIC."""
    cands = score_initial_configurations(data, K_max, G_max, seed, fa_fits)
    best = max(cands, key=lambda c: c.bic)
    return best.K, best.G


@dataclass
class FitResult:
    K: int
    G: int
    trace: ChainTrace
    score: ModelScore
    estimates: Optional[PointEstimates] = None
    history: list = field(default_factory=list)

    def summarize(self) -> PointEstimates:
        if self.estimates is None:
            self.estimates = point_estimates(self.trace)
        return self.estimates


def fit_model(data: DataMatrix, K: int, G: int, hyper: Hyperparameters, config: SamplerConfig,
              fa_fit: Optional[StandardFaFit] = None) -> FitResult:
    """Initialise from standard FA + k-means and run one chain for ``(K, G)``."""
    init = initialize_state(data, K, G, seed=config.seed, fa_fit=fa_fit)
    trace = run_chain(data, K, G, hyper, config, init)
    return FitResult(K, G, trace, compute_criteria(trace, data.n, K, G, data.p))


def neighbours(K: int, G: int, axis: bool = False):
    corners = [(K + 1, G + 1), (K + 1, G - 1), (K - 1, G + 1), (K - 1, G - 1)]
    if axis:
        corners += [(K + 1, G), (K - 1, G), (K, G + 1), (K, G - 1)]
    return corners


@dataclass
class SearchStep:
    ring: int
    K: int
    G: int
    bic_mcmc: float
    bicm: Optional[float]
    aicm: Optional[float]
    incumbent: bool


def greedy_search(data: DataMatrix, K_init: int, G_init: int, hyper: Hyperparameters,
                  config: SamplerConfig, search_budget: int = 10, axis_neighbors: bool = False,
                  fit_fn: Optional[Callable] = None, fa_fits: Optional[dict] = None):
    """Local search over ``(K, G)`` driven by BIC-MCMC.

    Each ring fits the unvisited neighbours of the incumbent (corner moves
    ``(K +/- 1, G +/- 1)``, plus axis moves when ``axis_neighbors``) and moves to
    the best of them if it beats the incumbent. ``search_budget`` caps the number
    of rings; 0 fits only the starting configuration. ``fa_fits`` is an optional
    ``{K: StandardFaFit}`` cache shared with :func:`score_initial_configurations`.

    Returns
    -------
    (FitResult, list of SearchStep)
    """
    if K_init < 1 or G_init < 1:
        raise UsageError("K_init and G_init must be at least 1")
    fa_cache: dict = {} if fa_fits is None else fa_fits

    def default_fit(K, G):
        if K not in fa_cache:
            fa_cache[K] = fit_standard_fa(data, K)
        return fit_model(data, K, G, hyper, replace(config, seed=_config_seed(config.seed, K, G)),
                         fa_fit=fa_cache[K])

    fit_fn = fit_fn or default_fit
    fits: dict = {}
    history: list = []

    def evaluate(K, G, ring):
        res = fit_fn(K, G)
        fits[(K, G)] = res
        history.append(SearchStep(ring, K, G, res.score.bic_mcmc, res.score.bicm,
                                  res.score.aicm, False))
        log.info("ring %d: (K=%d, G=%d) BIC-MCMC=%.3f", ring, K, G, res.score.bic_mcmc)
        return res

    best = evaluate(K_init, G_init, 0)
    history[-1].incumbent = True
    for ring in range(1, search_budget + 1):
        cands = []
        for K, G in neighbours(best.K, best.G, axis_neighbors):
            if K < 1 or G < 1 or K >= data.p or G > data.p or (K, G) in fits:
                continue
            cands.append(evaluate(K, G, ring))
        if not cands:
            break
        top = max(cands, key=lambda r: r.score.bic_mcmc)
        if top.score.bic_mcmc <= best.score.bic_mcmc:
            break
        best = top
        for step in history:
            if (step.K, step.G) == (top.K, top.G):
                step.incumbent = True
    best.history = history
    best.summarize()
    return best, history


def _config_seed(seed: int, K: int, G: int) -> int:
    # distinct, reproducible chain seeds per configuration
    return int(np.random.SeedSequence([seed, K, G]).generate_state(1, np.uint64)[0])
