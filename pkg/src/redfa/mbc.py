"""Model-based clustering of points with Gaussian mixtures selected by BIC.

Three covariance structures are supported, named as in mclust:

* ``EII`` spherical, equal volume
* ``VII`` spherical, varying volume
* ``VVI`` diagonal, varying volume and shape
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .exceptions import UsageError

MODELS = ("EII", "VII", "VVI")


@dataclass
class MixtureFit:
    model: str
    G: int
    loglik: float
    bic: float
    resp: np.ndarray
    means: np.ndarray
    variances: np.ndarray  # G x d, per-dimension variances
    weights: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.resp.argmax(axis=1)


def _n_free(model: str, G: int, d: int) -> int:
    cov = {"EII": 1, "VII": G, "VVI": G * d}[model]
    return (G - 1) + G * d + cov


def _m_step(Y, resp, model, floor):
    Nk = resp.sum(axis=0)
    weights = Nk / Nk.sum()
    means = (resp.T @ Y) / Nk[:, None]
    # per-component, per-dimension weighted squared deviations
    sq = np.stack([(resp[:, g][:, None] * (Y - means[g]) ** 2).sum(axis=0) for g in range(len(Nk))])
    d = Y.shape[1]
    if model == "EII":
        v = sq.sum() / (Nk.sum() * d)
        var = np.full_like(sq, v)
    elif model == "VII":
        var = np.repeat((sq.sum(axis=1) / (Nk * d))[:, None], d, axis=1)
    else:
        var = sq / Nk[:, None]
    degenerate = bool(np.any(var < floor) or np.any(Nk < 1e-8))
    return weights, means, np.maximum(var, floor), degenerate


def _log_dens(Y, weights, means, var):
    out = np.empty((Y.shape[0], means.shape[0]))
    for g in range(means.shape[0]):
        out[:, g] = (np.log(weights[g]) - 0.5 * np.sum(np.log(2 * np.pi * var[g]))
                     - 0.5 * np.sum((Y - means[g]) ** 2 / var[g], axis=1))
    return out


def kmeans_labels(Y, G: int, seed: int = 0) -> np.ndarray:
    if G == 1:
        return np.zeros(len(Y), dtype=int)
    return KMeans(n_clusters=G, n_init=10, random_state=seed).fit(Y).labels_


def fit_mixture(Y, G: int, model: str = "VVI", seed: int = 0, max_iter: int = 500,
                tol: float = 1e-8, var_floor: float | None = None, init_labels=None) -> MixtureFit:
    """EM for one ``(G, model)`` pair, started from a k-means partition.

    A fit whose covariance collapses below ``var_floor`` is reported with
    ``bic = -inf``, the analogue of mclust returning NA for singular models.
    """
    Y = np.asarray(Y, dtype=float)
    N, d = Y.shape
    if model not in MODELS:
        raise UsageError(f"unknown covariance model {model!r}")
    if var_floor is None:
        var_floor = 1e-8 * max(Y.var(axis=0).mean(), 1e-300)
    labels = kmeans_labels(Y, G, seed) if init_labels is None else np.asarray(init_labels)
    resp = np.zeros((N, G))
    resp[np.arange(N), labels] = 1.0
    ll = -np.inf
    degenerate = False
    for _ in range(max_iter):
        weights, means, var, degenerate = _m_step(Y, resp, model, var_floor)
        if degenerate:
            break
        logd = _log_dens(Y, weights, means, var)
        norm = logsumexp(logd, axis=1)
        resp = np.exp(logd - norm[:, None])
        ll_new = float(norm.sum())
        if ll_new - ll <= tol * max(1.0, abs(ll_new)):
            ll = ll_new
            break
        ll = ll_new
    bic = -np.inf if degenerate else 2.0 * ll - _n_free(model, G, d) * np.log(N)
    return MixtureFit(model, G, ll, bic, resp, means, var, weights)


def select_mixture(Y, G_max: int, models=MODELS, seed: int = 0):
    """Fit every ``(G, model)`` with ``G <= G_max`` and return the best fit plus the BIC table."""
    Y = np.asarray(Y, dtype=float)
    N = Y.shape[0]
    table = {}
    best = None
    for G in range(1, min(G_max, N) + 1):
        init = kmeans_labels(Y, G, seed)
        for model in models:
            fit = fit_mixture(Y, G, model, seed=seed, init_labels=init)
            table[(G, model)] = fit.bic
            if best is None or fit.bic > best.bic:
                best = fit
    return best, table


def cluster_loading_rows(loadings, G_max: int, seed: int = 0):
    """Cluster the rows of a p x K loading matrix; returns ``(assignment, G_selected)``.

    Labels are renumbered ``0..G_selected-1`` in order of first appearance, and
    components that receive no row are dropped.
    """
    Y = np.asarray(loadings, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] < 2:
        raise UsageError("need at least two rows to cluster")
    spread = np.abs(Y - Y.mean(axis=0)).max()
    if spread <= 1e-12 * max(1.0, np.abs(Y).max()):
        return np.zeros(Y.shape[0], dtype=np.intp), 1
    best, _ = select_mixture(Y, G_max, seed=seed)
    labels = best.labels
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    assignment = order[inverse.ravel()].astype(np.intp)
    return assignment, len(first)
