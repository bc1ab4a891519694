"""Maximum-likelihood factor analysis fitted by EM (Rubin and Thayer)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, UsageError
from .model import DataMatrix, factor_marginal_loglik, n_params


@dataclass
class StandardFaFit:
    loadings: np.ndarray
    psi: np.ndarray
    loglik: float
    n_params: int
    n_iter: int = 0
    converged: bool = False
    loglik_trace: list = field(default_factory=list, repr=False)

    @property
    def K(self) -> int:
        return self.loadings.shape[1]

    def posterior_scores(self, data: DataMatrix, loadings=None) -> np.ndarray:
        """Conditional means ``E[u_i | x_i]`` for every row of ``data``."""
        L = self.loadings if loadings is None else np.asarray(loadings)
        W = L / self.psi[:, None]
        A = np.eye(L.shape[1]) + L.T @ W
        return np.linalg.solve(A, (data.values @ W).T).T


def _initial_loadings(S: np.ndarray, K: int):
    evals, evecs = np.linalg.eigh(S)
    evals, evecs = evals[::-1][:K], evecs[:, ::-1][:, :K]
    noise = max(np.mean(np.linalg.eigvalsh(S)[: S.shape[0] - K]), 1e-12) if S.shape[0] > K else 0.0
    L = evecs * np.sqrt(np.maximum(evals - noise, 1e-6 * max(evals[0], 1e-12)))
    # sign convention keeps EM starts reproducible across LAPACK builds
    L *= np.where(L[np.abs(L).argmax(axis=0), np.arange(K)] < 0, -1.0, 1.0)
    return L


def fit_standard_fa(data: DataMatrix, K: int, max_em_iter: int = 1000, tol: float = 1e-8,
                    psi_floor: float = 1e-5) -> StandardFaFit:
    """Fit ``N(0, L L' + Psi)`` by EM.

    Parameters
    ----------
    data : DataMatrix
        Centered observations.
    K : int
        Number of factors, ``1 <= K < p``.
    max_em_iter : int
        Iteration cap.
    tol : float
        Stop when the relative log-likelihood gain drops below ``tol``.
    psi_floor : float
        Lower bound on each uniqueness as a fraction of the variable's variance.
        The bounded M-step is still a coordinatewise maximiser, so EM stays monotone.

    Raises
    ------
    UsageError
        If ``K`` is not in ``[1, p)``.
    NumericError
        If the log-likelihood decreases, which signals a bug or severe round-off.
    """
    n, p = data.n, data.p
    if not 1 <= K < p:
        raise UsageError(f"need 1 <= K < p, got K={K}, p={p}")
    S = data.sample_covariance()
    sdiag = np.diag(S).copy()
    floor = psi_floor * np.maximum(sdiag, 1e-12)
    L = _initial_loadings(S, K)
    psi = np.maximum(sdiag - (L ** 2).sum(axis=1), floor)
    ll = factor_marginal_loglik(S, n, L, psi)
    trace = [ll]
    converged = False
    it = 0
    I = np.eye(K)
    for it in range(1, max_em_iter + 1):
        W = L / psi[:, None]
        A = I + L.T @ W
        beta = np.linalg.solve(A, W.T)  # L' Sigma^-1 via Woodbury
        SbT = S @ beta.T
        Ezz = I - beta @ L + beta @ SbT
        L = np.linalg.solve(Ezz, SbT.T).T
        psi = np.maximum(sdiag - np.einsum("jk,jk->j", L, SbT), floor)
        ll_new = factor_marginal_loglik(S, n, L, psi)
        if not np.isfinite(ll_new):
            raise NumericError(f"EM produced a non-finite log-likelihood at iteration {it}")
        if ll_new < ll - 1e-8 * max(1.0, abs(ll)):
            raise NumericError(f"EM log-likelihood decreased at iteration {it}: {ll} -> {ll_new}")
        trace.append(ll_new)
        gain = ll_new - ll
        ll = ll_new
        if gain <= tol * max(1.0, abs(ll)):
            converged = True
            break
    return StandardFaFit(L, psi, ll, n_params(p, K), it, converged, trace)
