"""Domain types and deterministic math for factor analysis with clustered loading rows.

Observations follow ``x_i = Z Lc u_i + e_i`` where ``Z`` (p x G) allocates each
variable to one of ``G`` clusters and ``Lc`` (G x K) holds one loading row per
cluster. Cluster indices are 0-based throughout the library; files written by the
CLI use 1-based cluster numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigurationError, InvalidInputError, NumericError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class DataMatrix:
    """Observation matrix (rows = samples, columns = variables)."""

    values: np.ndarray
    variable_labels: tuple = ()
    centered: bool = False
    sample_index: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InvalidInputError("data must be a 2-d array")
        n, p = values.shape
        if n < 2 or p < 1:
            raise InvalidInputError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise InvalidInputError(f"non-finite value at row {i}, column {j}")
        labels = tuple(self.variable_labels) if len(self.variable_labels) else tuple(range(p))
        if len(labels) != p:
            raise InvalidInputError(f"{len(labels)} labels for {p} columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_labels", labels)
        if self.centered:
            scale = np.maximum(np.abs(values).max(axis=0), 1.0)
            if np.any(np.abs(values.mean(axis=0)) > 1e-10 * scale):
                raise InvalidInputError("centered=True but column means are not zero")

    @classmethod
    def from_array(cls, values, variable_labels: Sequence = (), center: bool = True,
                   sample_index=None) -> "DataMatrix":
        values = np.asarray(values, dtype=float)
        if center:
            values = values - values.mean(axis=0)
        return cls(values, tuple(variable_labels), centered=center, sample_index=sample_index)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def sample_covariance(self) -> np.ndarray:
        """Maximum-likelihood covariance ``X'X / n`` (data assumed centered)."""
        return self.values.T @ self.values / self.n


@dataclass(frozen=True)
class Partition:
    """Allocation of ``p`` variables to ``G`` clusters; empty clusters are allowed."""

    assignment: np.ndarray
    G: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ConfigurationError("assignment must be a non-empty 1-d vector")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.round(a)):
                raise ConfigurationError("assignment must hold integer labels")
        a = a.astype(np.intp)
        if self.G < 1:
            raise ConfigurationError(f"G must be positive, got {self.G}")
        if a.min() < 0 or a.max() >= self.G:
            raise ConfigurationError(f"cluster labels must lie in [0, {self.G - 1}]")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "G", int(self.G))

    @property
    def p(self) -> int:
        return self.assignment.size

    @property
    def occupancy(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.G)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == g)

    def allocation_matrix(self) -> np.ndarray:
        """Binary p x G matrix ``Z``."""
        Z = np.zeros((self.p, self.G))
        Z[np.arange(self.p), self.assignment] = 1.0
        return Z

    def relabel(self, perm) -> "Partition":
        """Return the partition with cluster ``g`` renamed to ``perm[g]``."""
        perm = np.asarray(perm)
        return Partition(perm[self.assignment], self.G)

    def with_moved(self, variables, target: int) -> "Partition":
        a = self.assignment.copy()
        a[np.asarray(variables, dtype=np.intp)] = target
        return Partition(a, self.G)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a partition from arbitrary labels, numbering clusters by first appearance."""
        labels = np.asarray(labels)
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return cls(order[inverse.ravel()], len(first))


@dataclass(frozen=True)
class Hyperparameters:
    sigma_lambda: float = 5.0
    alpha: float = 2.5
    beta: np.ndarray = field(default_factory=lambda: np.ones(1))
    alpha_z: float = 1.0

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        if self.sigma_lambda <= 0 or self.alpha <= 0 or self.alpha_z <= 0 or np.any(beta <= 0):
            raise ConfigurationError("all hyperparameters must be strictly positive")

    @classmethod
    def from_data(cls, data: DataMatrix, sigma_lambda: float = 5.0, alpha: float = 2.5,
                  alpha_z: float = 1.0) -> "Hyperparameters":
        """Default priors: ``beta_j = (alpha - 1) / [S^-1]_jj``.

        A pseudo-inverse replaces the inverse when the sample covariance is singular.
        """
        S = np.cov(data.values, rowvar=False).reshape(data.p, data.p)
        try:
            prec_diag = np.diag(np.linalg.inv(S))
            if np.any(prec_diag <= 0) or not np.all(np.isfinite(prec_diag)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            prec_diag = np.diag(np.linalg.pinv(S))
            prec_diag = np.where(prec_diag > 0, prec_diag, 1.0 / np.maximum(np.diag(S), 1e-12))
        return cls(sigma_lambda, alpha, (alpha - 1.0) / prec_diag, alpha_z)


@dataclass
class SamplerState:
    """One MCMC state. Mutable; owned by a single chain."""

    loadings: np.ndarray
    psi: np.ndarray
    partition: Partition
    scores: np.ndarray
    loglik: float = np.nan

    @property
    def K(self) -> int:
        return self.loadings.shape[1]

    @property
    def G(self) -> int:
        return self.partition.G

    @classmethod
    def build(cls, data: DataMatrix, partition: Partition, loadings, psi, scores) -> "SamplerState":
        state = cls(np.array(loadings, dtype=float), np.array(psi, dtype=float), partition,
                    np.array(scores, dtype=float))
        state.validate(data, check_loglik=False)
        state.loglik = log_likelihood(data, state)
        return state

    def copy(self) -> "SamplerState":
        return SamplerState(self.loadings.copy(), self.psi.copy(), self.partition,
                            self.scores.copy(), self.loglik)

    def validate(self, data: Optional[DataMatrix] = None, check_loglik: bool = True) -> None:
        G, K = self.loadings.shape
        if G != self.partition.G:
            raise ConfigurationError(f"loadings have {G} rows but partition has G={self.partition.G}")
        if self.psi.shape != (self.partition.p,):
            raise ConfigurationError("psi length does not match the partition")
        if self.scores.ndim != 2 or self.scores.shape[1] != K:
            raise ConfigurationError("scores must be n x K")
        if np.any(self.psi <= 0):
            raise InvalidInputError("uniquenesses must be strictly positive")
        if not (np.all(np.isfinite(self.loadings)) and np.all(np.isfinite(self.scores))):
            raise InvalidInputError("non-finite loadings or scores")
        if data is not None:
            if data.p != self.partition.p or data.n != self.scores.shape[0]:
                raise ConfigurationError("state dimensions do not match the data")
            if check_loglik:
                ref = log_likelihood(data, self)
                if not np.isclose(self.loglik, ref, rtol=1e-8, atol=1e-8):
                    raise NumericError(f"cached loglik {self.loglik} != recomputed {ref}")


def _check_dims(partition: Partition, loadings: np.ndarray) -> np.ndarray:
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim != 2 or loadings.shape[0] != partition.G:
        raise ConfigurationError(
            f"loadings shape {loadings.shape} incompatible with G={partition.G}")
    return loadings


def expand_loadings(partition: Partition, loadings) -> np.ndarray:
    """Full p x K loading matrix ``Z @ Lc`` (row ``j`` is the row of its cluster)."""
    loadings = _check_dims(partition, loadings)
    return loadings[partition.assignment]


def model_covariance(partition: Partition, loadings, psi) -> np.ndarray:
    L = expand_loadings(partition, loadings)
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (partition.p,):
        raise ConfigurationError("psi length does not match the partition")
    sigma = L @ L.T
    sigma[np.diag_indices_from(sigma)] += psi
    return sigma


def covariance_to_correlation(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    d = np.diag(sigma)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("covariance diagonal must be strictly positive")
    s = 1.0 / np.sqrt(d)
    R = sigma * s[:, None] * s[None, :]
    R = 0.5 * (R + R.T)
    np.clip(R, -1.0, 1.0, out=R)
    R[np.diag_indices_from(R)] = 1.0
    return R


def n_params(p: int, K: int, G: Optional[int] = None) -> int:
    """Covariance parameter count: ``G*K + p`` clustered, ``p*K + p`` for standard FA."""
    return (p if G is None else G) * K + p


def residual_ss(data: DataMatrix, partition: Partition, loadings, scores) -> np.ndarray:
    """Column sums of squared residuals, i.e. the diagonal of ``(X - U L~')'(X - U L~')``."""
    L = expand_loadings(partition, loadings)
    R = data.values - np.asarray(scores) @ L.T
    return np.einsum("ij,ij->j", R, R)


def _loglik_from_rss(rss: np.ndarray, psi: np.ndarray, n: int) -> float:
    p = psi.size
    return float(-0.5 * (n * p * LOG_2PI + n * np.log(psi).sum() + (rss / psi).sum()))


def log_likelihood(data: DataMatrix, state: SamplerState) -> float:
    """Conditional Gaussian log-likelihood of ``X`` given loadings, scores and ``Psi``."""
    if state.scores.shape[0] != data.n or state.partition.p != data.p:
        raise ConfigurationError("state dimensions do not match the data")
    rss = residual_ss(data, state.partition, state.loadings, state.scores)
    psi = state.psi
    terms = -0.5 * (data.n * (LOG_2PI + np.log(psi)) + rss / psi)
    bad = ~np.isfinite(terms)
    if bad.any():
        raise NumericError(f"non-finite log-likelihood contribution at column {np.flatnonzero(bad)[0]}")
    return float(terms.sum())


def log_ppm_cohesion(occupancy, alpha_z: float) -> float:
    """Unnormalised log prior of a partition, over occupied clusters only."""
    occ = np.asarray(occupancy)
    occ = occ[occ > 0]
    return float(occ.size * np.log(alpha_z) + gammaln(occ).sum())


def log_prior(state: SamplerState, hyper: Hyperparameters) -> float:
    if np.any(state.psi <= 0):
        raise InvalidInputError("uniquenesses must be strictly positive")
    s2 = hyper.sigma_lambda ** 2
    Lc = state.loadings
    lp_load = -0.5 * (Lc.size * (LOG_2PI + np.log(s2)) + (Lc ** 2).sum() / s2)
    U = state.scores
    lp_scores = -0.5 * (U.size * LOG_2PI + (U ** 2).sum())
    a, b, psi = hyper.alpha, np.broadcast_to(hyper.beta, state.psi.shape), state.psi
    lp_psi = np.sum(a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(psi) - b / psi)
    return float(lp_load + lp_scores + lp_psi
                 + log_ppm_cohesion(state.partition.occupancy, hyper.alpha_z))


def log_posterior_unnorm(data: DataMatrix, state: SamplerState, hyper: Hyperparameters) -> float:
    return log_likelihood(data, state) + log_prior(state, hyper)


def factor_marginal_loglik(S: np.ndarray, n: int, L: np.ndarray, psi: np.ndarray) -> float:
    """Log-likelihood of ``n`` centered samples with ML covariance ``S`` under
    ``N(0, L L' + diag(psi))``.

    Uses the Woodbury identity so only K x K systems are factorised.
    """
    psi = np.asarray(psi, dtype=float)
    p, K = L.shape
    W = L / psi[:, None]
    A = np.eye(K) + L.T @ W
    cA = np.linalg.cholesky(A)
    logdet = np.log(psi).sum() + 2.0 * np.log(np.diag(cA)).sum()
    B = W.T @ S @ W
    Y = np.linalg.solve(cA, B)
    quad = (np.diag(S) / psi).sum() - np.trace(np.linalg.solve(cA, Y.T))
    return float(-0.5 * n * (p * LOG_2PI + logdet + quad))
