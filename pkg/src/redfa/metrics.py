"""Comparison metrics for correlation matrices and variable partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, UsageError


def _pair(R, R_hat):
    R = np.asarray(R, dtype=float)
    R_hat = np.asarray(R_hat, dtype=float)
    if R.shape != R_hat.shape or R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise UsageError(f"need two square matrices of equal size, got {R.shape} and {R_hat.shape}")
    return R, R_hat


def correlation_mse(R, R_hat) -> float:
    """Mean squared difference over the lower triangle including the diagonal."""
    R, R_hat = _pair(R, R_hat)
    idx = np.tril_indices(R.shape[0])
    return float(np.mean((R[idx] - R_hat[idx]) ** 2))


def rv_coefficient(R, R_hat) -> float:
    R, R_hat = _pair(R, R_hat)
    a = np.sum(R * R)
    b = np.sum(R_hat * R_hat)
    if a == 0 or b == 0:
        raise InvalidInputError("RV coefficient is undefined for an all-zero matrix")
    return float(np.sum(R * R_hat) / np.sqrt(a * b))


def contingency(a, b):
    """Confusion matrix of two labelings plus the sorted label sets."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"label vectors must have equal length, got {a.shape} and {b.shape}")
    la, ia = np.unique(a, return_inverse=True)
    lb, ib = np.unique(b, return_inverse=True)
    table = np.zeros((la.size, lb.size), dtype=np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)
    return table, la, lb


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index computed from the contingency table."""
    table, _, _ = contingency(a, b)
    n = table.sum()
    if n < 2:
        raise UsageError("ARI needs at least two elements")
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = n * (n - 1) / 2.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all singletons or one block): identical by construction
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass
class PartitionComparison:
    confusion: np.ndarray
    ari: float
    labels_a: np.ndarray
    labels_b: np.ndarray


def cross_tabulate(a, b) -> PartitionComparison:
    table, la, lb = contingency(a, b)
    return PartitionComparison(table, adjusted_rand_index(a, b), la, lb)


@dataclass
class ClusterRegression:
    adj_r2: np.ndarray  # NaN where skipped
    r2: np.ndarray
    n_vars: np.ndarray
    skipped: np.ndarray
    rank_deficient: np.ndarray


def cluster_regression(X, assignment, response, G: int | None = None) -> ClusterRegression:
    """OLS of ``response`` on the columns of each cluster (plus intercept).

    Clusters with ``n <= n_g + 1`` are skipped. Rank-deficient designs are solved
    by minimum-norm least squares and flagged.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    y = np.asarray(response, dtype=float).ravel()
    assignment = np.asarray(getattr(assignment, "assignment", assignment))
    n = X.shape[0]
    if y.size != n:
        raise UsageError(f"response has {y.size} rows, data has {n}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response contains non-finite values")
    if G is None:
        G = int(assignment.max()) + 1
    adj = np.full(G, np.nan)
    r2 = np.full(G, np.nan)
    sizes = np.bincount(assignment, minlength=G)
    skipped = np.zeros(G, dtype=bool)
    deficient = np.zeros(G, dtype=bool)
    yc = y - y.mean()
    sst = yc @ yc
    for g in range(G):
        ng = int(sizes[g])
        if ng == 0 or n <= ng + 1 or sst == 0:
            skipped[g] = True
            continue
        D = np.column_stack([np.ones(n), X[:, assignment == g]])
        coef, _, rank, _ = np.linalg.lstsq(D, y, rcond=None)
        deficient[g] = rank < D.shape[1]
        resid = y - D @ coef
        r2[g] = 1.0 - (resid @ resid) / sst
        adj[g] = 1.0 - (1.0 - r2[g]) * (n - 1) / (n - ng - 1)
    return ClusterRegression(adj, r2, sizes, skipped, deficient)
