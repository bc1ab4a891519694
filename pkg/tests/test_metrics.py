import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redfa.exceptions import InvalidInputError, UsageError
from redfa.metrics import (
    adjusted_rand_index,
    cluster_regression,
    contingency,
    correlation_mse,
    cross_tabulate,
    rv_coefficient,
)

R2 = np.array([[1.0, 0.5], [0.5, 1.0]])


def pair_count_ari(a, b):
    """Adjusted Rand index from explicit pair agreement counts."""
    n = len(a)
    ss = sd = ds = dd = 0
    for i in range(n):
        for j in range(i + 1, n):
            sa, sb = a[i] == a[j], b[i] == b[j]
            ss += sa and sb
            sd += sa and not sb
            ds += sb and not sa
            dd += not sa and not sb
    den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd)
    return 1.0 if den == 0 else 2.0 * (ss * dd - sd * ds) / den


def test_mse_hand_case():
    assert correlation_mse(np.eye(2), R2) == pytest.approx(0.25 / 3)
    assert correlation_mse(R2, R2) == 0.0


def test_rv_hand_case():
    assert rv_coefficient(np.eye(2), R2) == pytest.approx(2 / np.sqrt(5))
    assert rv_coefficient(R2, R2) == pytest.approx(1.0)
    assert rv_coefficient(R2, 3 * R2) == pytest.approx(1.0)


def test_matrix_metric_errors():
    with pytest.raises(UsageError):
        correlation_mse(np.eye(2), np.eye(3))
    with pytest.raises(InvalidInputError):
        rv_coefficient(np.zeros((2, 2)), np.eye(2))


def test_ari_known_values():
    assert adjusted_rand_index([0, 0, 1, 1], [5, 5, 7, 7]) == 1.0
    # classic example: ARI of these two labelings is 0.24242...
    a = [0, 0, 0, 1, 1, 1]
    b = [0, 0, 1, 1, 2, 2]
    assert adjusted_rand_index(a, b) == pytest.approx(pair_count_ari(a, b))
    assert adjusted_rand_index(a, b) == pytest.approx(8 / 33)
    assert adjusted_rand_index([0, 0, 0], [0, 1, 2]) == 0.0
    with pytest.raises(UsageError):
        adjusted_rand_index([0, 1], [0, 1, 2])


def test_ari_matches_sklearn():
    from sklearn.metrics import adjusted_rand_score
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.integers(0, 4, 30), rng.integers(0, 6, 30)
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=25),
       st.permutations(range(5)))
def test_ari_properties(pairs, perm):
    a = np.array([x for x, _ in pairs])
    b = np.array([y for _, y in pairs])
    ari = adjusted_rand_index(a, b)
    assert ari <= 1.0 + 1e-12
    assert ari == pytest.approx(adjusted_rand_index(b, a))
    assert ari == pytest.approx(adjusted_rand_index(np.asarray(perm)[a], b))
    assert adjusted_rand_index(a, a) == pytest.approx(1.0)


def test_contingency_and_cross_tabulation():
    table, la, lb = contingency([1, 1, 2, 3], ["x", "y", "y", "y"])
    np.testing.assert_array_equal(table, [[1, 1], [0, 1], [0, 1]])
    assert list(la) == [1, 2, 3] and list(lb) == ["x", "y"]
    ct = cross_tabulate([0, 0, 1, 1], [1, 1, 0, 0])
    np.testing.assert_array_equal(ct.confusion, [[0, 2], [2, 0]])
    assert ct.ari == 1.0


def test_regression_exact_column_response():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((50, 6))
    reg = cluster_regression(X, [0, 0, 1, 1, 2, 2], X[:, 3])
    assert reg.adj_r2[1] == pytest.approx(1.0)
    assert reg.adj_r2[0] < 0.3 and reg.adj_r2[2] < 0.3
    np.testing.assert_array_equal(reg.n_vars, [2, 2, 2])


def test_regression_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 5))
    y = X[:, 0] - 0.5 * X[:, 1] + rng.standard_normal(40)
    reg = cluster_regression(X, [0, 0, 1, 1, 1], y)
    for g, cols in enumerate(([0, 1], [2, 3, 4])):
        ref = sm.OLS(y, sm.add_constant(X[:, cols])).fit()
        assert reg.adj_r2[g] == pytest.approx(ref.rsquared_adj, rel=1e-10)
        assert reg.r2[g] == pytest.approx(ref.rsquared, rel=1e-10)


def test_regression_permuted_response_is_near_zero():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((400, 6))
    y = rng.permutation(X[:, 0] + X[:, 1])
    reg = cluster_regression(X, [0, 0, 1, 1, 2, 2], y)
    assert np.all(np.abs(reg.adj_r2) < 0.05)


def test_regression_skips_tiny_clusters():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5, 6))
    reg = cluster_regression(X, [0, 0, 0, 0, 1, 2], X[:, 4], G=4)
    np.testing.assert_array_equal(reg.skipped, [True, False, False, True])
    assert np.isnan(reg.adj_r2[0]) and np.isnan(reg.adj_r2[3])
    with pytest.raises(UsageError):
        cluster_regression(X, [0] * 6, np.ones(4))
    with pytest.raises(InvalidInputError):
        cluster_regression(X, [0] * 6, [np.nan] * 5)


def test_regression_flags_rank_deficiency():
    rng = np.random.default_rng(6)
    a = rng.standard_normal(30)
    X = np.column_stack([a, 2 * a, rng.standard_normal(30)])
    reg = cluster_regression(X, [0, 0, 1], a)
    assert reg.rank_deficient[0] and not reg.rank_deficient[1]
    assert reg.adj_r2[0] == pytest.approx(1.0)


def test_more_hand_cases():
    assert correlation_mse(np.eye(2), np.ones((2, 2))) == pytest.approx(1 / 3)
    assert rv_coefficient(np.eye(4), np.ones((4, 4))) == pytest.approx(0.5)
    # pair counts: 0 together in both, 2 + 2 together in one only, 2 apart in both
    assert pair_count_ari([1, 1, 2, 2], [1, 2, 1, 2]) == -0.5
    assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)
    A, B = np.eye(3) + 0.2, np.eye(3) - 0.1
    assert correlation_mse(A, B) == correlation_mse(B, A)
    assert rv_coefficient(2 * A, 5 * B) == pytest.approx(rv_coefficient(A, B))


def test_mse_and_rv_move_together_under_perturbation():
    rng = np.random.default_rng(7)
    M = rng.standard_normal((5, 5))
    S = M @ M.T
    d = 1 / np.sqrt(np.diag(S))
    R = S * d[:, None] * d[None, :]
    J = np.ones((5, 5))
    ts = np.linspace(0, 1, 21)
    mse = [correlation_mse(R, (1 - t) * R + t * J) for t in ts]
    rv = [rv_coefficient(R, (1 - t) * R + t * J) for t in ts]
    assert np.all(np.diff(mse) > 0) and np.all(np.diff(rv) < 0)


def test_confusion_margins():
    rng = np.random.default_rng(8)
    a, b = rng.integers(0, 3, 25), rng.integers(0, 4, 25)
    ct = cross_tabulate(a, b)
    assert ct.confusion.sum() == 25
    np.testing.assert_array_equal(ct.confusion.sum(axis=1), np.bincount(a))
    assert ct.ari == adjusted_rand_index(a, b)


def test_null_regression_and_irrelevant_variables():
    rng = np.random.default_rng(9)
    gains, nulls = [], []
    for _ in range(200):
        X = rng.standard_normal((1000, 6))
        y = X[:, 0] + rng.standard_normal(1000)
        base = cluster_regression(X, [0, 0, 1, 1, 1, 1], y).adj_r2[0]
        wider = cluster_regression(X, [0, 0, 0, 1, 1, 1], y).adj_r2[0]
        gains.append(wider - base)
        nulls.append(cluster_regression(X, [0] * 5 + [1], rng.standard_normal(1000)).adj_r2[0])
    assert np.mean(gains) <= 0.0 + 2 * np.std(gains) / np.sqrt(200)
    assert np.mean(np.abs(nulls) < 0.02) > 0.9
