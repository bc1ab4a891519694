import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import small_problem
from redfa.exceptions import ConfigurationError, InvalidInputError
from redfa.model import (
    DataMatrix,
    Hyperparameters,
    Partition,
    SamplerState,
    covariance_to_correlation,
    expand_loadings,
    factor_marginal_loglik,
    log_likelihood,
    log_posterior_unnorm,
    log_ppm_cohesion,
    log_prior,
    model_covariance,
    n_params,
)


def test_datamatrix_centers_and_validates():
    d = DataMatrix.from_array([[1.0, 2.0], [3.0, 6.0]], ["a", "b"])
    np.testing.assert_allclose(d.values.mean(axis=0), 0.0)
    assert d.variable_labels == ("a", "b") and d.n == 2 and d.p == 2
    with pytest.raises(InvalidInputError):
        DataMatrix.from_array([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        DataMatrix.from_array([[1.0, 2.0]])
    with pytest.raises(InvalidInputError):
        DataMatrix(np.array([[1.0], [2.0]]), centered=True)


def test_partition_basics():
    part = Partition([0, 2, 2, 0], 4)
    np.testing.assert_array_equal(part.occupancy, [2, 0, 2, 0])
    np.testing.assert_array_equal(part.allocation_matrix().sum(axis=1), 1.0)
    np.testing.assert_array_equal(part.with_moved([0], 1).assignment, [1, 2, 2, 0])
    np.testing.assert_array_equal(Partition.from_labels(["x", "y", "x", "z"]).assignment, [0, 1, 0, 2])
    with pytest.raises(ConfigurationError):
        Partition([0, 3], 3)


def test_expand_loadings_equals_allocation_product():
    part = Partition([1, 0, 1, 2], 3)
    Lc = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(expand_loadings(part, Lc), part.allocation_matrix() @ Lc)
    with pytest.raises(ConfigurationError):
        expand_loadings(part, np.ones((2, 2)))


def test_model_covariance_identical_rows_within_cluster():
    part = Partition([0, 0, 1], 2)
    Lc = np.array([[1.0, 0.5], [-0.2, 2.0]])
    psi = np.array([0.1, 0.2, 0.3])
    S = model_covariance(part, Lc, psi)
    Z = part.allocation_matrix()
    np.testing.assert_allclose(S, Z @ Lc @ Lc.T @ Z.T + np.diag(psi))
    # the two variables of cluster 0 have the same off-diagonal profile
    assert S[0, 2] == S[1, 2] and S[0, 1] == pytest.approx(1.25)
    np.testing.assert_allclose(np.linalg.eigvalsh(S) > 0, True)


def test_single_cluster_covariance_is_rank_one_plus_diagonal():
    part = Partition([0] * 4, 1)
    S = model_covariance(part, [[2.0]], np.ones(4))
    np.testing.assert_allclose(S - np.eye(4), np.full((4, 4), 4.0))


def test_covariance_to_correlation():
    R = covariance_to_correlation(np.array([[4.0, 2.0], [2.0, 9.0]]))
    np.testing.assert_allclose(R, [[1.0, 1.0 / 3.0], [1.0 / 3.0, 1.0]])
    with pytest.raises(InvalidInputError):
        covariance_to_correlation(np.array([[0.0, 0.0], [0.0, 1.0]]))


def test_parameter_counts():
    assert n_params(533, 4, 25) == 25 * 4 + 533
    assert n_params(533, 4) == 533 * 4 + 533
    assert n_params(40, 3, 40) == n_params(40, 3)


def test_log_likelihood_matches_gaussian_density():
    data, state, _ = small_problem()
    L = expand_loadings(state.partition, state.loadings)
    mean = state.scores @ L.T
    ref = sum(multivariate_normal(mean[i], np.diag(state.psi)).logpdf(data.values[i])
              for i in range(data.n))
    assert log_likelihood(data, state) == pytest.approx(ref, rel=1e-12)
    assert state.loglik == pytest.approx(ref, rel=1e-12)


def test_marginal_loglik_matches_dense_density():
    data, state, _ = small_problem(n=25, p=7, K=2, G=3, seed=4)
    L = expand_loadings(state.partition, state.loadings)
    Sigma = L @ L.T + np.diag(state.psi)
    ref = multivariate_normal(np.zeros(data.p), Sigma).logpdf(data.values).sum()
    got = factor_marginal_loglik(data.sample_covariance(), data.n, L, state.psi)
    assert got == pytest.approx(ref, rel=1e-11)


def test_ppm_cohesion_hand_values():
    # alpha_z^G_occ * prod (n_g - 1)!, empty clusters ignored
    assert log_ppm_cohesion([2, 3, 0], 2.0) == pytest.approx(np.log(2.0 ** 2 * 1 * 2))
    assert log_ppm_cohesion([4], 1.0) == pytest.approx(np.log(6.0))
    assert log_ppm_cohesion([1, 1, 1], 1.0) == 0.0


def test_log_prior_components():
    data = DataMatrix.from_array(np.random.default_rng(0).standard_normal((5, 2)))
    hyper = Hyperparameters(sigma_lambda=2.0, alpha=3.0, beta=np.array([1.0, 2.0]), alpha_z=1.0)
    state = SamplerState.build(data, Partition([0, 0], 1), [[0.5]], [1.0, 0.5], np.zeros((5, 1)))
    from scipy.stats import invgamma, norm
    ref = (norm(0, 2.0).logpdf(0.5) + 5 * norm.logpdf(0.0)
           + invgamma(3.0, scale=1.0).logpdf(1.0) + invgamma(3.0, scale=2.0).logpdf(0.5)
           + np.log(1.0))
    assert log_prior(state, hyper) == pytest.approx(ref, rel=1e-12)


def test_hyperparameters_from_data():
    rng = np.random.default_rng(1)
    data = DataMatrix.from_array(rng.standard_normal((50, 3)) @ [[1, 0.3, 0], [0, 1, 0.5], [0, 0, 1]])
    hyper = Hyperparameters.from_data(data, alpha=2.5)
    S = np.cov(data.values, rowvar=False)
    np.testing.assert_allclose(hyper.beta, 1.5 / np.diag(np.linalg.inv(S)))
    # singular covariance falls back to a pseudo-inverse with positive results
    dup = DataMatrix.from_array(np.column_stack([data.values[:, 0], data.values[:, 0]]))
    assert np.all(Hyperparameters.from_data(dup).beta > 0)
    with pytest.raises(ConfigurationError):
        Hyperparameters(alpha=-1.0)


def test_state_validation():
    data, state, _ = small_problem()
    state.validate(data)
    bad = state.copy()
    bad.psi = bad.psi.copy()
    bad.psi[0] = 0.0
    with pytest.raises(InvalidInputError):
        bad.validate()
    with pytest.raises(ConfigurationError):
        SamplerState.build(data, state.partition, np.ones((2, 2)), state.psi, state.scores)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), G=st.integers(2, 5))
def test_log_posterior_invariant_to_cluster_relabeling(seed, G):
    rng = np.random.default_rng(seed)
    data, state, hyper = small_problem(n=10, p=7, K=2, G=G, seed=seed)
    state.partition = Partition(rng.integers(0, G, 7), G)
    state.loglik = log_likelihood(data, state)
    perm = rng.permutation(G)
    moved = SamplerState.build(data, state.partition.relabel(perm),
                               state.loadings[np.argsort(perm)], state.psi, state.scores)
    np.testing.assert_allclose(model_covariance(moved.partition, moved.loadings, moved.psi),
                               model_covariance(state.partition, state.loadings, state.psi))
    assert log_posterior_unnorm(data, moved, hyper) == pytest.approx(
        log_posterior_unnorm(data, state, hyper), rel=1e-12)
    assert log_ppm_cohesion(moved.partition.occupancy, 1.0) == log_ppm_cohesion(
        state.partition.occupancy, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=6), st.integers(0, 1000))
def test_model_covariance_is_positive_definite(psi, seed):
    rng = np.random.default_rng(seed)
    p = len(psi)
    G = int(rng.integers(1, p + 1))
    part = Partition(rng.integers(0, G, p), G)
    S = model_covariance(part, rng.normal(size=(G, 2)), np.array(psi))
    assert np.linalg.eigvalsh(S).min() > 0
    R = covariance_to_correlation(S)
    np.testing.assert_allclose(np.diag(R), 1.0)
    assert np.all(np.abs(R) <= 1.0)
