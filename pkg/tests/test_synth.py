import numpy as np
import pytest

from redfa.exceptions import ConfigurationError
from redfa.sampler import SamplerConfig
from redfa.synth import (
    SimDesign,
    generate_data,
    generate_truth,
    run_study,
    two_group_surrogate,
)


def test_truth_respects_design():
    design = SimDesign(p=40, G_true=5, K_true=3, min_gap=1.0)
    truth = generate_truth(design, np.random.default_rng(0))
    assert np.all(truth.partition.occupancy > 0)
    gaps = np.linalg.norm(truth.loadings[:, None] - truth.loadings[None], axis=2)
    assert gaps[np.triu_indices(5, 1)].min() >= 1.0
    assert np.all((truth.psi >= 0.2) & (truth.psi <= 1.0))
    np.testing.assert_allclose(np.diag(truth.correlation), 1.0)


def test_truth_is_seed_deterministic():
    design = SimDesign()
    a = generate_truth(design, np.random.default_rng(3))
    b = generate_truth(design, np.random.default_rng(3))
    assert np.array_equal(a.loadings, b.loadings)
    assert np.array_equal(a.partition.assignment, b.partition.assignment)


def test_impossible_design_raises():
    with pytest.raises(ConfigurationError):
        generate_truth(SimDesign(min_gap=100.0, max_resample=20), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        SimDesign(G_true=50, p=40)
    with pytest.raises(ConfigurationError):
        SimDesign.from_dict({"n": 10, "unknown": 1})


def test_data_covariance_converges_to_truth():
    truth = generate_truth(SimDesign(p=10, G_true=3, K_true=2), np.random.default_rng(1))
    data = generate_data(truth, 200_000, np.random.default_rng(2))
    np.testing.assert_allclose(data.values.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.sample_covariance(), truth.covariance, atol=0.05)


def test_study_is_reproducible_and_job_independent():
    design = SimDesign(n=60, p=8, K_true=1, G_true=2, B=2, K_grid=(1,), G_grid=(2,), K_max=2,
                       seed=5)
    cfg = SamplerConfig(n_iter=60, burn_in=20, thin=2)
    a = run_study(design, cfg)
    b = run_study(design, cfg, n_jobs=2)
    assert a.results.equals(b.results) and a.selections.equals(b.selections)
    assert len(a.results) == 2 and not a.failures
    summ = a.summary("ari")
    assert summ["count"].iloc[0] == 2
    assert summ["sd"].iloc[0] == pytest.approx(a.results["ari"].std(ddof=1))
    assert a.selection_table()["proportion"].sum() == pytest.approx(1.0)


def test_failed_fit_is_recorded_not_fatal():
    design = SimDesign(n=30, p=4, K_true=1, G_true=2, B=1, K_grid=(1, 9), G_grid=(2,),
                       run_selection=False)
    report = run_study(design, SamplerConfig(n_iter=20, burn_in=5, thin=1))
    assert len(report.results) == 1
    assert len(report.failures) == 1 and report.failures[0]["K"] == 9
    assert report.manifest()["n_failures"] == 1


def test_two_group_surrogate_shares_partition():
    groups, truths = two_group_surrogate(p=30, n=50, G=4, seed=2)
    assert set(groups) == {"A", "B"}
    assert np.array_equal(truths["A"].partition.assignment, truths["B"].partition.assignment)
    assert not np.array_equal(truths["A"].loadings, truths["B"].loadings)
    assert groups["A"].variable_labels == groups["B"].variable_labels


def test_single_cluster_truth():
    truth = generate_truth(SimDesign(G_true=1), np.random.default_rng(0))
    assert np.all(truth.partition.assignment == 0)
    assert truth.partition.occupancy.sum() == 40


def test_truth_covariances_are_spd():
    rng = np.random.default_rng(4)
    for _ in range(100):
        np.linalg.cholesky(generate_truth(SimDesign(p=12, G_true=4), rng).covariance)


def test_sample_covariance_within_monte_carlo_error():
    from redfa.model import Partition
    from redfa.synth import Truth
    rng = np.random.default_rng(5)
    truth = Truth(Partition([0, 0, 1, 1, 2], 3), rng.standard_normal((3, 2)), rng.uniform(0.2, 1, 5))
    data = generate_data(truth, 100_000, rng)
    X = data.values
    prods = X[:, :, None] * X[:, None, :]
    se = prods.std(axis=0) / np.sqrt(len(X))
    assert np.all(np.abs(prods.mean(axis=0) - truth.covariance) <= 4 * se)


def test_zero_loadings_give_uncorrelated_columns():
    from redfa.model import Partition
    from redfa.synth import Truth
    truth = Truth(Partition([0, 1, 0, 1], 2), np.zeros((2, 2)), np.ones(4))
    R = np.corrcoef(generate_data(truth, 20_000, np.random.default_rng(6)).values, rowvar=False)
    assert np.abs(R - np.eye(4)).max() < 0.04


def test_replicates_do_not_depend_on_order():
    from redfa.synth import run_replicate
    design = SimDesign(n=50, p=6, K_true=1, G_true=2, B=3, K_grid=(1,), G_grid=(2,),
                       run_selection=False, seed=9)
    cfg = SamplerConfig(n_iter=40, burn_in=10, thin=2)
    report = run_study(design, cfg)
    for b in (2, 0, 1):
        row = run_replicate(design, cfg, b)["rows"][0]
        assert report.results.loc[report.results.replicate == b, "ari"].iloc[0] == row["ari"]
