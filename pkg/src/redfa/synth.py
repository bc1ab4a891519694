"""Synthetic data from the clustered-loadings model and the replication study harness."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError
from .fa import fit_standard_fa
from .metrics import adjusted_rand_index, correlation_mse, rv_coefficient
from .model import (
    DataMatrix,
    Hyperparameters,
    Partition,
    covariance_to_correlation,
    model_covariance,
)
from .sampler import SamplerConfig, initialize_state, point_estimates, run_chain
from .selection import initialize_kg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimDesign:
    n: int = 500
    p: int = 40
    K_true: int = 3
    G_true: int = 5
    B: int = 200
    seed: int = 0
    K_grid: tuple = (2, 3, 4, 5)
    G_grid: tuple = (3, 4, 5, 6, 7)
    sigma_lambda: float = 5.0  # truth loading rows ~ N(0, sigma_lambda^2 I)
    min_gap: float = 1.0
    psi_range: tuple = (0.2, 1.0)
    max_resample: int = 10_000
    K_max: int = 10
    G_max: Optional[int] = None
    run_selection: bool = True

    def __post_init__(self):
        if self.B < 1 or not self.K_grid or not self.G_grid:
            raise ConfigurationError("need B >= 1 and non-empty K/G grids")
        if not 1 <= self.G_true <= self.p:
            raise ConfigurationError("need 1 <= G_true <= p")
        lo, hi = self.psi_range
        if not 0 < lo <= hi:
            raise ConfigurationError("psi_range must be positive and ordered")
        object.__setattr__(self, "K_grid", tuple(self.K_grid))
        object.__setattr__(self, "G_grid", tuple(self.G_grid))
        object.__setattr__(self, "psi_range", tuple(self.psi_range))

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown design keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Truth:
    partition: Partition
    loadings: np.ndarray
    psi: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return model_covariance(self.partition, self.loadings, self.psi)

    @property
    def correlation(self) -> np.ndarray:
        return covariance_to_correlation(self.covariance)


def generate_truth(design: SimDesign, rng) -> Truth:
    """Random ground truth: non-empty clusters, separated Gaussian loading rows, uniform uniquenesses."""
    p, G, K = design.p, design.G_true, design.K_true
    for _ in range(design.max_resample):
        sizes = rng.multinomial(p, np.full(G, 1.0 / G))
        if sizes.min() > 0:
            break
    else:
        raise ConfigurationError("could not draw a partition with all clusters non-empty")
    assignment = rng.permutation(np.repeat(np.arange(G), sizes))
    for _ in range(design.max_resample):
        Lc = design.sigma_lambda * rng.standard_normal((G, K))
        if G == 1:
            break
        gaps = np.linalg.norm(Lc[:, None, :] - Lc[None, :, :], axis=2)[np.triu_indices(G, 1)]
        if gaps.min() >= design.min_gap:
            break
    else:
        raise ConfigurationError(
            f"no loading rows with pairwise gap >= {design.min_gap} after {design.max_resample} draws")
    psi = rng.uniform(*design.psi_range, size=p)
    return Truth(Partition(assignment, G), Lc, psi)


def generate_data(truth: Truth, n: int, rng, labels=()) -> DataMatrix:
    """``n`` draws of ``x = L~ u + e``, column-centered."""
    L = truth.loadings[truth.partition.assignment]
    U = rng.standard_normal((n, L.shape[1]))
    E = rng.standard_normal((n, L.shape[0])) * np.sqrt(truth.psi)
    return DataMatrix.from_array(U @ L.T + E, labels)


def replicate_seeds(seed: int, B: int):
    return np.random.SeedSequence(seed).spawn(B)


def run_replicate(design: SimDesign, sampler_config: SamplerConfig, b: int) -> dict:
    """All grid fits (and the selection step) for replicate ``b``."""
    ss = replicate_seeds(design.seed, design.B)[b]
    data_ss, chain_ss, sel_ss = ss.spawn(3)
    rng = np.random.default_rng(data_ss)
    truth = generate_truth(design, rng)
    data = generate_data(truth, design.n, rng)
    hyper = Hyperparameters.from_data(data)
    R_true = truth.correlation
    rows, failures = [], []
    chain_seeds = chain_ss.generate_state(len(design.K_grid) * len(design.G_grid), np.uint64)
    i = 0
    for K in design.K_grid:
        fa = fit_standard_fa(data, K) if K < data.p else None
        for G in design.G_grid:
            seed = int(chain_seeds[i])
            i += 1
            try:
                cfg = replace(sampler_config, seed=seed)
                init = initialize_state(data, K, G, seed=seed, fa_fit=fa)
                est = point_estimates(run_chain(data, K, G, hyper, cfg, init))
                rows.append(dict(
                    replicate=b, K=K, G=G,
                    ari=adjusted_rand_index(truth.partition.assignment, est.partition.assignment),
                    mse=correlation_mse(R_true, est.correlation),
                    rv=rv_coefficient(R_true, est.correlation)))
            except Exception as exc:  # recorded per replicate, never fatal
                log.warning("replicate %d (K=%d, G=%d) failed: %s", b, K, G, exc)
                failures.append(dict(replicate=b, K=K, G=G, error=repr(exc)))
    selected = None
    if design.run_selection:
        try:
            sel_seed = int(sel_ss.generate_state(1)[0])
            selected = initialize_kg(data, design.K_max, design.G_max, seed=sel_seed)
        except Exception as exc:
            failures.append(dict(replicate=b, K=None, G=None, error=repr(exc)))
    return dict(replicate=b, rows=rows, failures=failures, selected=selected)


@dataclass
class StudyReport:
    design: SimDesign
    sampler_config: SamplerConfig
    results: pd.DataFrame
    selections: pd.DataFrame
    failures: list = field(default_factory=list)

    def summary(self, metric: str) -> pd.DataFrame:
        """Mean and across-replicate standard deviation of ``metric`` per (K, G)."""
        g = self.results.groupby(["K", "G"])[metric]
        out = pd.DataFrame({"mean": g.mean(), "sd": g.std(ddof=1), "count": g.count()})
        return out.reset_index()

    def selection_table(self) -> pd.DataFrame:
        if self.selections.empty:
            return pd.DataFrame(columns=["K", "G", "count", "proportion"])
        counts = self.selections.groupby(["K", "G"]).size().rename("count").reset_index()
        counts["proportion"] = counts["count"] / self.design.B
        return counts

    def cell(self, metric: str, K: int, G: int) -> float:
        t = self.summary(metric)
        return float(t.loc[(t.K == K) & (t.G == G), "mean"].iloc[0])

    def manifest(self) -> dict:
        cfg = {"design": asdict(self.design), "sampler": asdict(self.sampler_config)}
        blob = json.dumps(cfg, sort_keys=True, default=str).encode()
        return {
            "config": cfg,
            "config_hash": hashlib.sha256(blob).hexdigest(),
            "replicate_seeds": [int(s.generate_state(1)[0])
                                for s in replicate_seeds(self.design.seed, self.design.B)],
            "n_failures": len(self.failures),
            "failures": self.failures,
        }

    def write(self, out_dir: str, header: str = "") -> list:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name, table in [("ari", self.summary("ari")), ("mse", self.summary("mse")),
                            ("rv", self.summary("rv")), ("selection", self.selection_table())]:
            path = os.path.join(out_dir, f"table_{name}.csv")
            _write_frame(table, path, header)
            written.append(path)
        path = os.path.join(out_dir, "replicates.csv")
        _write_frame(self.results, path, header)
        written.append(path)
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        written.append(path)
        return written


def _write_frame(df: pd.DataFrame, path: str, header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        df.to_csv(fh, index=False, float_format="%.17e", lineterminator="\n")


def run_study(design: SimDesign, sampler_config: SamplerConfig, n_jobs: int = 1) -> StudyReport:
    """Replicated simulation over the (K, G) grid.

    Replicates use seeds spawned from ``design.seed``, so results do not depend on
    execution order or on ``n_jobs``.
    """
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            outs = list(ex.map(run_replicate, [design] * design.B, [sampler_config] * design.B,
                               range(design.B)))
    else:
        outs = [run_replicate(design, sampler_config, b) for b in range(design.B)]
    outs.sort(key=lambda o: o["replicate"])
    rows = [r for o in outs for r in o["rows"]]
    failures = [f for o in outs for f in o["failures"]]
    sel = [dict(replicate=o["replicate"], K=o["selected"][0], G=o["selected"][1])
           for o in outs if o["selected"] is not None]
    results = pd.DataFrame(rows, columns=["replicate", "K", "G", "ari", "mse", "rv"])
    selections = pd.DataFrame(sel, columns=["replicate", "K", "G"])
    return StudyReport(design, sampler_config, results, selections, failures)


def two_group_surrogate(p: int = 200, n: int = 1000, K: int = 3, G: int = 10,
                        perturbation: float = 0.1, seed: int = 0):
    """Two groups sharing one partition, with independently perturbed loadings and uniquenesses.

    Returns
    -------
    groups : dict
        ``{"A": DataMatrix, "B": DataMatrix}`` with wavenumber-like labels.
    truths : dict
        The generating :class:`Truth` of each group.
    """
    rng = np.random.default_rng(seed)
    base = generate_truth(SimDesign(n=n, p=p, K_true=K, G_true=G, B=1), rng)
    labels = [f"{w:.1f}" for w in np.linspace(925.0, 1600.0, p)]
    groups, truths = {}, {}
    for name in ("A", "B"):
        Lc = base.loadings + perturbation * rng.standard_normal(base.loadings.shape)
        truth = Truth(base.partition, Lc, rng.uniform(0.2, 1.0, p))
        truths[name] = truth
        groups[name] = generate_data(truth, n, rng, labels)
    return groups, truths
