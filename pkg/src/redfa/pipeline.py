"""Per-group analysis of spectra and the follow-up comparisons on saved results."""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from .exceptions import DataError, RedfaError, UsageError
from .metrics import cluster_regression, correlation_mse, cross_tabulate, rv_coefficient
from .model import DataMatrix, Hyperparameters
from .selection import greedy_search, score_initial_configurations
from .spectra import RunConfig, ingest_csv

log = logging.getLogger(__name__)

FLOAT_FMT = "%.16e"


def file_header(seed: int, config_hash: str) -> str:
    return f"# redfa {__version__} seed={seed} config_hash={config_hash}\n"


def _write_csv(path: str, df: pd.DataFrame, header: str, index: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header)
        df.to_csv(fh, index=index, float_format=FLOAT_FMT, lineterminator="\n")


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _safe_name(group: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", group) or "group"


@dataclass
class GroupOutcome:
    group: str
    ok: bool
    directory: str
    K: Optional[int] = None
    G: Optional[int] = None
    error: Optional[str] = None


def analyze_group(group: str, data: DataMatrix, config: RunConfig,
                  n_input_rows: Optional[int] = None) -> GroupOutcome:
    """Model selection, final fit and output files for one group."""
    out = os.path.join(config.out_dir, _safe_name(group))
    os.makedirs(out, exist_ok=True)
    chash = config.config_hash()
    seed = config.sampler.seed
    header = file_header(seed, chash)
    hyper = Hyperparameters.from_data(data, config.sigma_lambda, config.alpha, config.alpha_z)
    fa_fits: dict = {}
    cands = score_initial_configurations(data, config.K_max, config.G_max, seed=seed % 2 ** 32,
                                         fa_fits=fa_fits)
    init = max(cands, key=lambda c: c.bic)
    log.info("group %s: initial (K, G) = (%d, %d)", group, init.K, init.G)
    fit, history = greedy_search(data, init.K, init.G, hyper, config.sampler,
                                 search_budget=config.search_budget,
                                 axis_neighbors=config.axis_neighbors, fa_fits=fa_fits)
    est = fit.estimates
    labels = list(data.variable_labels)
    R_sample = np.corrcoef(data.values, rowvar=False)

    _write_csv(os.path.join(out, "correlation.csv"),
               pd.DataFrame(est.correlation, index=pd.Index(labels, name="variable"), columns=labels),
               header, index=True)
    _write_csv(os.path.join(out, "coclustering.csv"),
               pd.DataFrame(est.coclustering, index=pd.Index(labels, name="variable"), columns=labels),
               header, index=True)
    _write_csv(os.path.join(out, "partition.csv"),
               pd.DataFrame({"variable": labels, "cluster": est.partition.assignment + 1}), header)
    _write_csv(os.path.join(out, "initialization.csv"),
               pd.DataFrame([dict(K=c.K, G=c.G, loglik=c.loglik, n_params=c.n_params, bic=c.bic)
                             for c in cands]), header)
    _write_csv(os.path.join(out, "criteria.csv"),
               pd.DataFrame([dict(ring=s.ring, K=s.K, G=s.G, bic_mcmc=s.bic_mcmc, bicm=s.bicm,
                                  aicm=s.aicm, incumbent=s.incumbent) for s in history]), header)
    tr = fit.trace
    _write_csv(os.path.join(out, "trace.csv"),
               pd.DataFrame({"iteration": np.arange(tr.loglik_trace.size),
                             "loglik": tr.loglik_trace,
                             "marginal_loglik": tr.marginal_loglik_trace}), header)
    summary = {
        "_meta": {"tool": "redfa", "version": __version__, "seed": seed, "config_hash": chash},
        "group": group,
        "n": data.n,
        "p": data.p,
        "K_init": init.K,
        "G_init": init.G,
        "K": fit.K,
        "G": fit.G,
        "G_occupied": int(np.count_nonzero(est.partition.occupancy)),
        "mse_vs_sample": correlation_mse(R_sample, est.correlation),
        "rv_vs_sample": rv_coefficient(R_sample, est.correlation),
        "criteria": {"bic_mcmc": fit.score.bic_mcmc, "bicm": fit.score.bicm, "aicm": fit.score.aicm},
        "acceptance_rate": tr.acceptance_rate,
        "n_kept": tr.n_kept,
        "partition_method": est.partition_method,
        "loadings_label_variant": est.loadings_label_variant,
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    _write_json(os.path.join(out, "manifest.json"), {
        "_meta": summary["_meta"],
        "config": config.hashable(),
        "group": group,
        "n_input_rows": n_input_rows,
        "sample_index": data.sample_index,
    })
    return GroupOutcome(group, True, out, fit.K, fit.G)


def _analyze_safe(args):
    group, data, config, n_rows = args
    try:
        return analyze_group(group, data, config, n_rows)
    except (RedfaError, np.linalg.LinAlgError, ValueError) as exc:
        log.error("group %s failed: %s", group, exc)
        return GroupOutcome(group, False, "", error=f"{type(exc).__name__}: {exc}")


def analyze(config: RunConfig, groups: Optional[dict] = None) -> list:
    """Fit every group of the input; a failing group does not stop the others."""
    if not config.out_dir:
        raise UsageError("an output directory is required")
    if groups is None:
        groups = ingest_csv(config.input_path, config.group_by, config.exclude_bands,
                            config.label_map, config.transpose)
    os.makedirs(config.out_dir, exist_ok=True)
    n_rows = sum(d.n for d in groups.values())
    jobs = [(g, d, config, n_rows) for g, d in groups.items()]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(config.jobs, len(jobs))) as ex:
            outcomes = list(ex.map(_analyze_safe, jobs))
    else:
        outcomes = [_analyze_safe(j) for j in jobs]
    _write_json(os.path.join(config.out_dir, "run_summary.json"), {
        "_meta": {"tool": "redfa", "version": __version__, "seed": config.sampler.seed,
                  "config_hash": config.config_hash()},
        # directories relative to out_dir so reruns elsewhere stay byte-identical
        "groups": [dict(o.__dict__, directory=os.path.relpath(o.directory, config.out_dir)
                        if o.directory else "") for o in outcomes],
    })
    return outcomes


# --- loading saved results ---------------------------------------------------

@dataclass
class SavedFit:
    directory: str
    labels: list
    correlation: np.ndarray
    assignment: np.ndarray
    summary: dict
    manifest: dict


def load_result(directory: str) -> SavedFit:
    try:
        corr = pd.read_csv(os.path.join(directory, "correlation.csv"), comment="#",
                           index_col=0, dtype={"variable": str})
        part = pd.read_csv(os.path.join(directory, "partition.csv"), comment="#",
                           dtype={"variable": str})
        with open(os.path.join(directory, "summary.json")) as fh:
            summary = json.load(fh)
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"{directory} is not a fit result directory: {exc}") from exc
    labels = [str(v) for v in part["variable"]]
    if [str(v) for v in corr.index] != labels:
        raise DataError(f"{directory}: correlation and partition variables disagree")
    return SavedFit(directory, labels, corr.to_numpy(dtype=float),
                    part["cluster"].to_numpy(dtype=int), summary, manifest)


def _as_fit(result) -> SavedFit:
    return result if isinstance(result, SavedFit) else load_result(result)


def compare_groups(result_a, result_b, index_range: Optional[tuple] = None) -> dict:
    """Cross-tabulate two partitions and compare two estimated correlation matrices.

    ``index_range=(lo, hi)`` restricts the matrix comparison to variables
    ``lo..hi`` (1-based, inclusive) in the order of ``result_a``.
    """
    a, b = _as_fit(result_a), _as_fit(result_b)
    if set(a.labels) != set(b.labels) or len(a.labels) != len(b.labels):
        diff = sorted(set(a.labels) ^ set(b.labels))
        raise UsageError(f"results do not share variable labels; symmetric difference: {diff}")
    pos = {lab: i for i, lab in enumerate(b.labels)}
    order = np.array([pos[lab] for lab in a.labels])
    Rb = b.correlation[np.ix_(order, order)]
    assign_b = b.assignment[order]
    Ra = a.correlation
    if index_range is not None:
        lo, hi = index_range
        if not 1 <= lo <= hi <= len(a.labels):
            raise UsageError(f"range {lo}:{hi} outside 1:{len(a.labels)}")
        Ra = Ra[lo - 1:hi, lo - 1:hi]
        Rb = Rb[lo - 1:hi, lo - 1:hi]
    ct = cross_tabulate(a.assignment, assign_b)
    return {
        "ari": ct.ari,
        "confusion": ct.confusion.tolist(),
        "clusters_a": ct.labels_a.tolist(),
        "clusters_b": ct.labels_b.tolist(),
        "mse": correlation_mse(Ra, Rb),
        "rv": rv_coefficient(Ra, Rb),
        "range": list(index_range) if index_range else None,
        "n_variables": int(Ra.shape[0]),
    }


def _group_data(fit: SavedFit) -> DataMatrix:
    cfg = fit.manifest["config"]
    groups = ingest_csv(cfg["input_path"], cfg.get("group_by"),
                        [tuple(b) for b in cfg.get("exclude_bands", ())],
                        cfg.get("label_map") or {}, cfg.get("transpose", False))
    group = fit.manifest["group"]
    if group not in groups:
        raise DataError(f"group {group!r} not present in {cfg['input_path']}")
    data = groups[group]
    if list(data.variable_labels) != fit.labels:
        raise DataError("re-ingested variables do not match the saved fit")
    return data


def regress_traits(result, responses_path: str, data: Optional[DataMatrix] = None) -> pd.DataFrame:
    """Adjusted R^2 of each response regressed on each cluster's variables.

    The responses CSV must be row-aligned with the original input file (or with
    the group's own rows). Non-numeric columns are ignored.
    """
    fit = _as_fit(result)
    if data is None:
        data = _group_data(fit)
    resp = pd.read_csv(responses_path)
    numeric = resp.select_dtypes(include="number")
    if numeric.shape[1] == 0:
        raise DataError(f"{responses_path} has no numeric response columns")
    n_input = fit.manifest.get("n_input_rows")
    if n_input is not None and len(numeric) == n_input and data.sample_index is not None:
        rows = np.asarray(data.sample_index)
    elif len(numeric) == data.n:
        rows = np.arange(data.n)
    else:
        raise UsageError(f"responses have {len(numeric)} rows; expected {n_input} (input rows) "
                         f"or {data.n} (group rows)")
    G = int(fit.summary.get("G", fit.assignment.max()))
    assignment = fit.assignment - 1
    out = []
    for name in numeric.columns:
        y = numeric[name].to_numpy(dtype=float)[rows]
        reg = cluster_regression(data.values, assignment, y, G=G)
        for g in range(G):
            out.append(dict(response=name, cluster=g + 1, n_vars=int(reg.n_vars[g]),
                            adj_r2=reg.adj_r2[g], skipped=bool(reg.skipped[g]),
                            rank_deficient=bool(reg.rank_deficient[g])))
    return pd.DataFrame(out)
