"""Spectra ingestion: CSV parsing, noisy-band exclusion, grouping and centering."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .exceptions import ConfigurationError, DataError, UsageError
from .model import DataMatrix
from .sampler import SamplerConfig

# water / high-noise regions of milk MIR spectra, in cm^-1
DEFAULT_BANDS = ((1592.0, 1720.0), (2996.0, 3698.0), (3818.0, 5010.0))


@dataclass
class RunConfig:
    input_path: str = ""
    group_by: Optional[str] = None
    exclude_bands: tuple = DEFAULT_BANDS
    label_map: dict = field(default_factory=dict)
    transpose: bool = False
    sigma_lambda: float = 5.0
    alpha: float = 2.5
    alpha_z: float = 1.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    K_max: int = 10
    G_max: Optional[int] = None
    search_budget: int = 10
    axis_neighbors: bool = False
    out_dir: str = ""
    jobs: int = 1

    def __post_init__(self):
        bands = tuple(tuple(float(v) for v in b) for b in self.exclude_bands)
        for lo, hi in bands:
            if not lo < hi:
                raise ConfigurationError(f"exclusion band [{lo}, {hi}] must have lo < hi")
        self.exclude_bands = bands

    def hashable(self) -> dict:
        """Settings that determine the results (output location and parallelism excluded)."""
        d = asdict(self)
        d.pop("out_dir")
        d.pop("jobs")
        d["input_path"] = str(self.input_path)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hashable(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def read_bands(source) -> tuple:
    """``"defaults"``, ``"none"``, or a path to a file of ``lo,hi`` lines."""
    if source is None or source == "defaults":
        return DEFAULT_BANDS
    if source == "none":
        return ()
    bands = []
    with open(source) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                lo, hi = (float(v) for v in parts)
            except ValueError:
                raise ConfigurationError(f"{source}:{lineno}: expected 'lo,hi', got {line!r}")
            bands.append((lo, hi))
    return tuple(bands)


def _as_float(s) -> Optional[float]:
    try:
        v = float(s)
    except (TypeError, ValueError):
        return None
    return v if np.isfinite(v) else None


def band_mask(wavenumbers, bands) -> np.ndarray:
    """True for wavenumbers kept (outside every closed band)."""
    w = np.asarray(wavenumbers, dtype=float)
    keep = np.ones(w.shape, dtype=bool)
    for lo, hi in bands:
        keep &= ~((w >= lo) & (w <= hi))
    return keep


def _parse_numeric(frame: pd.DataFrame, row_offset: int = 2) -> np.ndarray:
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataError(f"non-numeric value {frame.iat[i, j]!r} at line {i + row_offset}, "
                        f"column {frame.columns[j]!r}")
    return values


def read_spectra(path: str, transpose: bool = False):
    """Return ``(labels_frame, spectral_headers, values)`` with rows = samples."""
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if transpose:
        wn = raw.iloc[:, 0].tolist()
        if any(_as_float(w) is None for w in wn):
            raise DataError("first column of a transposed file must hold wavenumbers")
        values = _parse_numeric(raw.iloc[:, 1:]).T
        return pd.DataFrame(index=range(values.shape[0])), [str(w) for w in wn], values
    spectral = [c for c in raw.columns if _as_float(c) is not None]
    if not spectral:
        raise DataError("no numeric wavenumber columns in the header")
    label_cols = [c for c in raw.columns if c not in spectral]
    return raw[label_cols], [str(c) for c in spectral], _parse_numeric(raw[spectral])


def ingest_csv(path: str, group_by: Optional[str] = None, exclude_bands=DEFAULT_BANDS,
               label_map: Optional[dict] = None, transpose: bool = False) -> dict:
    """Load a spectra CSV into one centered DataMatrix per group.

    Columns whose header is a number are spectral; the others are labels. Group
    labels can be merged through ``label_map`` (e.g. ``{"GRS": "Pasture",
    "CLV": "Pasture"}``). Without ``group_by`` a single group ``"all"`` is returned.
    """
    labels, headers, values = read_spectra(path, transpose)
    keep = band_mask([float(h) for h in headers], exclude_bands)
    if not keep.any():
        raise UsageError("every spectral column falls inside an exclusion band")
    kept_headers = [h for h, k in zip(headers, keep) if k]
    values = values[:, keep]
    if group_by is None:
        groups = {"all": np.arange(values.shape[0])}
    else:
        if transpose:
            raise UsageError("group-by is not available for transposed input")
        if group_by not in labels.columns:
            raise UsageError(f"group-by column {group_by!r} not found; label columns: "
                             f"{list(labels.columns)}")
        raw_groups = labels[group_by].map(lambda v: (label_map or {}).get(v, v))
        empty = np.flatnonzero(raw_groups.str.strip() == "")
        if empty.size:
            raise UsageError(f"empty group label at line {empty[0] + 2}")
        groups = {}
        for i, g in enumerate(raw_groups):
            groups.setdefault(str(g), []).append(i)
        groups = {g: np.asarray(ix) for g, ix in groups.items()}
    out = {}
    for g, rows in groups.items():
        if rows.size < 2:
            raise UsageError(f"group {g!r} has {rows.size} sample(s); need at least 2")
        out[g] = DataMatrix.from_array(values[rows], kept_headers, center=True, sample_index=rows)
    return out
