"""Regenerate the bundled toy spectra, responses and simulation design.

Run from the repository root: ``python3 scripts/make_toy_data.py``.
"""

import json
import os

import numpy as np

from redfa.spectra import DEFAULT_BANDS, band_mask

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "redfa", "data")


def main(seed=2024):
    rng = np.random.default_rng(seed)
    grid = np.linspace(925.0, 5010.0, 1060)[::14]
    keep = band_mask(grid, DEFAULT_BANDS)
    p_keep = int(keep.sum())
    # contiguous blocks of neighbouring wavenumbers share a loading row
    G, K = 4, 2
    bounds = np.linspace(0, p_keep, G + 1).round().astype(int)
    assignment = np.repeat(np.arange(G), np.diff(bounds))
    shared = rng.normal(0.0, 1.0, (G, K))
    rows, diets = [], []
    for diet, n in (("GRS", 30), ("CLV", 30), ("TMR", 60)):
        Lc = shared + (0.15 * rng.standard_normal((G, K)) if diet == "TMR" else 0.0)
        psi = rng.uniform(0.2, 0.6, p_keep)
        U = rng.standard_normal((n, K))
        X = U @ Lc[assignment].T + rng.standard_normal((n, p_keep)) * np.sqrt(psi)
        full = np.empty((n, grid.size))
        full[:, keep] = X
        full[:, ~keep] = rng.normal(0.0, 3.0, (n, int((~keep).sum())))
        rows.append(full)
        diets += [diet] * n
    X = np.vstack(rows)
    n = X.shape[0]
    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "toy_spectra.csv"), "w") as fh:
        fh.write("sample_id,diet," + ",".join(f"{w:.4f}" for w in grid) + "\n")
        for i in range(n):
            fh.write(f"S{i + 1:03d},{diets[i]}," + ",".join(f"{v:.6f}" for v in X[i]) + "\n")
    kept = X[:, keep]
    fat = kept[:, assignment == 0].mean(axis=1) + 0.3 * rng.standard_normal(n)
    protein = kept[:, assignment == 2].mean(axis=1) + 0.3 * rng.standard_normal(n)
    lactose = rng.standard_normal(n)
    with open(os.path.join(OUT, "toy_responses.csv"), "w") as fh:
        fh.write("sample_id,fat,protein,lactose\n")
        for i in range(n):
            fh.write(f"S{i + 1:03d},{fat[i]:.6f},{protein[i]:.6f},{lactose[i]:.6f}\n")
    design = {
        "design": {"n": 100, "p": 12, "K_true": 2, "G_true": 3, "B": 2, "seed": 7,
                   "K_grid": [2], "G_grid": [2, 3], "K_max": 3, "G_max": 6},
        "sampler": {"n_iter": 300, "burn_in": 100, "thin": 2},
    }
    with open(os.path.join(OUT, "toy_design.json"), "w") as fh:
        json.dump(design, fh, indent=2)
        fh.write("\n")
    print(f"{n} samples, {grid.size} wavenumbers, {p_keep} outside the exclusion bands")


if __name__ == "__main__":
    main()
