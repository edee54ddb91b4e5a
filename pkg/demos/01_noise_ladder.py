"""Score the noise ladder with all three families of difficulty scores.

Each rung adds pixel noise to the same 4-class problem, so every score
should fall as sigma grows. Runs in about a minute on one core.

    python3 demos/01_noise_ladder.py
"""

import numpy as np
from scipy.stats import spearmanr

from dsdiff import PRESETS, kmeans_score_pipeline, probe_score, silhouette_pipeline, synth_generate

SEED = 42

rows = []
for dataset_id, spec in PRESETS["noise-ladder"](SEED):
    ds = synth_generate(spec, dataset_id)
    probe = probe_score(ds, "regular", epochs=5, seed=SEED)
    km = kmeans_score_pipeline(ds, "none", "aecm", seed=SEED)
    sil = silhouette_pipeline(ds, "S3", seed=SEED)
    rows.append((spec.sigma, probe.score, km.score, sil.score, probe.wall_time, km.wall_time, sil.wall_time))

print(f"{'sigma':>6} {'probe@5':>8} {'aecm':>7} {'S3':>7}   {'t_probe':>8} {'t_kmeans':>8} {'t_sil':>7}")
for sigma, p, k, s, tp, tk, ts in rows:
    print(f"{sigma:>6g} {p:>8.3f} {k:>7.3f} {s:>7.3f}   {tp:>7.2f}s {tk:>7.2f}s {ts:>6.3f}s")

sigmas = -np.array([r[0] for r in rows])
for name, col in (("probe@5", 1), ("aecm", 2), ("S3", 3)):
    print(f"Spearman vs ladder order, {name}: {spearmanr(sigmas, [r[col] for r in rows])[0]:.3f}")
