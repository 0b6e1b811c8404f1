"""Regenerates the mini fixture: 300 samples, [64, 2, 2] float32 maps, 3 classes.

Twelve channels carry class signal of varying strength; the rest are noise.
Run from this directory: python generate.py
"""
import json
import os

import numpy as np

rng = np.random.default_rng(20240611)
classes = ["Highly fresh", "Fresh", "Not fresh"]
counts = [110, 100, 90]
channels = 64

means = np.zeros((3, channels))
informative = rng.choice(channels, size=12, replace=False)
for rank, ch in enumerate(informative):
    strength = 1.2 - 0.08 * rank
    means[:, ch] = strength * rng.standard_normal(3)

os.makedirs("features", exist_ok=True)
labels = [c for c, m in enumerate(counts) for _ in range(m)]
order = rng.permutation(len(labels))
entries = []
for i, idx in enumerate(order):
    c = labels[idx]
    pooled = means[c] + rng.standard_normal(channels)
    spatial = 0.5 * rng.standard_normal((channels, 2, 2))
    fmap = (pooled[:, None, None] + spatial).astype("<f4")
    rel = f"features/s{i:03d}.npy"
    np.save(rel, fmap)
    entries.append(
        {
            "sample_id": f"s{i:03d}",
            "label_name": classes[c],
            "feature_path": rel,
            "backbone": "synthetic",
            "stage": "mini",
        }
    )

with open("manifest.json", "w") as f:
    json.dump({"class_names": classes, "feature_dim": channels, "entries": entries}, f, indent=2)
    f.write("\n")
