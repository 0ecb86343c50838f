"""Embedding-space analyses: ROC curves, neighborhood enrichment, density.

Works on any embedding matrix with multi-hot labels; here both are synthetic
so the script runs standalone.

Run with: python3 demos/04_embedding_analysis.py
"""

import numpy as np

from topoprompt.metrics import (
    co_enrichment, density_multifunctionality_spearman, local_density,
    macro_roc, roc_curve, same_label_enrichment,
)

rng = np.random.default_rng(3)

# Three label clusters in a 16-d space plus background noise nodes.
centers = rng.normal(scale=3.0, size=(3, 16))
emb = rng.normal(scale=0.6, size=(300, 16))
labels = np.zeros((300, 3), dtype=np.int64)
for j in range(3):
    members = slice(j * 70, (j + 1) * 70)
    emb[members] += centers[j]
    labels[members, j] = 1

# Probe-style scores: distance to each center, negated so high means close.
scores = -np.stack([np.linalg.norm(emb - c, axis=1) for c in centers], axis=1)

curves = [roc_curve(scores[:, j], labels[:, j]) for j in range(3)]
for j, c in enumerate(curves):
    print(f"label {j}: AUC {c.auc:.3f}")
print(f"macro curve AUC: {macro_roc(curves).auc:.3f}")

# How pure are embedding neighborhoods with respect to label 0?
for k, frac in same_label_enrichment(emb, labels[:, 0], k_grid=(5, 20, 50)):
    print(f"same-label fraction among {k} nearest neighbors: {frac:.3f}")

# Prevalence-normalized co-enrichment; values near 1 mean no association.
mat = co_enrichment(emb, labels, anchor_set=(0, 1, 2), k=20, ratio_mode=True)
print("\nco-enrichment ratios (display order", [int(i) for i in mat.order], "):")
for row in mat.values[np.ix_(mat.order, mat.order)]:
    print("  " + "  ".join(f"{v:5.2f}" for v in row))

dens = local_density(emb, k=15)
print(f"\nlocal density: cluster median {np.median(dens[:210]):.3f}, "
      f"background median {np.median(dens[210:]):.3f}")

rho, degenerate = density_multifunctionality_spearman(emb, labels.sum(axis=1), k=15)
print(f"density vs label-count rank correlation: {rho:.3f} "
      f"(degenerate={degenerate})")
