"""How k-means agreement scores read a confusion matrix.

A 3-class example where the greedy argmax matching is ambiguous: two
classes prefer the same cluster, and the repair search finds the best
one-to-one assignment.
"""

import numpy as np

from dsdiff import aecm, cluster_scores
from dsdiff.kmeans_scores import aecm_assignment, greedy_assignment

m = np.array([[30, 25, 0],
              [28, 2, 5],
              [0, 1, 40]])
print("contingency (rows: classes, columns: clusters)")
print(m)

mapping, order = greedy_assignment(m)
print(f"greedy claims (row order {order}): {mapping.tolist()}   (-1 = unresolved)")
best = aecm_assignment(m)
print(f"repaired assignment: {best.tolist()}")
print(f"AECM = {aecm(m):.4f} = {m[np.arange(3), best].sum()}/{m.sum()}")

s = cluster_scores(m)
for name in ("ari", "ami", "homogeneity", "completeness", "v_measure"):
    print(f"{name:>12}: {getattr(s, name):.4f}")
