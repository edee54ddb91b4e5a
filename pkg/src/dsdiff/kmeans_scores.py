"""k-means clustering against the class labels and the scores derived from it.

The clustering is initialized with the class-mean images, so cluster ``k``
starts at class ``k``. Agreement with the true labels is then summarized
by AECM (accuracy on the estimated confusion matrix) and by the usual
information-theoretic and pair-counting indices.
"""

import itertools
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .dataset import to_float
from .records import MODEL_OPS_PER_SECOND, ScoreRecord
from .transform import TransformSpec, apply_transform

METRICS = ("aecm", "ami", "ari", "v", "homogeneity", "completeness")
EXHAUSTIVE_LIMIT = 7


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: list
    iterations: int
    converged: bool


def kmeans(X, labels_for_init, num_classes, tol=1e-4, max_iter=300):
    """Lloyd's algorithm from class-mean centroids.

    Stops when the largest L2 centroid displacement drops below ``tol`` (or
    is exactly zero) or after ``max_iter`` iterations. Assignment ties go to the lowest
    centroid index and empty clusters keep their previous centroid.
    ``inertia[t]`` is the within-cluster sum of squares right after the
    assignment step of iteration ``t``.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    y = np.asarray(labels_for_init)
    n = len(X)
    if n < num_classes:
        raise ValueError(f"need at least {num_classes} samples, got {n}")
    if len(y) != n:
        raise ValueError("labels_for_init must have one entry per sample")
    present = np.bincount(y, minlength=num_classes)[:num_classes]
    if (present == 0).any() or y.max() >= num_classes:
        missing = np.flatnonzero(present == 0).tolist()
        raise ValueError(f"classes {missing} absent from init labels (or labels >= {num_classes})")
    centroids = np.stack([X[y == c].mean(axis=0) for c in range(num_classes)])
    inertia = []
    assign = None
    converged = False
    it = 0
    dist = np.empty((n, num_classes))
    while it < max_iter:
        it += 1
        for c in range(num_classes):
            diff = X - centroids[c]
            dist[:, c] = np.einsum("ij,ij->i", diff, diff)
        assign = dist.argmin(axis=1)
        inertia.append(float(dist[np.arange(n), assign].sum()))
        new = centroids.copy()
        for c in range(num_classes):
            members = assign == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        # a fixed point counts as converged even with tol=0
        if shift < tol or shift == 0.0:
            converged = True
            break
    return KmeansResult(centroids, assign, inertia, it, converged)


def contingency(labels_true, labels_pred, num_classes=None):
    """``m[c, k]`` = number of samples with true label ``c`` in cluster ``k``."""
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    size = num_classes or int(max(labels_true.max(), labels_pred.max())) + 1
    m = np.zeros((size, size), dtype=np.int64)
    np.add.at(m, (labels_true, labels_pred), 1)
    return m


# ---------------------------------------------------------------- AECM

def greedy_assignment(m):
    """Row -> column map by per-row maxima.

    Rows are visited in descending order of their maximum (ties: lower row
    first) and claim their argmax column (ties: lower column). A row whose
    column is already claimed is left unassigned (-1).
    """
    m = np.asarray(m)
    row_max = m.max(axis=1)
    order = sorted(range(len(m)), key=lambda r: (-row_max[r], r))
    mapping = np.full(len(m), -1)
    taken = set()
    for r in order:
        col = int(m[r].argmax())
        if col not in taken:
            mapping[r] = col
            taken.add(col)
    return mapping, order


def aecm_assignment(m, limit=EXHAUSTIVE_LIMIT):
    """Bijective row -> column map behind :func:`aecm`.

    Greedy argmax claims come first. If they do not form a bijection, the
    unresolved rows are searched exhaustively against the unclaimed
    columns. Unused search budget (up to ``limit`` rows) is spent on the
    least confident greedily fixed rows, which are released together with
    their columns; with ``num_classes <= limit`` the search therefore covers
    every row and the result is the optimal permutation. Unresolved rows
    beyond the budget are paired with the free columns in ascending order.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"contingency must be square, got shape {m.shape}")
    mapping, order = greedy_assignment(m)
    unresolved = [r for r in order if mapping[r] < 0]
    if not unresolved:
        return mapping
    # initial permutation: unresolved rows (ascending) take the unclaimed columns (ascending)
    claimed = set(int(c) for c in mapping if c >= 0)
    free = [c for c in range(len(m)) if c not in claimed]
    initial = dict(zip(sorted(unresolved), free))
    search = unresolved[:limit]
    for r in unresolved[limit:]:
        mapping[r] = initial[r]
    search_cols = [initial[r] for r in search]
    released = [r for r in reversed(order) if mapping[r] >= 0 and r not in unresolved]
    released = released[:max(0, limit - len(search))]
    search += released
    search_cols += [int(mapping[r]) for r in released]
    n_search = len(search)
    if n_search:
        rows = np.array(search)
        sub = m[np.ix_(rows, search_cols)]
        perms = np.array(list(itertools.permutations(range(n_search))))
        totals = sub[np.arange(n_search), perms].sum(axis=1)
        best = perms[int(totals.argmax())]
        for i, r in enumerate(rows):
            mapping[r] = search_cols[best[i]]
    return mapping


def aecm(m, limit=EXHAUSTIVE_LIMIT):
    """Accuracy on the estimated confusion matrix, in [0, 1].

    ``limit=0`` gives the greedy-only value (unresolved rows paired with
    free columns in ascending order, no search).
    """
    m = np.asarray(m)
    mapping = aecm_assignment(m, limit)
    total = m.sum()
    if total == 0:
        raise ValueError("contingency is empty")
    return float(m[np.arange(len(m)), mapping].sum() / total)


def aecm_bruteforce(m):
    """Best trace fraction over all column permutations (factorial cost)."""
    m = np.asarray(m)
    perms = np.array(list(itertools.permutations(range(len(m)))))
    return float(m[np.arange(len(m)), perms].sum(axis=1).max() / m.sum())


# ---------------------------------------------------------------- agreement indices

def _entropy(counts):
    counts = counts[counts > 0].astype(np.float64)
    n = counts.sum()
    p = counts / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(m):
    n = m.sum()
    a, b = m.sum(axis=1), m.sum(axis=0)
    nz = m > 0
    outer = np.outer(a, b).astype(np.float64)
    mij = m[nz].astype(np.float64)
    return float((mij / n * (np.log(mij) + np.log(n) - np.log(outer[nz]))).sum())


def expected_mutual_info(m):
    """E[MI] under the hypergeometric (permutation) model for the given margins."""
    a = m.sum(axis=1)
    b = m.sum(axis=0)
    a = a[a > 0].astype(np.float64)
    b = b[b > 0].astype(np.float64)
    n = float(m.sum())
    emi = 0.0
    lg_a, lg_b = gammaln(a + 1), gammaln(b + 1)
    lg_na, lg_nb = gammaln(n - a + 1), gammaln(n - b + 1)
    lg_n = gammaln(n + 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            lo = max(1.0, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1)
            term = nij / n * (np.log(n * nij) - np.log(ai * bj))
            logp = (lg_a[i] + lg_b[j] + lg_na[i] + lg_nb[j] - lg_n - gammaln(nij + 1)
                    - gammaln(ai - nij + 1) - gammaln(bj - nij + 1) - gammaln(n - ai - bj + nij + 1))
            emi += float((term * np.exp(logp)).sum())
    return emi


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def adjusted_rand_index(m):
    n = m.sum()
    sum_cells = _comb2(m).sum()
    sum_a = _comb2(m.sum(axis=1)).sum()
    sum_b = _comb2(m.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n)
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def adjusted_mutual_info(m):
    h_true = _entropy(m.sum(axis=1))
    h_pred = _entropy(m.sum(axis=0))
    if h_true == 0 and h_pred == 0:
        return 1.0
    if h_true == 0 or h_pred == 0:
        return 0.0
    mi = _mutual_info(m)
    emi = expected_mutual_info(m)
    denom = (h_true + h_pred) / 2 - emi
    if denom == 0:
        return 0.0
    return float((mi - emi) / denom)


def _conditional_entropy(m):
    """H(row variable | column variable), as a weighted sum of column entropies."""
    n = m.sum()
    return float(sum(col.sum() / n * _entropy(col) for col in m.T if col.sum() > 0))


def homogeneity_completeness_v(m):
    m = np.asarray(m)
    h_true = _entropy(m.sum(axis=1))
    h_pred = _entropy(m.sum(axis=0))
    # the same summation for H(C|K) and H(C) makes the extremes exact
    homogeneity = 1.0 if h_true == 0 else 1.0 - _conditional_entropy(m) / h_true
    completeness = 1.0 if h_pred == 0 else 1.0 - _conditional_entropy(m.T) / h_pred
    homogeneity = min(max(homogeneity, 0.0), 1.0)
    completeness = min(max(completeness, 0.0), 1.0)
    if homogeneity + completeness == 0:
        v = 0.0
    else:
        v = 2 * homogeneity * completeness / (homogeneity + completeness)
    return homogeneity, completeness, v


@dataclass(frozen=True)
class ClusterScoreSet:
    aecm: float
    ami: float
    ari: float
    homogeneity: float
    completeness: float
    v_measure: float

    def get(self, metric):
        return {"aecm": self.aecm, "ami": self.ami, "ari": self.ari, "v": self.v_measure,
                "homogeneity": self.homogeneity, "completeness": self.completeness}[metric]


def agreement_metrics(m):
    """ARI, AMI (arithmetic-mean normalization), homogeneity, completeness and v-measure."""
    m = np.asarray(m, dtype=np.int64)
    if m.sum() < 2:
        raise ValueError("need at least 2 samples")
    h, c, v = homogeneity_completeness_v(m)
    return {"ami": adjusted_mutual_info(m), "ari": adjusted_rand_index(m),
            "homogeneity": h, "completeness": c, "v": v}


def cluster_scores(m, limit=EXHAUSTIVE_LIMIT):
    rest = agreement_metrics(m)
    return ClusterScoreSet(aecm(m, limit), rest["ami"], rest["ari"], rest["homogeneity"],
                           rest["completeness"], rest["v"])


# ---------------------------------------------------------------- pipeline

@dataclass
class KmeansScore:
    scores: ClusterScoreSet
    metric: str
    transform: str
    clustering: KmeansResult
    wall_time: float
    work: float

    @property
    def score(self):
        return self.scores.get(self.metric)

    @property
    def variant(self):
        return f"{self.transform}+{self.metric}"

    def to_record(self, dataset_id, seed, timing="wall"):
        t = self.wall_time if timing == "wall" else self.work / MODEL_OPS_PER_SECOND
        return ScoreRecord(dataset_id, "kmeans", self.variant, self.score, t, seed)


def kmeans_score_pipeline(dataset, transform="none", metric="aecm", seed=0, embeddings=None,
                          tol=1e-4, max_iter=300):
    """Transform the train split, cluster into ``num_classes`` groups and score against the labels."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    t0 = time.perf_counter()
    spec = TransformSpec(transform, path=embeddings) if transform == "embedding_file" else TransformSpec(transform)
    if transform == "none":
        X = to_float(dataset.x_train).reshape(dataset.n_train, -1)
    else:
        X = apply_transform(spec, dataset.x_train, total_rows=dataset.n_train, seed=seed)
    result = kmeans(X, dataset.y_train, dataset.num_classes, tol=tol, max_iter=max_iter)
    m = contingency(dataset.y_train, result.assignments, dataset.num_classes)
    scores = cluster_scores(m)
    wall = max(time.perf_counter() - t0, 1e-9)
    work = result.iterations * X.shape[0] * X.shape[1] * dataset.num_classes * 3
    return KmeansScore(scores, metric, transform, result, wall, work)
