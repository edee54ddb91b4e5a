"""Pairwise distances (MSE, DSSIM) and silhouette-based dataset scores."""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .dataset import subsample_indices, to_float
from .records import MODEL_OPS_PER_SECOND, ScoreRecord, measure
from .transform import TransformSpec, apply_transform, transform_images

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0

# pipeline id -> (transform, distance)
PIPELINES = {
    "S1": ("none", "mse"),
    "S2": ("none", "dssim"),
    "S3": ("resize8", "mse"),
    "S4": ("resize8", "dssim"),
    "S5": ("pca10", "mse"),
    "S6": ("embedding_file", "mse"),
}


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    metric: str

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"distance matrix must be square, got {v.shape}")

    def __len__(self):
        return len(self.values)


def mse_distance(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    return float(np.mean((u - v) ** 2))


def _channels_first(images):
    # (..., H, W[, C]) -> (..., C, H, W); a 2-D image is one channel
    x = to_float(images)
    if x.ndim == 2:
        return x[None]
    return np.moveaxis(x, -1, -3)


def _box_mean(x, win):
    """Means over all valid ``win`` windows of the last two axes (integral image)."""
    wh, ww = win
    s = np.cumsum(np.cumsum(x, axis=-2), axis=-1)
    s = np.pad(s, [(0, 0)] * (x.ndim - 2) + [(1, 0), (1, 0)])
    total = s[..., wh:, ww:] - s[..., :-wh, ww:] - s[..., wh:, :-ww] + s[..., :-wh, :-ww]
    return total / (wh * ww)


def _window(shape_hw):
    h, w = shape_hw
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        return (h, w)
    return (SSIM_WINDOW, SSIM_WINDOW)


def _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov):
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    # mean over windows, then over channels
    return (num / den).mean(axis=(-2, -1)).mean(axis=-1)


def dssim(img_a, img_b):
    """Structural dissimilarity ``(1 - SSIM) / 2`` of two images in [0, 1].

    SSIM uses 8x8 uniform windows at stride 1 (one global window for smaller
    images) with K1=0.01, K2=0.03, L=1; multi-channel SSIM is the channel mean.
    """
    a, b = _channels_first(img_a), _channels_first(img_b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    win = _window(a.shape[-2:])
    mu_a, mu_b = _box_mean(a, win), _box_mean(b, win)
    var_a = _box_mean(a * a, win) - mu_a * mu_a
    var_b = _box_mean(b * b, win) - mu_b * mu_b
    cov = _box_mean(a * b, win) - mu_a * mu_b
    return float((1.0 - _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov)) / 2.0)


def dssim_matrix(images):
    """Pairwise DSSIM of NHWC images; per-image moments are computed once."""
    x = _channels_first(images)
    n = len(x)
    win = _window(x.shape[-2:])
    mu = _box_mean(x, win)
    var = _box_mean(x * x, win) - mu * mu
    out = np.zeros((n, n))
    for i in range(n - 1):
        rest = slice(i + 1, n)
        cov = _box_mean(x[i] * x[rest], win) - mu[i] * mu[rest]
        ssim = _ssim_from_moments(mu[i], mu[rest], var[i], var[rest], cov)
        out[i, rest] = (1.0 - ssim) / 2.0
    out = out + out.T
    return DistanceMatrix(out, "dssim")


def mse_matrix(X):
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    if len(X) < 2:
        return DistanceMatrix(np.zeros((len(X), len(X))), "mse")
    return DistanceMatrix(squareform(pdist(X, "sqeuclidean")) / X.shape[1], "mse")


def silhouette_samples(distances, labels):
    """Per-sample silhouette values from a precomputed distance matrix.

    Samples whose class has a single member get 0 and trigger a warning.
    """
    D = distances.values if isinstance(distances, DistanceMatrix) else np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    if D.shape != (n, n):
        raise ValueError(f"distance matrix {D.shape} does not match {n} labels")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least 2 classes")
    sums = np.empty((n, len(classes)))
    for c in range(len(classes)):
        sums[:, c] = D[:, inverse == c].sum(axis=1)
    rows = np.arange(n)
    own = counts[inverse]
    singleton = own == 1
    a = np.divide(sums[rows, inverse], own - 1, out=np.zeros(n), where=~singleton)
    means = sums / counts
    means[rows, inverse] = np.inf
    b = means.min(axis=1)
    s = np.zeros(n)
    lt, gt = a < b, a > b
    s[lt] = 1.0 - a[lt] / b[lt]
    s[gt] = b[gt] / a[gt] - 1.0
    if singleton.any():
        s[singleton] = 0.0
        warnings.warn(f"{int(singleton.sum())} sample(s) belong to single-member classes; scored 0",
                      RuntimeWarning, stacklevel=2)
    return s


@dataclass
class SilhouetteResult:
    samples: np.ndarray
    labels: np.ndarray
    pipeline: str
    wall_time: float
    distance_time: float
    work: float
    metadata: dict = field(default_factory=dict)

    @property
    def score(self):
        return float(self.samples.mean())

    @property
    def per_class(self):
        return {int(c): float(self.samples[self.labels == c].mean()) for c in np.unique(self.labels)}

    def to_record(self, dataset_id, seed, timing="wall"):
        t = self.wall_time if timing == "wall" else self.work / MODEL_OPS_PER_SECOND
        return ScoreRecord(dataset_id, "silhouette", self.pipeline, self.score, t, seed)


def pipeline_features(dataset, pipeline, n_max=1000, seed=0, embeddings=None):
    """Subsample the train split and apply the pipeline's transform.

    Returns ``(features, labels)`` where features are images for DSSIM
    pipelines and ``(n, d_bar)`` vectors otherwise.
    """
    kind, metric = PIPELINES[pipeline]
    idx = subsample_indices(dataset.n_train, n_max, seed)
    images = dataset.x_train[idx]
    labels = dataset.y_train[idx]
    spec = TransformSpec(kind, path=embeddings) if kind == "embedding_file" else TransformSpec(kind)
    if metric == "dssim":
        return transform_images(spec, images), labels
    return apply_transform(spec, images, rows=idx, total_rows=dataset.n_train, seed=seed), labels


def pairwise(features, metric):
    return dssim_matrix(features) if metric == "dssim" else mse_matrix(features)


def silhouette_pipeline(dataset, pipeline, n_max=1000, seed=0, embeddings=None, repeat_below=1.0):
    """Score ``dataset`` with one of the silhouette pipelines ``S1``..``S6``."""
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {sorted(PIPELINES)}")
    if PIPELINES[pipeline][0] == "embedding_file" and embeddings is None:
        raise ValueError(f"pipeline {pipeline} needs an embedding file")
    _, metric = PIPELINES[pipeline]
    t0 = time.perf_counter()
    features, labels = pipeline_features(dataset, pipeline, n_max, seed, embeddings)
    t_transform = time.perf_counter() - t0
    dist, t_dist = measure(pairwise, features, metric, repeat_below=repeat_below)
    t1 = time.perf_counter()
    samples = silhouette_samples(dist, labels)
    t_score = time.perf_counter() - t1
    n = len(labels)
    d_bar = int(np.prod(features.shape[1:]))
    work = n * n * d_bar * (12 if metric == "dssim" else 1) / 2 + n * d_bar
    return SilhouetteResult(samples, labels, pipeline, t_transform + t_dist + t_score, t_dist, work,
                            {"metric": metric, "n": n, "d_bar": d_bar, "ssim_window": SSIM_WINDOW,
                             "ssim_k1": SSIM_K1, "ssim_k2": SSIM_K2, "ssim_range": SSIM_RANGE})
