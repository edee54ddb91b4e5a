"""Pre-transformations applied to images before distance computations."""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import resize_bilinear, to_float
from .errors import DataError, FormatError, TruncatedFileError

TRANSFORM_KINDS = ("none", "resize8", "pca10", "embedding_file")
EMB_MAGIC = b"EMB1"
EMBEDDING_WIDTH = 1000
_EMB_HEADER = struct.Struct("<4s2I")
# Ritz values below this fraction of the largest count as numerically zero
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "none"
    components: int = 10
    resize_to: int = 8
    path: str = None
    width: int = EMBEDDING_WIDTH

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.kind == "embedding_file" and not self.path:
            raise ValueError("embedding_file transform needs a path")


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    iterations: int
    converged: bool
    residual: float

    def project(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def _subspace_gap(q_new, q_old):
    # sine of the largest principal angle between span(q_new) and span(q_old)
    resid = q_old - q_new @ (q_new.T @ q_old)
    return float(np.linalg.norm(resid, 2))


def fit_pca(X, k=10, tol=1e-6, max_iter=1000, seed=0, oversample=10):
    """Top-``k`` principal directions by block subspace iteration.

    The covariance is never formed: each step multiplies the centred data
    and its transpose with the current block. The block carries
    ``oversample`` extra columns to speed up convergence; the stopping test
    is the principal-angle gap of the leading ``k`` Ritz vectors between
    consecutive iterations. Non-convergence emits a ``RuntimeWarning`` and
    still returns the best basis found.

    Parameters
    ----------
    X : array of shape (n, d)
    k : int
        Number of components, ``1 <= k <= min(n - 1, d)``.

    Returns
    -------
    PcaBasis
        Orthonormal component rows sorted by non-increasing explained
        variance (sample variance, ``n - 1`` denominator).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    if k < 1 or k > min(n - 1, d):
        raise ValueError(f"k={k} must lie in [1, min(n - 1, d)] = [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    block = min(k + oversample, d, n - 1) if oversample else k
    block = max(block, k)

    def cov_times(V):
        return Xc.T @ (Xc @ V) / (n - 1)

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, block)))
    lead_old = None
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(cov_times(Q))
        # Rayleigh-Ritz rotation so the leading columns track eigenvectors
        T = Q.T @ cov_times(Q)
        evals, evecs = np.linalg.eigh((T + T.T) / 2)
        Q = Q @ evecs[:, ::-1]
        # directions beyond the numerical rank have zero variance; any
        # orthonormal completion is valid, so only the rest must settle
        evals = evals[::-1]
        rank = int((evals > RANK_RTOL * max(evals[0], 0.0)).sum())
        lead = Q[:, :min(k, rank)]
        if lead.shape[1] == 0:
            gap = 0.0
            break
        if lead_old is not None and lead_old.shape == lead.shape:
            gap = _subspace_gap(lead, lead_old)
            if gap < tol:
                break
        elif block == d:
            # the block already spans the whole space
            gap = 0.0
            break
        lead_old = lead
    converged = gap < tol
    if not converged:
        warnings.warn(f"subspace iteration stopped after {it} iterations with gap {gap:.3g} > tol {tol:g}",
                      RuntimeWarning, stacklevel=2)
    comps = Q[:, :k].T.copy()
    variances = np.maximum(np.einsum("ij,ji->i", comps, cov_times(comps.T)), 0.0)
    order = np.argsort(-variances, kind="stable")
    comps, variances = comps[order], variances[order]
    # sign convention: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaBasis(mean, comps, variances, it, bool(converged), float(gap))


# ---------------------------------------------------------------- embeddings

def save_embeddings(path, matrix):
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("embeddings must be a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, *m.shape))
        fh.write(m.tobytes())


def load_embeddings(path, width=EMBEDDING_WIDTH):
    """Read an ``EMB1`` file. ``width=None`` accepts any row width."""
    raw = Path(path).read_bytes()
    if len(raw) < _EMB_HEADER.size:
        raise TruncatedFileError(f"{path}: missing EMB1 header")
    magic, n, w = _EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if width is not None and w != width:
        raise FormatError(f"{path}: embedding width {w} != expected {width}")
    if len(raw) - _EMB_HEADER.size < 4 * n * w:
        raise TruncatedFileError(f"{path}: payload shorter than {n}x{w} float32 values")
    return np.frombuffer(raw, dtype="<f4", count=n * w, offset=_EMB_HEADER.size).reshape(n, w).copy()


# ---------------------------------------------------------------- dispatch

def transform_images(spec, images):
    """Image-shaped output for ``none`` / ``resize8`` (used by DSSIM distances)."""
    if spec.kind == "none":
        return to_float(images)
    if spec.kind == "resize8":
        return resize_bilinear(images, spec.resize_to, spec.resize_to)
    raise ValueError(f"transform {spec.kind!r} does not produce images")


def apply_transform(spec, images, rows=None, total_rows=None, seed=0):
    """Map NHWC images to an ``(n, d_bar)`` float64 feature matrix.

    For ``embedding_file``, row ``i`` of the file belongs to sample ``i`` of
    the full split. When ``images`` is a subsample, ``rows`` gives its
    indices into the full split and ``total_rows`` the full split size.
    Row order itself cannot be verified; keeping it aligned is the caller's job.
    """
    images = np.asarray(images)
    n = len(images)
    if spec.kind in ("none", "resize8"):
        return transform_images(spec, images).reshape(n, -1)
    if spec.kind == "pca10":
        X = to_float(images).reshape(n, -1)
        basis = fit_pca(X, spec.components, seed=seed)
        return basis.project(X)
    emb = load_embeddings(spec.path, spec.width).astype(np.float64)
    if total_rows is not None and len(emb) != total_rows:
        raise DataError(f"embedding file has {len(emb)} rows but the split has {total_rows} samples")
    if rows is not None:
        rows = np.asarray(rows)
        if len(rows) != n:
            raise DataError(f"{len(rows)} row indices for {n} images")
        if len(rows) and rows.max() >= len(emb):
            raise DataError(f"embedding file has {len(emb)} rows, index {rows.max()} requested")
        return emb[rows]
    if len(emb) != n:
        raise DataError(f"embedding file has {len(emb)} rows but dataset has {n} samples")
    return emb
