"""Slow, obviously-correct reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def silhouette_bruteforce(D, labels):
    """Per-sample silhouette by explicit loops over the three-case definition."""
    labels = list(labels)
    n = len(labels)
    classes = sorted(set(labels))
    out = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(D[i][j] for j in own) / len(own)
        b = math.inf
        for c in classes:
            if c == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == c]
            b = min(b, sum(D[i][j] for j in members) / len(members))
        if a < b:
            out.append(1 - a / b)
        elif a > b:
            out.append(b / a - 1)
        else:
            out.append(0.0)
    return np.array(out)


def aecm_optimum(m):
    """Best trace over all column permutations, as a fraction of the total."""
    m = np.asarray(m)
    k = m.shape[0]
    best = max(sum(m[i, p[i]] for i in range(k)) for p in itertools.permutations(range(k)))
    return best / m.sum()


def greedy_only(m):
    """Rows by descending max (ties to the lower row) claim their argmax if still free."""
    m = np.asarray(m)
    k = m.shape[0]
    order = sorted(range(k), key=lambda r: (-m[r].max(), r))
    taken, total = set(), 0
    for r in order:
        c = int(np.argmax(m[r]))
        if c not in taken:
            taken.add(c)
            total += m[r, c]
    return total / m.sum()


def ari_pairs(true, pred):
    """Adjusted Rand index by counting agreeing sample pairs explicitly."""
    n = len(true)
    a = b = c = d = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_t = true[i] == true[j]
            same_p = pred[i] == pred[j]
            if same_t and same_p:
                a += 1
            elif same_t:
                b += 1
            elif same_p:
                c += 1
            else:
                d += 1
    total = a + b + c + d
    expected = (a + b) * (a + c) / total
    max_index = ((a + b) + (a + c)) / 2
    if max_index == expected:
        return 1.0
    return (a - expected) / (max_index - expected)


def entropy_from_labels(labels):
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def conditional_entropy(a, b):
    """H(a | b) from raw label vectors."""
    a, b = np.asarray(a), np.asarray(b)
    n = len(a)
    h = 0.0
    for vb in np.unique(b):
        sel = a[b == vb]
        h += len(sel) / n * entropy_from_labels(sel)
    return h


def labels_from_contingency(m):
    true, pred = [], []
    for i, row in enumerate(np.asarray(m)):
        for j, count in enumerate(row):
            true += [i] * int(count)
            pred += [j] * int(count)
    return np.array(true), np.array(pred)


def numerical_grad(f, x, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def conv2d_naive(x, w, b):
    """Same-padded 2-D cross-correlation, NHWC input, (kh, kw, cin, cout) kernel."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((n, h, wd, cout))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, i:i + kh, j:j + kw, :]
            out[:, i, j, :] = np.tensordot(patch, w, axes=([1, 2, 3], [0, 1, 2]))
    return out + (0 if b is None else b)


def pca_eigh(X, k):
    """Top-``k`` principal axes (columns) and variances via a dense eigendecomposition."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    return vecs[:, order], vals[order]


def ols_normal_equations(x, y):
    """Slope, intercept, R^2 by solving the 2x2 normal equations."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([x, np.ones_like(x)])
    slope, intercept = np.linalg.solve(A.T @ A, A.T @ y)
    pred = A @ np.array([slope, intercept])
    r2 = 1 - ((y - pred) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    return slope, intercept, r2


def spearman(a, b):
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)


def probe_param_oracle(kind, shape, c_out):
    """Trainable parameters of a probe kind, counted from the architecture description alone."""
    h, w, c = shape
    table = {"regular": [8, 16, 32], "narrow": [2, 4, 8], "wide": [32, 64, 128], "shallow": [8],
             "deep": [8, 16, 32, 64, 128]}
    if kind == "mlp":
        d = h * w * c
        widths = [d] + [round(d * (1 - j / 4) + c_out * (j / 4)) for j in (1, 2, 3)] + [c_out]
        return sum(a * b + b for a, b in zip(widths, widths[1:]))
    reps = 1
    if kind in table:
        kernels = table[kind]
    elif kind == "shallow_norm":
        kernels = [(h // 8) * (w // 8) * 32 // ((h // 2) * (w // 2))]
    elif kind == "deep_norm":
        kernels = [8, 16, 32, 64, (h // 8) * (w // 8) * 32 // ((h // 32) * (w // 32))]
    elif kind == "depth_scaled":
        kernels = [round(k * max(1, c_out / 10)) for k in table["regular"]]
    elif kind == "length_scaled":
        kernels = table["regular"]
        reps = max(1, math.ceil(math.log2(c_out) / 2))
    else:
        raise ValueError(kind)
    total, cin = 0, c
    for k in kernels:
        for _ in range(reps):
            total += 3 * 3 * cin * k + k + 2 * k
            cin = k
    flat = (h >> len(kernels)) * (w >> len(kernels)) * kernels[-1]
    return total + flat * c_out + c_out
