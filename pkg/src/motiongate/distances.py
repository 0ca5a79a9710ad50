"""Euclidean and dependent multivariate DTW distances.

Sums run left to right in plain loops so results are reproducible
bit-for-bit and independent of BLAS or vectorization choices.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _euclid(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        s += d * d
    return math.sqrt(s)


@njit(cache=True, parallel=True)
def _pairwise_euclid(A, B):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in prange(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = _euclid(A[i], B[j])
    return out


def pairwise_euclidean(A, B) -> np.ndarray:
    """``(len(A), len(B))`` Euclidean distances between flattened rows."""
    A = np.ascontiguousarray(np.asarray(A, dtype=np.float64).reshape(len(A), -1))
    B = np.ascontiguousarray(np.asarray(B, dtype=np.float64).reshape(len(B), -1))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"row sizes differ: {A.shape[1]} vs {B.shape[1]}")
    return _pairwise_euclid(A, B)


@njit(cache=True)
def _dtw(a, b, radius):
    # a: (L1, M), b: (L2, M); radius < 0 means unconstrained.  Two rolling rows.
    n, m = a.shape[0], b.shape[0]
    n_ch = a.shape[1]
    prev = np.full(m, np.inf)
    cur = np.full(m, np.inf)
    for i in range(n):
        if radius >= 0:
            lo = max(0, i - radius)
            hi = min(m, i + radius + 1)
            if lo > 0:
                cur[lo - 1] = np.inf
        else:
            lo, hi = 0, m
        for j in range(lo, hi):
            s = 0.0
            for c in range(n_ch):
                d = a[i, c] - b[j, c]
                s += d * d
            cost = math.sqrt(s)
            if i == 0:
                cur[j] = cost if j == 0 else cost + cur[j - 1]
            elif j == lo:
                best = prev[j]
                if j > 0 and prev[j - 1] < best:
                    best = prev[j - 1]
                cur[j] = cost + best
            else:
                best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
                if prev[j - 1] < best:
                    best = prev[j - 1]
                cur[j] = cost + best
        if hi < m:
            cur[hi] = np.inf
        prev, cur = cur, prev
    return prev[m - 1]


@njit(cache=True, parallel=True)
def _pairwise_dtw(A, B, radius):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in prange(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = _dtw(A[i], B[j], radius)
    return out


def band_radius(n: int, m: int, band: float | None) -> int:
    """Sakoe-Chiba radius for a band given as a fraction of the longer series."""
    if band is None:
        return -1
    if not 0 < band <= 1:
        raise ValueError(f"band must lie in (0, 1], got {band}")
    return max(int(math.ceil(band * max(n, m))), abs(n - m))


def _as_series(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"series must be (L,) or (L, M), got {x.shape}")
    return np.ascontiguousarray(x)


def dtw_distance(a, b, band: float | None = None) -> float:
    """Dependent DTW: summed Euclidean row costs along the cheapest monotone path."""
    a, b = _as_series(a), _as_series(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"channel counts differ: {a.shape[1]} vs {b.shape[1]}")
    return float(_dtw(a, b, band_radius(len(a), len(b), band)))


def pairwise_dtw(A, B, band: float | None = None) -> np.ndarray:
    """DTW between every ``(L, M)`` series in ``A`` and every one in ``B``.

    Series inside one batch share a length; the two batches may differ.
    """
    A = np.ascontiguousarray(np.asarray(A, dtype=np.float64))
    B = np.ascontiguousarray(np.asarray(B, dtype=np.float64))
    if A.ndim == 2:
        A = A[:, :, None]
    if B.ndim == 2:
        B = B[:, :, None]
    if A.shape[2] != B.shape[2]:
        raise ValueError(f"channel counts differ: {A.shape[2]} vs {B.shape[2]}")
    return _pairwise_dtw(A, B, band_radius(A.shape[1], B.shape[1], band))


@njit(cache=True)
def _knn_rows(D, k):
    out = np.empty(D.shape[0])
    for i in range(D.shape[0]):
        row = np.sort(D[i])
        s = 0.0
        for j in range(k):
            s += row[j]
        out[i] = s / k
    return out


def knn_mean(D, k: int) -> np.ndarray:
    """Mean of the ``k`` smallest entries of each row of a distance matrix."""
    D = np.ascontiguousarray(np.asarray(D, dtype=np.float64))
    if D.ndim != 2 or D.shape[1] < k:
        raise ValueError(f"need at least k={k} references, got {D.shape}")
    return _knn_rows(D, k)
