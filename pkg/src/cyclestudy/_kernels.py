"""Hot inner loops: weighted within-group demeaning and per-cluster score sums.

Each kernel has a numba implementation and a pure-numpy implementation with the
same signature.  The numba path is used when numba imports cleanly and the
environment variable ``CYCLESTUDY_NUMBA`` is not set to ``0``.  Both paths sum
rows in index order, so results are deterministic for a given row order.
"""

import os

import numpy as np

_FLAG = os.environ.get("CYCLESTUDY_NUMBA", "1").strip().lower()

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG not in ("0", "false", "no", "off")


def demean_sweep_numpy(X, codes, n_groups, w):
    """Subtract weighted group means from every column of ``X`` in place.

    Returns the removed means, shape ``(n_groups, p)``.
    """
    wsum = np.bincount(codes, weights=w, minlength=n_groups)
    inv = np.zeros(n_groups)
    np.divide(1.0, wsum, out=inv, where=wsum > 0)
    means = np.empty((n_groups, X.shape[1]))
    for j in range(X.shape[1]):
        means[:, j] = np.bincount(codes, weights=w * X[:, j], minlength=n_groups) * inv
        X[:, j] -= means[codes, j]
    return means


def cluster_sums_numpy(S, codes, n_groups):
    """Column sums of ``S`` within each cluster, shape ``(n_groups, p)``."""
    out = np.empty((n_groups, S.shape[1]))
    for j in range(S.shape[1]):
        out[:, j] = np.bincount(codes, weights=S[:, j], minlength=n_groups)
    return out


if NUMBA_AVAILABLE:

    @njit(cache=True)
    def demean_sweep_numba(X, codes, n_groups, w):
        n, p = X.shape
        sums = np.zeros((n_groups, p))
        wsum = np.zeros(n_groups)
        for i in range(n):
            g = codes[i]
            wi = w[i]
            wsum[g] += wi
            for j in range(p):
                sums[g, j] += wi * X[i, j]
        for g in range(n_groups):
            if wsum[g] > 0.0:
                for j in range(p):
                    sums[g, j] /= wsum[g]
        for i in range(n):
            g = codes[i]
            for j in range(p):
                X[i, j] -= sums[g, j]
        return sums

    @njit(cache=True)
    def cluster_sums_numba(S, codes, n_groups):
        n, p = S.shape
        out = np.zeros((n_groups, p))
        for i in range(n):
            g = codes[i]
            for j in range(p):
                out[g, j] += S[i, j]
        return out

else:  # pragma: no cover
    demean_sweep_numba = None
    cluster_sums_numba = None


def demean_sweep(X, codes, n_groups, w):
    if USE_NUMBA:
        return demean_sweep_numba(X, codes, n_groups, w)
    return demean_sweep_numpy(X, codes, n_groups, w)


def cluster_sums(S, codes, n_groups):
    if USE_NUMBA:
        return cluster_sums_numba(np.ascontiguousarray(S), codes, n_groups)
    return cluster_sums_numpy(S, codes, n_groups)


def backend():
    return "numba" if USE_NUMBA else "numpy"
