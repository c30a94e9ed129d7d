"""Hot numeric kernels with two interchangeable backends.

The default backend compiles the inner loops with numba's @njit. Setting the
environment variable PROXYCLUST_DISABLE_NUMBA=1 (or a failed numba import)
selects the vectorized pure-numpy fallback instead. Both backends are
deterministic run-to-run; they differ only in floating-point summation order.
``benchmarks/bench_kernels.py`` times one against the other.
"""

import os

import numpy as np

_flag = os.environ.get("PROXYCLUST_DISABLE_NUMBA", "").strip().lower()
JIT_ENABLED = _flag not in ("1", "true", "yes", "on")

if JIT_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False

if not JIT_ENABLED:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


BACKEND = "numba" if JIT_ENABLED else "numpy"


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


# ---------------------------------------------------------------------------
# pair accumulation for the clustering losses
#
# Feature rows are split into a frozen half H and a trainable half X; the
# squared pair distance uses both halves, the gradient flows into X only.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _intra_pairs_jit(H, X, ii, jj, grad):
    total = 0.0
    for p in range(ii.shape[0]):
        i = ii[p]
        j = jj[p]
        d2 = 0.0
        for c in range(H.shape[1]):
            diff = H[i, c] - H[j, c]
            d2 += diff * diff
        for c in range(X.shape[1]):
            diff = X[i, c] - X[j, c]
            d2 += diff * diff
            grad[i, c] += 2.0 * diff
            grad[j, c] -= 2.0 * diff
        total += d2
    return total


def intra_pair_terms_numpy(H, X, ii, jj):
    grad = np.zeros_like(X)
    if ii.shape[0] == 0:
        return 0.0, grad
    dh = H[ii] - H[jj]
    dx = X[ii] - X[jj]
    d2 = np.einsum("ij,ij->i", dh, dh) + np.einsum("ij,ij->i", dx, dx)
    np.add.at(grad, ii, 2.0 * dx)
    np.add.at(grad, jj, -2.0 * dx)
    return float(d2.sum()), grad


def intra_pair_terms(H, X, ii, jj):
    """Sum of squared pair distances and its gradient w.r.t. X rows."""
    H = _as_f64(H)
    X = _as_f64(X)
    ii = _as_i64(ii)
    jj = _as_i64(jj)
    if not JIT_ENABLED:
        return intra_pair_terms_numpy(H, X, ii, jj)
    grad = np.zeros_like(X)
    total = _intra_pairs_jit(H, X, ii, jj, grad)
    return float(total), grad


@njit(cache=True)
def _inter_pairs_jit(H, X, ii, jj, margin, grad):
    total = 0.0
    for p in range(ii.shape[0]):
        i = ii[p]
        j = jj[p]
        d2 = 0.0
        for c in range(H.shape[1]):
            diff = H[i, c] - H[j, c]
            d2 += diff * diff
        for c in range(X.shape[1]):
            diff = X[i, c] - X[j, c]
            d2 += diff * diff
        d = np.sqrt(d2)
        gap = margin - d
        if gap > 0.0:
            total += gap
            # subgradient 0 exactly at the kink (gap == 0 skipped above) and
            # for coincident pairs where the distance has no direction
            if d > 0.0:
                inv = 1.0 / d
                for c in range(X.shape[1]):
                    diff = X[i, c] - X[j, c]
                    grad[i, c] -= inv * diff
                    grad[j, c] += inv * diff
    return total


def inter_pair_terms_numpy(H, X, ii, jj, margin):
    grad = np.zeros_like(X)
    if ii.shape[0] == 0:
        return 0.0, grad
    dh = H[ii] - H[jj]
    dx = X[ii] - X[jj]
    d = np.sqrt(np.einsum("ij,ij->i", dh, dh) + np.einsum("ij,ij->i", dx, dx))
    gap = margin - d
    total = float(gap[gap > 0.0].sum())
    active = (gap > 0.0) & (d > 0.0)
    if np.any(active):
        coef = np.zeros_like(d)
        coef[active] = -1.0 / d[active]
        np.add.at(grad, ii, coef[:, None] * dx)
        np.add.at(grad, jj, -coef[:, None] * dx)
    return total, grad


def inter_pair_terms(H, X, ii, jj, margin):
    """Hinge sum max(0, margin - d) over pairs and its gradient w.r.t. X."""
    H = _as_f64(H)
    X = _as_f64(X)
    ii = _as_i64(ii)
    jj = _as_i64(jj)
    if not JIT_ENABLED:
        return inter_pair_terms_numpy(H, X, ii, jj, margin)
    grad = np.zeros_like(X)
    total = _inter_pairs_jit(H, X, ii, jj, float(margin), grad)
    return float(total), grad


# ---------------------------------------------------------------------------
# nearest-centroid assignment (Lloyd inner step)
# ---------------------------------------------------------------------------


# fastmath lets LLVM vectorize the reduction; safe here because nothing
# downstream depends on the exact rounding of a squared distance
@njit(cache=True, fastmath=True)
def _assign_jit(X, C, labels, mind2):
    for i in range(X.shape[0]):
        best = 0
        bestd = np.inf
        for c in range(C.shape[0]):
            s = 0.0
            for f in range(X.shape[1]):
                diff = X[i, f] - C[c, f]
                s += diff * diff
            if s < bestd:  # strict: ties keep the lowest centroid index
                bestd = s
                best = c
        labels[i] = best
        mind2[i] = bestd


def assign_nearest_numpy(X, C):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", C, C)[None, :]
        - 2.0 * (X @ C.T)
    )
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1).astype(np.int64)
    mind2 = d2[np.arange(X.shape[0]), labels]
    return labels, mind2


def assign_nearest(X, C):
    """Index of the closest centroid per row plus the squared distance."""
    X = _as_f64(X)
    C = _as_f64(C)
    if not JIT_ENABLED:
        return assign_nearest_numpy(X, C)
    labels = np.empty(X.shape[0], dtype=np.int64)
    mind2 = np.empty(X.shape[0], dtype=np.float64)
    _assign_jit(X, C, labels, mind2)
    return labels, mind2


# ---------------------------------------------------------------------------
# dense squared-distance matrix (kernel two-sample statistic)
# ---------------------------------------------------------------------------


@njit(cache=True, fastmath=True)
def _sqdists_jit(A, B, out):
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            s = 0.0
            for f in range(A.shape[1]):
                diff = A[i, f] - B[j, f]
                s += diff * diff
            out[i, j] = s


def pairwise_sqdists_numpy(A, B):
    d2 = (
        np.einsum("ij,ij->i", A, A)[:, None]
        + np.einsum("ij,ij->i", B, B)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def pairwise_sqdists(A, B):
    A = _as_f64(A)
    B = _as_f64(B)
    if not JIT_ENABLED:
        return pairwise_sqdists_numpy(A, B)
    out = np.empty((A.shape[0], B.shape[0]), dtype=np.float64)
    _sqdists_jit(A, B, out)
    return out
