"""Clustering agreement metrics, k-means, zero-shot assignment, and a kernel
two-sample statistic.

NMI uses natural logs with the arithmetic-mean normalization
MI / ((H(p) + H(q)) / 2) and is defined as 1 when both entropies vanish.
The Rand index is the unadjusted fraction of agreeing pairs. k-means is
k-means++ seeded Lloyd with a declared empty-cluster rule (re-seed at the
point farthest from its centroid) and reports every restart so callers can
average metrics across restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300


def _contingency(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape[0] != b.shape[0]:
        raise ConfigError(f"partitions have different lengths: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise ConfigError("need at least two samples to compare partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((int(ai.max()) + 1, int(bi.max()) + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def nmi(a, b) -> float:
    """Normalized mutual information between two partitions, in [0, 1].

    Label values themselves carry no meaning; any relabeling of either side
    leaves the score unchanged.
    """
    table = _contingency(a, b)
    n = int(table.sum())
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)

    nz = table > 0
    # identical up to relabeling <=> one nonzero per row and per column;
    # answer exactly 1 there instead of trusting two float paths to cancel
    if np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1):
        return 1.0
    nij = table[nz].astype(np.float64)
    outer = np.multiply.outer(rows, cols)[nz].astype(np.float64)
    # factored so that independent partitions cancel exactly: ln(nij*n) - ln(ri*cj)
    mi = float(np.sum((nij / n) * (np.log(nij * n) - np.log(outer))))

    rows_nz = rows[rows > 0].astype(np.float64)
    cols_nz = cols[cols > 0].astype(np.float64)
    hp = float(np.log(n) - np.sum(rows_nz * np.log(rows_nz)) / n)
    hq = float(np.log(n) - np.sum(cols_nz * np.log(cols_nz)) / n)

    denom = 0.5 * (hp + hq)
    if denom == 0.0:
        return 1.0
    return min(1.0, max(0.0, mi / denom))


def rand_index(a, b) -> float:
    """Unadjusted Rand index: agreeing pairs / C(n, 2). Exact integer math."""
    table = _contingency(a, b)
    n = int(table.sum())

    def comb2(x: int) -> int:
        return x * (x - 1) // 2

    same_same = int(sum(comb2(int(v)) for v in table.ravel()))
    same_a = int(sum(comb2(int(v)) for v in table.sum(axis=1)))
    same_b = int(sum(comb2(int(v)) for v in table.sum(axis=0)))
    total = comb2(n)
    agree = total - same_a - same_b + 2 * same_same
    return agree / total


@dataclass
class KMeansResult:
    labels: np.ndarray                 # best-inertia restart
    inertia: float
    restart_labels: list = field(default_factory=list)
    restart_inertias: list = field(default_factory=list)
    restart_traces: list = field(default_factory=list)  # per-iteration inertia

    @property
    def mean_inertia(self) -> float:
        return float(np.mean(self.restart_inertias))


def _kmeanspp_seed(V, k, rng):
    # greedy variant: several d2-weighted candidates per step, keep the one
    # with the lowest resulting potential
    n = V.shape[0]
    trials = 2 + int(np.log(k)) if k > 1 else 1
    centers = np.empty((k, V.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = V[first]
    d2 = np.einsum("ij,ij->i", V - centers[0], V - centers[0])
    for t in range(1, k):
        s = float(d2.sum())
        if s > 0.0:
            cands = rng.choice(n, size=trials, p=d2 / s)
        else:
            cands = rng.integers(n, size=trials)
        best_pot = np.inf
        best_d2 = None
        best_idx = None
        for idx in cands:
            nd2 = np.minimum(
                d2, np.einsum("ij,ij->i", V - V[int(idx)], V - V[int(idx)])
            )
            pot = float(nd2.sum())
            if pot < best_pot:
                best_pot, best_d2, best_idx = pot, nd2, int(idx)
        centers[t] = V[best_idx]
        d2 = best_d2
    return centers


def _lloyd(V, centers, k, max_iter):
    prev = None
    trace = []
    labels = None
    mind2 = None
    for _ in range(max_iter):
        labels, mind2 = kernels.assign_nearest(V, centers)
        # a cluster left empty grabs the point farthest from its centroid;
        # the sentinel keeps one donor point from being stolen twice
        while True:
            counts = np.bincount(labels, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if empties.size == 0:
                break
            c = int(empties[0])
            far = int(np.argmax(mind2))
            labels[far] = c
            centers[c] = V[far]
            mind2[far] = -1.0
        np.maximum(mind2, 0.0, out=mind2)
        trace.append(float(mind2.sum()))
        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels.copy()
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        centers = np.zeros_like(centers)
        np.add.at(centers, labels, V)
        centers /= counts[:, None]
    return labels, trace[-1], trace


def kmeans(V, k: int, restarts: int = KMEANS_RESTARTS, seed=0, max_iter: int = KMEANS_MAX_ITER) -> KMeansResult:
    """Best-of-restarts Lloyd with k-means++ seeding.

    Every restart's partition and inertia are kept on the result so that
    clustering quality can be averaged over restarts rather than cherry-
    picked. Ties on best inertia keep the earliest restart.
    """
    V = np.ascontiguousarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ConfigError(f"expected 2-D features, got shape {V.shape}")
    n = V.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    result = KMeansResult(labels=None, inertia=np.inf)
    for child in ss.spawn(restarts):
        rng = np.random.default_rng(child)
        centers = _kmeanspp_seed(V, k, rng)
        labels, inertia, trace = _lloyd(V, centers, k, max_iter)
        result.restart_labels.append(labels)
        result.restart_inertias.append(inertia)
        result.restart_traces.append(trace)
        if inertia < result.inertia:
            result.inertia = inertia
            result.labels = labels
    result.inertia = float(result.inertia)
    return result


def zero_shot_assign(X, prompts) -> np.ndarray:
    """Highest-cosine prompt row per sample; ties go to the lowest index."""
    X = np.asarray(X, dtype=np.float64)
    prompts = np.asarray(prompts, dtype=np.float64)
    if X.shape[1] != prompts.shape[1]:
        raise ConfigError(
            f"feature dim {X.shape[1]} != prompt dim {prompts.shape[1]}"
        )
    return np.argmax(X @ prompts.T, axis=1).astype(np.int64)


def mmd2_unbiased(X, Y, sigma: float | None = None) -> float:
    """Unbiased squared maximum mean discrepancy with a Gaussian kernel.

    k(x, y) = exp(-|x - y|^2 / (2 sigma^2)); sigma defaults to the median
    pairwise distance of the pooled samples. The unbiased estimator drops
    the diagonal of the within-set kernel sums and may go slightly negative
    when the distributions match.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ConfigError(f"need 2-D samples with equal dims, got {X.shape} and {Y.shape}")
    nx, ny = X.shape[0], Y.shape[0]
    if nx < 2 or ny < 2:
        raise ConfigError("need at least two samples on each side")

    if sigma is None:
        pooled = np.concatenate([X, Y], axis=0)
        d2 = kernels.pairwise_sqdists(pooled, pooled)
        iu = np.triu_indices(pooled.shape[0], k=1)
        sigma = float(np.median(np.sqrt(d2[iu])))
    if not sigma > 0.0:
        raise ConfigError(f"degenerate kernel bandwidth sigma={sigma}")

    g = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-g * kernels.pairwise_sqdists(X, X))
    np.fill_diagonal(kxx, 0.0)
    kyy = np.exp(-g * kernels.pairwise_sqdists(Y, Y))
    np.fill_diagonal(kyy, 0.0)
    kxy = np.exp(-g * kernels.pairwise_sqdists(X, Y))
    return float(
        kxx.sum() / (nx * (nx - 1))
        + kyy.sum() / (ny * (ny - 1))
        - 2.0 * kxy.mean()
    )
