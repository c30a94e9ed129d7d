"""Pseudo-label clustering objective over concatenated text+vision features.

Phase II freezes the text side: each sample gets a pseudo-label (nearest
reference word by cosine) and a fixed unit proxy row. The trainable vision
rows are pulled together inside a pseudo-cluster (mean squared distance) and
pushed apart across clusters (margin hinge on the distance). The two terms
are blended by a balance weight: total = lam * intra + (1 - lam) * inter.

Pairs are sampled uniformly without replacement, up to a budget per pair
type; small populations are enumerated in full. The hinge is flat at the
kink: a pair sitting exactly at the margin contributes zero gradient, as
does a coincident pair whose distance has no direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isqrt

import numpy as np

from . import kernels
from .bundle import normalize_rows
from .errors import ConfigError, DegenerateRowError


@dataclass
class PairBatch:
    """Sampled index pairs, split by type. Arrays are int64, shape (m,)."""

    intra_i: np.ndarray
    intra_j: np.ndarray
    inter_i: np.ndarray
    inter_j: np.ndarray
    intra_population: int
    inter_population: int

    @property
    def n_intra(self) -> int:
        return int(self.intra_i.shape[0])

    @property
    def n_inter(self) -> int:
        return int(self.inter_i.shape[0])


def assign_pseudo_labels(proxy, basis) -> np.ndarray:
    """Nearest basis row by cosine; exact ties resolve to the lowest index."""
    scores = normalize_rows(np.asarray(proxy, dtype=np.float64)) @ normalize_rows(
        np.asarray(basis, dtype=np.float64)
    ).T
    return np.argmax(scores, axis=1).astype(np.int64)


def concat_features(proxy, vision) -> np.ndarray:
    """Rows v_i = [normalize(proxy_i), x_i]; the joint clustering features."""
    proxy = np.asarray(proxy, dtype=np.float64)
    vision = np.asarray(vision, dtype=np.float64)
    if proxy.shape[0] != vision.shape[0]:
        raise ConfigError(
            f"proxy rows {proxy.shape[0]} != vision rows {vision.shape[0]}"
        )
    return np.concatenate([normalize_rows(proxy), vision], axis=1)


def _tri_unrank(r: int, m: int) -> tuple[int, int]:
    # pairs of an m-element set in row-major order (0,1),(0,2),..,(1,2),..
    a = (2 * m - 1 - isqrt((2 * m - 1) * (2 * m - 1) - 8 * r)) // 2

    def offset(x: int) -> int:
        return x * (m - 1) - x * (x - 1) // 2

    while offset(a + 1) <= r:
        a += 1
    while offset(a) > r:
        a -= 1
    b = a + 1 + (r - offset(a))
    return a, b


def _sample_distinct(rng, population: int, budget: int) -> np.ndarray:
    """Uniform sample of distinct ranks in [0, population), sorted ascending."""
    if budget >= population:
        return np.arange(population, dtype=np.int64)
    if population <= 4 * budget:
        return np.sort(rng.permutation(population)[:budget].astype(np.int64))
    # sparse regime: sequential rejection of duplicates equals sampling
    # without replacement and never materializes the population
    seen: set[int] = set()
    while len(seen) < budget:
        for r in rng.integers(0, population, size=budget):
            if len(seen) == budget:
                break
            seen.add(int(r))
    return np.array(sorted(seen), dtype=np.int64)


def sample_pairs(labels, budget, rng_seed) -> PairBatch:
    """Draw intra- and inter-cluster index pairs for one epoch.

    Args:
        labels: integer partition, shape (n,).
        budget: per-type cap on sampled pairs; None means full enumeration.
        rng_seed: int or numpy SeedSequence; same seed, same batch.

    Unordered pairs are never duplicated within a batch. When a population
    is at or below the budget the whole population is returned, so the
    sampled losses coincide with the all-pairs losses.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ConfigError(f"labels must be 1-D, got shape {labels.shape}")
    if budget is not None and budget < 1:
        raise ConfigError(f"pair budget must be >= 1, got {budget}")
    rng = np.random.default_rng(rng_seed)

    _, inv = np.unique(labels, return_inverse=True)
    n_clusters = int(inv.max()) + 1 if inv.size else 0
    members = [np.flatnonzero(inv == c) for c in range(n_clusters)]
    sizes = [m.shape[0] for m in members]

    # intra ranks are cluster-major: all pairs of cluster 0, then cluster 1, ..
    intra_counts = [s * (s - 1) // 2 for s in sizes]
    intra_offsets = np.cumsum([0] + intra_counts)
    intra_pop = int(intra_offsets[-1])

    blocks = [(a, b) for a in range(n_clusters) for b in range(a + 1, n_clusters)]
    inter_counts = [sizes[a] * sizes[b] for a, b in blocks]
    inter_offsets = np.cumsum([0] + inter_counts)
    inter_pop = int(inter_offsets[-1])

    n_intra = intra_pop if budget is None else min(budget, intra_pop)
    n_inter = inter_pop if budget is None else min(budget, inter_pop)

    if n_intra == intra_pop:
        ii = np.empty(intra_pop, dtype=np.int64)
        jj = np.empty(intra_pop, dtype=np.int64)
        pos = 0
        for c in range(n_clusters):
            s = sizes[c]
            if s < 2:
                continue
            a, b = np.triu_indices(s, k=1)
            ii[pos : pos + a.size] = members[c][a]
            jj[pos : pos + a.size] = members[c][b]
            pos += a.size
        intra_i, intra_j = ii, jj
    else:
        ranks = _sample_distinct(rng, intra_pop, n_intra)
        cluster_of = np.searchsorted(intra_offsets, ranks, side="right") - 1
        intra_i = np.empty(n_intra, dtype=np.int64)
        intra_j = np.empty(n_intra, dtype=np.int64)
        for t in range(n_intra):
            c = int(cluster_of[t])
            local = int(ranks[t] - intra_offsets[c])
            a, b = _tri_unrank(local, sizes[c])
            intra_i[t] = members[c][a]
            intra_j[t] = members[c][b]

    if n_inter == inter_pop:
        parts_i = []
        parts_j = []
        for a, b in blocks:
            if sizes[a] == 0 or sizes[b] == 0:
                continue
            gi, gj = np.meshgrid(members[a], members[b], indexing="ij")
            parts_i.append(gi.ravel())
            parts_j.append(gj.ravel())
        if parts_i:
            inter_i = np.concatenate(parts_i).astype(np.int64)
            inter_j = np.concatenate(parts_j).astype(np.int64)
        else:
            inter_i = np.empty(0, dtype=np.int64)
            inter_j = np.empty(0, dtype=np.int64)
    else:
        ranks = _sample_distinct(rng, inter_pop, n_inter)
        block_of = np.searchsorted(inter_offsets, ranks, side="right") - 1
        inter_i = np.empty(n_inter, dtype=np.int64)
        inter_j = np.empty(n_inter, dtype=np.int64)
        for t in range(n_inter):
            blk = int(block_of[t])
            a, b = blocks[blk]
            local = int(ranks[t] - inter_offsets[blk])
            ai, bi = divmod(local, sizes[b])
            inter_i[t] = members[a][ai]
            inter_j[t] = members[b][bi]

    return PairBatch(
        intra_i=intra_i,
        intra_j=intra_j,
        inter_i=inter_i,
        inter_j=inter_j,
        intra_population=intra_pop,
        inter_population=inter_pop,
    )


def intra_loss(V, batch: PairBatch) -> float:
    """Mean squared distance over intra pairs; 0 for an empty pair set."""
    if batch.n_intra == 0:
        return 0.0
    V = np.asarray(V, dtype=np.float64)
    diff = V[batch.intra_i] - V[batch.intra_j]
    return float(np.mean(np.einsum("ij,ij->i", diff, diff)))


def inter_loss(V, batch: PairBatch, margin: float) -> float:
    """Mean hinge max(0, margin - distance) over inter pairs; 0 if empty."""
    if batch.n_inter == 0:
        return 0.0
    V = np.asarray(V, dtype=np.float64)
    diff = V[batch.inter_i] - V[batch.inter_j]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(np.mean(np.maximum(0.0, margin - d)))


def total_loss(intra: float, inter: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"balance weight must be in [0, 1], got {lam}")
    return lam * intra + (1.0 - lam) * inter


def phase2_gradients(W, U, proxy, batch: PairBatch, margin: float, lam: float):
    """Gradient of the blended clustering loss w.r.t. the projection W.

    The proxy half of every feature row is frozen; gradient flows only
    through the vision rows x_i = normalize(W @ u_i) that appear in the
    sampled pairs. Returns (gradW, loss).
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"balance weight must be in [0, 1], got {lam}")
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    H = normalize_rows(np.asarray(proxy, dtype=np.float64))

    Y = U @ W.T
    ynorm = np.linalg.norm(Y, axis=1)
    if np.any(ynorm == 0.0):
        raise DegenerateRowError(
            "vision projection is zero for sample", int(np.flatnonzero(ynorm == 0.0)[0])
        )
    X = Y / ynorm[:, None]

    sum_d2, grad_intra = kernels.intra_pair_terms(H, X, batch.intra_i, batch.intra_j)
    sum_hinge, grad_inter = kernels.inter_pair_terms(
        H, X, batch.inter_i, batch.inter_j, margin
    )

    li = sum_d2 / batch.n_intra if batch.n_intra else 0.0
    le = sum_hinge / batch.n_inter if batch.n_inter else 0.0
    loss = total_loss(li, le, lam)

    Gx = np.zeros_like(X)
    if batch.n_intra:
        Gx += (lam / batch.n_intra) * grad_intra
    if batch.n_inter:
        Gx += ((1.0 - lam) / batch.n_inter) * grad_inter

    # back through the row normalization of Y, then the linear map
    gy = (Gx - X * np.einsum("ij,ij->i", Gx, X)[:, None]) / ynorm[:, None]
    gradW = gy.T @ U
    return gradW, loss
