"""Soft proxy words over a reference basis and the image-text alignment loss.

Each image i carries a trainable latent factor p_i. Its mixture weights over
the K reference words are the row softmax of p_i against the token basis Z,
and its proxy embedding is the weight-averaged basis. Three subspace modes
pick which basis the clustering-side proxy lives in:

    token      A @ Z, unnormalized, in token space
    word_text  normalize(A @ S), bare-word text space
    prompt     normalize(A @ T), prompt text space

The alignment target is always a unit text-space row: normalize(A @ S) in
word_text mode, normalize(A @ T) otherwise. Token-space proxies cannot host
the cross-modal cosine (d_token need not equal d_joint), so token mode keeps
the prompt surrogate as its alignment target.

The vision side is x_i = normalize(W @ u_i): a bias-free linear projection of
the frozen raw feature, the only trainable vision parameter. The alignment
loss is the mean negative cosine between x_i and its text target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateRowError

SUBSPACE_MODES = ("token", "word_text", "prompt")


def check_mode(mode: str) -> str:
    if mode not in SUBSPACE_MODES:
        raise ConfigError(f"unknown subspace mode {mode!r}, expected one of {SUBSPACE_MODES}")
    return mode


def alignment_basis(mode: str, prompt_basis, word_basis):
    """Text basis the alignment target is mixed from (unit rows, d_joint)."""
    check_mode(mode)
    if mode == "word_text":
        if word_basis is None:
            raise ConfigError("subspace mode 'word_text' needs the ref_word_text matrix")
        return word_basis
    return prompt_basis


def cluster_basis(mode: str, token_basis, prompt_basis, word_basis):
    """Basis the clustering-side proxy and pseudo-labels are built from."""
    check_mode(mode)
    if mode == "token":
        return token_basis
    if mode == "word_text":
        if word_basis is None:
            raise ConfigError("subspace mode 'word_text' needs the ref_word_text matrix")
        return word_basis
    return prompt_basis


def mixture_weights(P, Z) -> np.ndarray:
    """Row-softmax of the latent factors against the token basis.

    Returns A with A[i, k] = exp(p_i . z_k) / sum_j exp(p_i . z_j). Each row
    is renormalized so it sums to 1 exactly up to one division.
    """
    P = np.asarray(P, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    logits = P @ Z.T
    logits -= logits.max(axis=1, keepdims=True)  # shift-invariant, avoids overflow
    A = np.exp(logits)
    A /= A.sum(axis=1, keepdims=True)
    return A


def proxy_embedding(A, basis, mode: str) -> np.ndarray:
    """Mixture-weighted basis rows; unit rows except in token mode."""
    check_mode(mode)
    G = np.asarray(A, dtype=np.float64) @ np.asarray(basis, dtype=np.float64)
    if mode == "token":
        return G
    norms = np.linalg.norm(G, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateRowError("proxy embedding collapsed to zero", int(zero[0]))
    return G / norms[:, None]


def project_vision(W, U) -> np.ndarray:
    """Unit rows of U @ W^T. Rejects samples that project to zero."""
    Y = np.asarray(U, dtype=np.float64) @ np.asarray(W, dtype=np.float64).T
    norms = np.linalg.norm(Y, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateRowError("vision projection is zero for sample", int(zero[0]))
    return Y / norms[:, None]


def alignment_loss(X, That) -> float:
    """Mean negative cosine between matched unit rows; lies in [-1, 1]."""
    X = np.asarray(X, dtype=np.float64)
    That = np.asarray(That, dtype=np.float64)
    if X.shape != That.shape:
        raise ConfigError(f"shape mismatch {X.shape} vs {That.shape}")
    return float(np.mean(-np.einsum("ij,ij->i", X, That)))


@dataclass
class ProxyState:
    """Forward quantities of one Phase I evaluation."""

    weights: np.ndarray      # A, n x K, rows sum to 1
    proxy_token: np.ndarray  # A @ Z, n x d_token, unnormalized
    proxy_text: np.ndarray   # alignment target, n x d_joint, unit rows
    vision: np.ndarray       # x_i rows, n x d_joint, unit rows


def make_proxy_state(P, W, U, Z, align_basis) -> ProxyState:
    A = mixture_weights(P, Z)
    return ProxyState(
        weights=A,
        proxy_token=A @ np.asarray(Z, dtype=np.float64),
        proxy_text=proxy_embedding(A, align_basis, "prompt"),
        vision=project_vision(W, U),
    )


def phase1_gradients(P, W, U, Z, align_basis):
    """Analytic gradients of the alignment loss w.r.t. P and W.

    The loss composes: softmax mixture -> basis average -> row normalize on
    the text side, and linear projection -> row normalize on the vision side.
    Every Jacobian is applied in closed form; finite differences in the test
    suite pin the result.

    Returns (gradP, gradW, loss).
    """
    P = np.asarray(P, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    M = np.asarray(align_basis, dtype=np.float64)
    n = P.shape[0]

    A = mixture_weights(P, Z)
    G = A @ M
    gnorm = np.linalg.norm(G, axis=1)
    zero = np.flatnonzero(gnorm == 0.0)
    if zero.size:
        raise DegenerateRowError("proxy embedding collapsed to zero", int(zero[0]))
    That = G / gnorm[:, None]

    Y = U @ W.T
    ynorm = np.linalg.norm(Y, axis=1)
    zero = np.flatnonzero(ynorm == 0.0)
    if zero.size:
        raise DegenerateRowError("vision projection is zero for sample", int(zero[0]))
    X = Y / ynorm[:, None]

    cos = np.einsum("ij,ij->i", X, That)
    loss = float(np.mean(-cos))

    # dL/dG_i = -(x_i - cos_i t_i) / (n * |g_i|)   (normalization Jacobian)
    C = -(X - cos[:, None] * That) / (n * gnorm[:, None])
    Q = C @ M.T                                   # dL/dA
    # softmax backward: dL/dlogits = A * (Q - rowsum(A * Q))
    inner = np.einsum("ij,ij->i", A, Q)
    dlogits = A * (Q - inner[:, None])
    gradP = dlogits @ Z

    # dL/dY_i = -(t_i - cos_i x_i) / (n * |y_i|)
    R = -(That - cos[:, None] * X) / (n * ynorm[:, None])
    gradW = R.T @ U
    return gradP, gradW, loss
