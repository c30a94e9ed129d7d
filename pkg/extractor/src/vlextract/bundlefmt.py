"""Writer for the embedding-bundle on-disk format.

The format is a directory: manifest.json plus headerless row-major
little-endian binary matrices, float32 for features and bases (.f32),
uint32 for optional label vectors (.u32). The manifest records every
dimension; consumers validate byte length against rows * cols * 4 and
require unit rows (within 1e-4, measured on the float32 payload) for the
two text bases. This module re-states the format rather than importing
the consumer: the directory layout is the contract between the tools.

Matrix roles:

    raw_features     n x d_raw       pre-projection vision features U
    projection_init  d_joint x d_raw the encoder's own projection W0
    ref_token        K x d_token     token embedding per reference word
    ref_prompt       K x d_joint     unit embedding of the filled template
    ref_word_text    K x d_joint     unit embedding of the bare word
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ExtractorError

FORMAT_VERSION = 1
UNIT_ROW_TOL = 1e-4


def _f32(name: str, array, shape: tuple[int, int]) -> np.ndarray:
    a = np.ascontiguousarray(array, dtype="<f4")
    if a.shape != shape:
        raise ExtractorError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise ExtractorError(f"{name} contains a non-finite value")
    return a


def _check_unit_rows(name: str, m: np.ndarray) -> None:
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_ROW_TOL)
    if bad.size:
        raise ExtractorError(
            f"{name} row {int(bad[0])} has norm {norms[bad[0]]:.6f}, expected unit"
        )


def write_bundle(
    path: str,
    *,
    concept: str,
    template: str,
    words: list[str],
    U,
    W0,
    Z,
    S,
    T,
    labels: dict | None = None,
) -> dict:
    """Write a complete bundle directory; returns the manifest document.

    Arrays are cast to float32 before both validation and writing, so
    what is checked is exactly what a consumer reads back. Re-running
    with identical inputs reproduces every file byte for byte.
    """
    U = np.asarray(U)
    if U.ndim != 2:
        raise ExtractorError(f"raw features must be 2-D, got shape {U.shape}")
    n, d_raw = U.shape
    k = len(words)
    if n < 2:
        raise ExtractorError(f"need at least 2 samples, got {n}")
    if k < 2:
        raise ExtractorError(f"need at least 2 reference words, got {k}")
    if template.count("*") != 1:
        raise ExtractorError("prompt template must contain exactly one '*'")
    d_joint = np.asarray(W0).shape[0]
    d_token = np.asarray(Z).shape[1] if np.asarray(Z).ndim == 2 else 0

    payload = {
        "raw_features": _f32("raw_features", U, (n, d_raw)),
        "projection_init": _f32("projection_init", W0, (d_joint, d_raw)),
        "ref_token": _f32("ref_token", Z, (k, d_token)),
        "ref_prompt": _f32("ref_prompt", T, (k, d_joint)),
        "ref_word_text": _f32("ref_word_text", S, (k, d_joint)),
    }
    _check_unit_rows("ref_prompt", payload["ref_prompt"])
    _check_unit_rows("ref_word_text", payload["ref_word_text"])

    label_payload = {}
    for name, lab in (labels or {}).items():
        lab = np.asarray(lab)
        if lab.shape != (n,):
            raise ExtractorError(
                f"label vector {name!r} has shape {lab.shape}, expected ({n},)"
            )
        if lab.size and (np.any(lab < 0) or np.any(lab != np.floor(lab))):
            raise ExtractorError(f"label vector {name!r} must be non-negative integers")
        label_payload[name] = np.ascontiguousarray(lab, dtype="<u4")

    os.makedirs(path, exist_ok=True)
    matrices = {}
    for name, a in payload.items():
        fname = f"{name}.f32"
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(a.tobytes())
        matrices[name] = {"file": fname, "rows": int(a.shape[0]), "cols": int(a.shape[1])}

    ground_truth = {}
    for name, lab in label_payload.items():
        fname = f"labels_{name}.u32"
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(lab.tobytes())
        ground_truth[name] = fname

    manifest = {
        "version": FORMAT_VERSION,
        "n": n,
        "d_raw": d_raw,
        "d_joint": int(d_joint),
        "d_token": int(d_token),
        "k": k,
        "concept": concept,
        "prompt_template": template,
        "reference_words": list(words),
        "matrices": matrices,
    }
    if ground_truth:
        manifest["ground_truth"] = ground_truth
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
