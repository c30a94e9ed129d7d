"""Frozen encoder backends behind one small interface.

An encoder owns four operations: pre-projection image features, its own
projection matrix, per-token embeddings of a word, and unit text
embeddings of a sentence. The bundled ``hashvl`` family is fully offline
and deterministic: every vector is drawn from a generator seeded by a
content digest, so identical inputs give identical bytes on every
machine, which is exactly what the bundle round-trip tests need. A real
backbone (CLIP-style or otherwise) plugs in by implementing the same
four methods and registering under a new identifier; nothing downstream
cares where the numbers come from.

Image features mix substance with hash: the first 48 dimensions are
4x4 RGB block means of the 32x32-resized image (so visually identical
files coincide and similar files correlate), the rest is a digest-seeded
tail that keeps rows well-separated.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image

from .errors import ExtractorError

_CANVAS = 32           # decode target, pixels per side
_BLOCK = 8             # pooling block, must divide _CANVAS
_CONTENT_DIMS = (_CANVAS // _BLOCK) ** 2 * 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashEncoder:
    """Deterministic offline stand-in for a frozen vision-language model."""

    def __init__(self, name: str, d_raw: int, d_joint: int, d_token: int):
        if d_raw <= _CONTENT_DIMS:
            raise ValueError(f"d_raw must exceed {_CONTENT_DIMS}")
        self.name = name
        self.d_raw = d_raw
        self.d_joint = d_joint
        self.d_token = d_token
        self._projection = self._rng("projection", b"").normal(
            size=(d_joint, d_raw)
        ) / np.sqrt(d_raw)

    def _rng(self, kind: str, payload: bytes) -> np.random.Generator:
        digest = hashlib.sha256(
            f"{self.name}|{kind}|".encode() + payload
        ).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    # ---------------------------------------------------------- vision

    def _canonical_pixels(self, image: Image.Image) -> np.ndarray:
        small = image.convert("RGB").resize(
            (_CANVAS, _CANVAS), Image.Resampling.BILINEAR
        )
        return np.asarray(small, dtype=np.float64) / 255.0

    def image_features(self, image: Image.Image) -> np.ndarray:
        """Pre-projection feature row, shape (d_raw,)."""
        px = self._canonical_pixels(image)
        blocks = px.reshape(
            _CANVAS // _BLOCK, _BLOCK, _CANVAS // _BLOCK, _BLOCK, 3
        ).mean(axis=(1, 3))
        tail = self._rng(
            "image", np.ascontiguousarray(px).tobytes()
        ).normal(scale=0.5, size=self.d_raw - _CONTENT_DIMS)
        return np.concatenate([blocks.ravel(), tail])

    @property
    def projection(self) -> np.ndarray:
        """The encoder's own projection, shape (d_joint, d_raw). Frozen."""
        return self._projection.copy()

    def image_embedding(self, image: Image.Image) -> np.ndarray:
        """The encoder's native unit image embedding, shape (d_joint,)."""
        y = self._projection @ self.image_features(image)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            raise ExtractorError("image embedding collapsed to zero")
        return y / norm

    # ------------------------------------------------------------ text

    def token_embeddings(self, word: str) -> np.ndarray:
        """One d_token row per sub-token; shared sub-tokens share rows."""
        tokens = _TOKEN_RE.findall(word.lower())
        if not tokens:
            raise ExtractorError(f"word {word!r} produces no tokens")
        return np.stack([
            self._rng("token", tok.encode()).normal(size=self.d_token)
            for tok in tokens
        ])

    def text_embedding(self, text: str) -> np.ndarray:
        """Unit embedding of a whole sentence, shape (d_joint,)."""
        canon = " ".join(text.lower().split())
        if not canon:
            raise ExtractorError("cannot embed empty text")
        v = self._rng("text", canon.encode()).normal(size=self.d_joint)
        return v / np.linalg.norm(v)


_VARIANTS = {
    "hashvl-small": dict(d_raw=64, d_joint=32, d_token=16),
    "hashvl-base": dict(d_raw=128, d_joint=64, d_token=32),
}


def encoder_names() -> list[str]:
    return sorted(_VARIANTS)


def get_encoder(name: str) -> HashEncoder:
    dims = _VARIANTS.get(name)
    if dims is None:
        raise ExtractorError(
            f"unknown encoder {name!r}, expected one of {encoder_names()}"
        )
    return HashEncoder(name, **dims)
