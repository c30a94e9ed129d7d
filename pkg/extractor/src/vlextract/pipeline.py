"""End-to-end extraction: images + words in, one bundle directory out.

Images are processed in manifest order (sorted file names) so the row
order of the feature matrix is reproducible; a file that fails to decode
is skipped with a warning and simply absent from n. Words that survive
acquisition but defeat the tokenizer are dropped the same way. The run
summary, including both warning lists and the image-to-row mapping, is
written next to the bundle as extraction.json; consumers of the bundle
format ignore extra files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .bundlefmt import write_bundle
from .encoder import HashEncoder, get_encoder
from .errors import ExtractorError
from .words import WORD_SOURCES, fetch_reference_words

DEFAULT_TEMPLATE = "a photo of a *"


@dataclass(frozen=True)
class ExtractorConfig:
    images: str
    out: str
    concept: str
    encoder: str = "hashvl-small"
    template: str = DEFAULT_TEMPLATE
    source: str = "static_list"
    words: tuple[str, ...] = ()
    wordnet_count: int = 10
    seed: int = 0
    batch_size: int = 8

    def validate(self) -> "ExtractorConfig":
        if not self.concept.strip():
            raise ExtractorError("concept must be a non-empty string")
        if self.template.count("*") != 1:
            raise ExtractorError("prompt template must contain exactly one '*'")
        if self.source not in WORD_SOURCES:
            raise ExtractorError(
                f"unknown word source {self.source!r}, expected one of {WORD_SOURCES}"
            )
        if self.wordnet_count < 2:
            raise ExtractorError(
                f"wordnet_random count must be >= 2, got {self.wordnet_count}"
            )
        if self.batch_size < 1:
            raise ExtractorError(f"batch size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class VisionResult:
    features: np.ndarray          # n x d_raw, row i belongs to names[i]
    projection: np.ndarray        # d_joint x d_raw
    names: list[str]
    warnings: list[str] = field(default_factory=list)


@dataclass
class TextResult:
    token: np.ndarray             # K x d_token, multi-token words mean-pooled
    word_text: np.ndarray         # K x d_joint, unit rows
    prompt: np.ndarray            # K x d_joint, unit rows
    words: list[str]
    warnings: list[str] = field(default_factory=list)


def extract_vision(config: ExtractorConfig, encoder: HashEncoder) -> VisionResult:
    """Encode every decodable image under config.images, sorted by name."""
    if not os.path.isdir(config.images):
        raise ExtractorError(f"image directory not found: {config.images}")
    names = sorted(
        f for f in os.listdir(config.images)
        if os.path.isfile(os.path.join(config.images, f))
    )
    if not names:
        raise ExtractorError(f"no files in image directory: {config.images}")

    kept: list[str] = []
    rows: list[np.ndarray] = []
    warnings: list[str] = []
    for start in range(0, len(names), config.batch_size):
        batch = []
        for name in names[start : start + config.batch_size]:
            try:
                with Image.open(os.path.join(config.images, name)) as img:
                    img.load()
                    batch.append((name, encoder.image_features(img)))
            except (UnidentifiedImageError, OSError) as exc:
                warnings.append(f"skipping undecodable image {name}: {exc}")
        for name, feat in batch:
            kept.append(name)
            rows.append(feat)

    if not rows:
        raise ExtractorError(
            f"no decodable images in {config.images} ({len(names)} files tried)"
        )
    return VisionResult(
        features=np.stack(rows),
        projection=encoder.projection,
        names=kept,
        warnings=warnings,
    )


def extract_text_bases(
    config: ExtractorConfig, encoder: HashEncoder, words: list[str]
) -> TextResult:
    """Token, bare-word, and filled-template embeddings per usable word."""
    if not words:
        raise ExtractorError("no reference words to embed")
    kept: list[str] = []
    token_rows: list[np.ndarray] = []
    word_rows: list[np.ndarray] = []
    prompt_rows: list[np.ndarray] = []
    warnings: list[str] = []
    for word in words:
        try:
            tokens = encoder.token_embeddings(word)
        except ExtractorError as exc:
            warnings.append(f"dropping word {word!r}: {exc}")
            continue
        kept.append(word)
        token_rows.append(tokens.mean(axis=0))
        word_rows.append(encoder.text_embedding(word))
        prompt_rows.append(encoder.text_embedding(config.template.replace("*", word)))
    if len(kept) < 2:
        raise ExtractorError(
            f"only {len(kept)} of {len(words)} words tokenized, need >= 2"
        )
    return TextResult(
        token=np.stack(token_rows),
        word_text=np.stack(word_rows),
        prompt=np.stack(prompt_rows),
        words=kept,
        warnings=warnings,
    )


def run_extraction(config: ExtractorConfig) -> dict:
    """Produce a bundle directory; returns the run summary."""
    config = config.validate()
    encoder = get_encoder(config.encoder)
    word_warnings: list[str] = []
    words = fetch_reference_words(config, word_warnings)
    text = extract_text_bases(config, encoder, words)
    vision = extract_vision(config, encoder)

    write_bundle(
        config.out,
        concept=config.concept,
        template=config.template,
        words=text.words,
        U=vision.features,
        W0=vision.projection,
        Z=text.token,
        S=text.word_text,
        T=text.prompt,
    )

    summary = {
        "bundle": config.out,
        "encoder": config.encoder,
        "concept": config.concept,
        "source": config.source,
        "n": int(vision.features.shape[0]),
        "k": len(text.words),
        "d_raw": encoder.d_raw,
        "d_joint": encoder.d_joint,
        "d_token": encoder.d_token,
        "reference_words": text.words,
        "images": vision.names,
        "warnings": word_warnings + vision.warnings + text.warnings,
    }
    with open(os.path.join(config.out, "extraction.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
