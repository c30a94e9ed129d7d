"""Reference-word acquisition: a remote LLM, a static list, or a noun draw.

All three sources funnel through the same post-processing: lowercase,
strip decoration, deduplicate preserving order, and require at least two
surviving words. The words land verbatim in the bundle manifest, so a
bundle always records where its basis came from.

The LLM route posts {"prompt": ...} to the endpoint in
VLEXTRACT_LLM_ENDPOINT (bearer token from VLEXTRACT_LLM_API_KEY if set)
and expects a JSON body with a "text" field; an OpenAI-style
choices[0].message.content reply is accepted too. Any transport or
payload failure falls back to the configured static list when one is
present, otherwise aborts.
"""

from __future__ import annotations

import os
import re
from importlib import resources

import numpy as np
import requests

from .errors import ExtractorError

ENDPOINT_VAR = "VLEXTRACT_LLM_ENDPOINT"
API_KEY_VAR = "VLEXTRACT_LLM_API_KEY"
LLM_TIMEOUT_S = 30

WORD_SOURCES = ("llm_api", "static_list", "wordnet_random")

_WORD_RE = re.compile(r"[a-z][a-z -]*[a-z]|[a-z]")


def _clean(raw: list[str]) -> list[str]:
    seen = []
    for w in raw:
        w = re.sub(r"\s+", " ", w.strip().lower())
        if w and _WORD_RE.fullmatch(w) and w not in seen:
            seen.append(w)
    return seen


def parse_word_list(reply: str) -> list[str]:
    """Pull a flat word list out of free-form prose.

    Handles comma lists with a trailing "and", newline or bullet lists,
    numbering, and stray punctuation: "red, green, yellow, and brown"
    parses to four words.
    """
    text = re.sub(r"\band\b", ",", reply.lower())
    parts = re.split(r"[,\n;]+", text)
    return _clean([p.strip(" \t.:!?\"'`*-0123456789()[]") for p in parts])


def load_noun_list() -> list[str]:
    data = resources.files("vlextract.data").joinpath("common_nouns.txt")
    nouns = _clean(data.read_text(encoding="utf-8").splitlines())
    if len(nouns) < 2:
        raise ExtractorError("bundled noun list is unusable")
    return nouns


def _reply_text(body) -> str:
    if isinstance(body, dict):
        if isinstance(body.get("text"), str):
            return body["text"]
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            pass
    raise ExtractorError("LLM reply carries no text field")


def _query_llm(concept: str) -> list[str]:
    endpoint = os.environ.get(ENDPOINT_VAR, "").strip()
    if not endpoint:
        raise ExtractorError(f"{ENDPOINT_VAR} is not set")
    headers = {}
    key = os.environ.get(API_KEY_VAR, "").strip()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    prompt = (
        f"What are the common kinds of {concept}? "
        "Answer with a comma-separated list of lowercase words."
    )
    try:
        resp = requests.post(
            endpoint, json={"prompt": prompt}, headers=headers,
            timeout=LLM_TIMEOUT_S,
        )
        resp.raise_for_status()
        body = resp.json()
    except requests.RequestException as exc:
        raise ExtractorError(f"LLM request failed: {exc}") from exc
    except ValueError as exc:
        raise ExtractorError(f"LLM reply is not JSON: {exc}") from exc
    words = parse_word_list(_reply_text(body))
    if len(words) < 2:
        raise ExtractorError(f"LLM reply parsed to {len(words)} words, need >= 2")
    return words


def fetch_reference_words(config, warnings: list[str] | None = None) -> list[str]:
    """Resolve the configured word source to >= 2 clean, unique words.

    A fallback from llm_api to the static list is recorded in *warnings*
    when the caller passes a list; the swap must not be silent.
    """
    if config.source == "static_list":
        words = _clean(list(config.words))
    elif config.source == "wordnet_random":
        if config.wordnet_count < 2:
            raise ExtractorError(
                f"wordnet_random count must be >= 2, got {config.wordnet_count}"
            )
        nouns = load_noun_list()
        if config.wordnet_count > len(nouns):
            raise ExtractorError(
                f"wordnet_random count {config.wordnet_count} exceeds "
                f"the noun list ({len(nouns)})"
            )
        rng = np.random.default_rng(config.seed)
        picks = rng.choice(len(nouns), size=config.wordnet_count, replace=False)
        words = [nouns[int(i)] for i in picks]
    elif config.source == "llm_api":
        try:
            words = _query_llm(config.concept)
        except ExtractorError as exc:
            fallback = _clean(list(config.words))
            if len(fallback) < 2:
                raise
            if warnings is not None:
                warnings.append(f"llm_api failed, using the static list: {exc}")
            return fallback
    else:
        raise ExtractorError(
            f"unknown word source {config.source!r}, expected one of {WORD_SOURCES}"
        )
    if len(words) < 2:
        raise ExtractorError(
            f"word source {config.source!r} yielded {len(words)} usable words, need >= 2"
        )
    return words
