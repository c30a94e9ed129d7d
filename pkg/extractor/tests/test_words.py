import pytest
import requests

from vlextract.errors import ExtractorError
from vlextract.pipeline import ExtractorConfig
from vlextract.words import (
    API_KEY_VAR,
    ENDPOINT_VAR,
    fetch_reference_words,
    load_noun_list,
    parse_word_list,
)


def _cfg(**kw):
    base = dict(images="x", out="y", concept="color",
                source="static_list", words=("red", "green", "yellow"))
    base.update(kw)
    return ExtractorConfig(**base)


def test_static_list_passes_through():
    assert fetch_reference_words(_cfg()) == ["red", "green", "yellow"]


def test_static_list_lowercases_and_dedupes():
    cfg = _cfg(words=("Red", "GREEN", "red", "  blue "))
    assert fetch_reference_words(cfg) == ["red", "green", "blue"]


def test_static_list_too_short_rejected():
    with pytest.raises(ExtractorError, match="need >= 2"):
        fetch_reference_words(_cfg(words=("red",)))


def test_unknown_source_rejected():
    with pytest.raises(ExtractorError, match="unknown word source"):
        fetch_reference_words(_cfg(source="oracle"))


def test_parser_handles_prose_comma_list():
    assert parse_word_list("red, green, yellow, and brown") == [
        "red", "green", "yellow", "brown",
    ]


def test_parser_handles_bullets_and_numbering():
    reply = "1. Apple\n2. banana\n- cherry\n* mango.\n"
    assert parse_word_list(reply) == ["apple", "banana", "cherry", "mango"]


def test_parser_keeps_multiword_entries_and_order():
    assert parse_word_list("light blue, navy blue, light blue") == [
        "light blue", "navy blue",
    ]


def test_parser_rejects_junk():
    assert parse_word_list("42, ???, , ---") == []


def test_wordnet_draw_is_seeded_and_sized():
    a = fetch_reference_words(_cfg(source="wordnet_random", seed=7))
    b = fetch_reference_words(_cfg(source="wordnet_random", seed=7))
    c = fetch_reference_words(_cfg(source="wordnet_random", seed=8))
    assert a == b
    assert len(a) == 10
    assert len(set(a)) == 10
    assert a != c


def test_wordnet_count_is_honored():
    got = fetch_reference_words(
        _cfg(source="wordnet_random", wordnet_count=4, seed=1)
    )
    assert len(got) == 4
    nouns = set(load_noun_list())
    assert all(w in nouns for w in got)


def test_wordnet_count_bounds():
    with pytest.raises(ExtractorError, match=">= 2"):
        fetch_reference_words(_cfg(source="wordnet_random", wordnet_count=1))
    with pytest.raises(ExtractorError, match="exceeds"):
        fetch_reference_words(_cfg(source="wordnet_random", wordnet_count=10**6))


class _FakeResponse:
    def __init__(self, body=None, status=200):
        self._body = body
        self._status = status

    def raise_for_status(self):
        if self._status >= 400:
            raise requests.HTTPError(f"status {self._status}")

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


def test_llm_success_parses_reply(monkeypatch):
    calls = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        calls.update(url=url, json=json, headers=headers, timeout=timeout)
        return _FakeResponse({"text": "red, green, yellow, and brown"})

    monkeypatch.setenv(ENDPOINT_VAR, "http://llm.test/v1/complete")
    monkeypatch.setenv(API_KEY_VAR, "sekrit")
    monkeypatch.setattr("vlextract.words.requests.post", fake_post)
    got = fetch_reference_words(_cfg(source="llm_api", words=()))
    assert got == ["red", "green", "yellow", "brown"]
    assert calls["url"] == "http://llm.test/v1/complete"
    assert "color" in calls["json"]["prompt"]
    assert calls["headers"]["Authorization"] == "Bearer sekrit"
    assert calls["timeout"] is not None


def test_llm_accepts_chat_shaped_reply(monkeypatch):
    body = {"choices": [{"message": {"content": "oak, pine, birch"}}]}
    monkeypatch.setenv(ENDPOINT_VAR, "http://llm.test/v1")
    monkeypatch.setattr(
        "vlextract.words.requests.post",
        lambda *a, **k: _FakeResponse(body),
    )
    got = fetch_reference_words(_cfg(source="llm_api", concept="tree", words=()))
    assert got == ["oak", "pine", "birch"]


def test_llm_failure_falls_back_to_static(monkeypatch):
    def boom(*a, **k):
        raise requests.ConnectionError("refused")

    monkeypatch.setenv(ENDPOINT_VAR, "http://llm.test/v1")
    monkeypatch.setattr("vlextract.words.requests.post", boom)
    warnings: list[str] = []
    got = fetch_reference_words(
        _cfg(source="llm_api", words=("red", "blue")), warnings
    )
    assert got == ["red", "blue"]
    # the swap is not silent: one warning naming the cause
    assert len(warnings) == 1
    assert "llm_api failed" in warnings[0] and "refused" in warnings[0]


def test_llm_failure_without_fallback_aborts(monkeypatch):
    monkeypatch.setenv(ENDPOINT_VAR, "http://llm.test/v1")
    monkeypatch.setattr(
        "vlextract.words.requests.post",
        lambda *a, **k: _FakeResponse(status=503),
    )
    with pytest.raises(ExtractorError, match="request failed"):
        fetch_reference_words(_cfg(source="llm_api", words=()))


def test_llm_unset_endpoint_is_a_service_failure(monkeypatch):
    monkeypatch.delenv(ENDPOINT_VAR, raising=False)
    got = fetch_reference_words(_cfg(source="llm_api", words=("red", "blue")))
    assert got == ["red", "blue"]
    with pytest.raises(ExtractorError, match="not set"):
        fetch_reference_words(_cfg(source="llm_api", words=()))


def test_llm_textless_or_thin_reply_is_a_failure(monkeypatch):
    monkeypatch.setenv(ENDPOINT_VAR, "http://llm.test/v1")
    monkeypatch.setattr(
        "vlextract.words.requests.post",
        lambda *a, **k: _FakeResponse({"status": "ok"}),
    )
    with pytest.raises(ExtractorError, match="no text field"):
        fetch_reference_words(_cfg(source="llm_api", words=()))
    monkeypatch.setattr(
        "vlextract.words.requests.post",
        lambda *a, **k: _FakeResponse({"text": "red"}),
    )
    with pytest.raises(ExtractorError, match="need >= 2"):
        fetch_reference_words(_cfg(source="llm_api", words=()))


def test_noun_list_is_clean():
    nouns = load_noun_list()
    assert len(nouns) >= 100
    assert nouns == sorted(set(nouns), key=nouns.index)
    assert all(n == n.lower() for n in nouns)
