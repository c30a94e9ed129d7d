import numpy as np
import pytest
from PIL import Image

from conftest import paint_image
from vlextract.encoder import _CONTENT_DIMS, encoder_names, get_encoder
from vlextract.errors import ExtractorError


@pytest.fixture(scope="module")
def enc():
    return get_encoder("hashvl-small")


def test_registry_names_and_unknown():
    assert encoder_names() == ["hashvl-base", "hashvl-small"]
    with pytest.raises(ExtractorError, match="unknown encoder"):
        get_encoder("clip-vit-b32")


def test_variant_dimensions():
    small = get_encoder("hashvl-small")
    base = get_encoder("hashvl-base")
    assert (small.d_raw, small.d_joint, small.d_token) == (64, 32, 16)
    assert (base.d_raw, base.d_joint, base.d_token) == (128, 64, 32)


def test_image_features_deterministic_and_content_addressed(enc, tmp_path):
    img = paint_image(3)
    a = enc.image_features(img)
    b = enc.image_features(img)
    assert np.array_equal(a, b)
    # same pixels through two different files: identical features
    p1, p2 = tmp_path / "one.png", tmp_path / "two.png"
    img.save(p1)
    img.save(p2)
    with Image.open(p1) as i1, Image.open(p2) as i2:
        assert np.array_equal(enc.image_features(i1), enc.image_features(i2))


def test_different_images_get_different_features(enc):
    a = enc.image_features(paint_image(0))
    b = enc.image_features(paint_image(1))
    assert not np.array_equal(a, b)


def test_feature_layout(enc):
    f = enc.image_features(paint_image(5))
    assert f.shape == (enc.d_raw,)
    # leading block means live in [0, 1]; hash tail is unbounded
    assert np.all(f[:_CONTENT_DIMS] >= 0.0)
    assert np.all(f[:_CONTENT_DIMS] <= 1.0)


def test_projection_is_frozen_and_copied(enc):
    W = enc.projection
    assert W.shape == (enc.d_joint, enc.d_raw)
    W[0, 0] += 100.0
    assert enc.projection[0, 0] != W[0, 0]
    again = get_encoder("hashvl-small")
    assert np.array_equal(enc.projection, again.projection)


def test_image_embedding_is_projected_normalized_features(enc):
    img = paint_image(7)
    e = enc.image_embedding(img)
    y = enc.projection @ enc.image_features(img)
    assert np.allclose(e, y / np.linalg.norm(y), atol=1e-12)
    assert abs(np.linalg.norm(e) - 1.0) < 1e-12


def test_token_embeddings_per_subtoken(enc):
    one = enc.token_embeddings("red")
    two = enc.token_embeddings("light brown")
    assert one.shape == (1, enc.d_token)
    assert two.shape == (2, enc.d_token)
    # shared sub-token, shared row
    a = enc.token_embeddings("light blue")
    b = enc.token_embeddings("sky blue")
    assert np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], b[0])


def test_untokenizable_word_rejected(enc):
    with pytest.raises(ExtractorError, match="no tokens"):
        enc.token_embeddings("???")


def test_text_embedding_unit_and_canonicalized(enc):
    e = enc.text_embedding("a photo of a red apple")
    assert abs(np.linalg.norm(e) - 1.0) < 1e-12
    assert np.array_equal(e, enc.text_embedding("A  Photo of a RED apple "))
    assert not np.array_equal(e, enc.text_embedding("a photo of a green apple"))
    with pytest.raises(ExtractorError, match="empty text"):
        enc.text_embedding("   ")


def test_encoders_do_not_share_streams():
    small = get_encoder("hashvl-small")
    base = get_encoder("hashvl-base")
    a = small.text_embedding("red")
    b = base.text_embedding("red")
    assert not np.array_equal(a, b[: a.shape[0]])
