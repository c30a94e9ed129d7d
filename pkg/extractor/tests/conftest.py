import pytest
from PIL import Image, ImageDraw


def paint_image(i: int) -> Image.Image:
    """Deterministic small test image, visually distinct per index."""
    img = Image.new("RGB", (48, 40), ((23 * i) % 256, 120, (255 - 19 * i) % 256))
    dr = ImageDraw.Draw(img)
    dr.ellipse(
        [4 + i, 4, 28 + i, 28],
        fill=((37 * i + 90) % 256, (60 + 13 * i) % 256, 50),
    )
    dr.line([0, 39 - i, 47, i], fill=(10, 200, (8 * i) % 256), width=2)
    return img


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """Ten decodable PNG files with sorted, stable names."""
    d = tmp_path_factory.mktemp("imgs")
    for i in range(10):
        paint_image(i).save(d / f"img_{i:02d}.png")
    return str(d)
