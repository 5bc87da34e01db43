"""画像化とファイル出力のテスト（ゴールデンバイト列）"""

import io

import numpy as np
import pytest
from PIL import Image

from src.errors import ImageIOError
from src.expr import make_generator
from src.field import EscapeField, Mask, compute_escape_field
from src.grid import Rectangle, SampleGrid
from src.imaging import (
    BOUNDED_COLOR, DEFAULT_PALETTE, PALETTES, UNDETERMINED_COLOR, get_palette, output_name, render_field,
    render_mask, write_image,
)
from src.orbit import CODE_BOUNDED, CODE_ESCAPING, CODE_UNDETERMINED, OrbitParams
from src.utils.image_io import image_to_bytes, ppm_bytes


def test_single_white_pixel_ppm_is_bit_exact():
    mask = Mask.ones(SampleGrid(Rectangle(0, 1, 0, 1), 1, 1))
    assert ppm_bytes(render_mask(mask)) == b"P6\n1 1\n255\n\xff\xff\xff"


def test_mask_render_uses_white_for_set_pixels():
    grid = SampleGrid(Rectangle(0, 2, 0, 1), 2, 1)
    image = render_mask(Mask(grid, [[True, False]]))
    assert image.size == (2, 1)
    assert ppm_bytes(image)[-6:] == bytes([255, 255, 255, 0, 0, 0])


@pytest.mark.parametrize("iteration, expected", [
    (1, (236, 177, 137)),
    (5, (160, 120, 175)),
    (10, (64, 48, 223)),
])
def test_escape_time_palette_golden_colors(iteration, expected):
    assert DEFAULT_PALETTE.map(CODE_ESCAPING, iteration, 10) == expected


def test_palette_fixed_colors_and_monotonic_channels():
    assert DEFAULT_PALETTE.map(CODE_BOUNDED, None, 10) == BOUNDED_COLOR
    assert DEFAULT_PALETTE.map(CODE_UNDETERMINED, None, 10) == UNDETERMINED_COLOR
    colors = np.array([DEFAULT_PALETTE.map(CODE_ESCAPING, n, 50) for n in range(1, 51)])
    assert np.all(np.diff(colors[:, 0]) <= 0)
    assert np.all(np.diff(colors[:, 1]) <= 0)
    assert np.all(np.diff(colors[:, 2]) >= 0)
    assert get_palette("gray").map(CODE_ESCAPING, 1, 10) == (236, 236, 236)


def test_unknown_palette_is_rejected():
    assert set(PALETTES) == {"escape-time", "gray"}
    with pytest.raises(ValueError):
        get_palette("rainbow")


def test_rendered_field_golden_bytes():
    grid = SampleGrid(Rectangle(0, 4, -1, 1), 4, 1)
    escape_field = compute_escape_field([make_generator("d", "2*z")], grid, 1, OrbitParams(100, 20))
    expected = b"P6\n4 1\n255\n" + bytes([
        179, 134, 166,  # 反復 8
        189, 141, 161,  # 反復 7
        198, 148, 156,  # 反復 6
        208, 156, 151,  # 反復 5
    ])
    assert ppm_bytes(render_field(escape_field)) == expected


def test_rendered_field_with_every_verdict():
    grid = SampleGrid(Rectangle(0, 3, 0, 1), 3, 1)
    escape_field = EscapeField(
        grid,
        np.array([[CODE_BOUNDED, CODE_ESCAPING, CODE_UNDETERMINED]], dtype=np.uint8),
        np.array([[3, 5, -1]], dtype=np.int32),
        OrbitParams(1e10, 10),
        1,
    )
    pixels = list(render_field(escape_field).getdata())
    assert pixels == [BOUNDED_COLOR, (160, 120, 175), UNDETERMINED_COLOR]


def test_write_image_infers_format_from_extension(tmp_path):
    image = render_mask(Mask.ones(SampleGrid(Rectangle(0, 2, 0, 2), 2, 2)))
    ppm_path = tmp_path / "out" / "mask.ppm"
    png_path = tmp_path / "out" / "mask.png"
    write_image(image, str(ppm_path))
    write_image(image, str(png_path))
    assert ppm_path.read_bytes() == ppm_bytes(image)
    png = png_path.read_bytes()
    assert png.startswith(b"\x89PNG")
    assert list(Image.open(io.BytesIO(png)).convert("RGB").getdata()) == [(255, 255, 255)] * 4
    assert not [p for p in ppm_path.parent.iterdir() if p.name.startswith(".tmp-")]


def test_write_image_failures(tmp_path):
    image = render_mask(Mask.zeros(SampleGrid(Rectangle(0, 1, 0, 1), 1, 1)))
    directory = tmp_path / "taken"
    directory.mkdir()
    with pytest.raises(ImageIOError) as info:
        write_image(image, str(directory), "ppm")
    assert info.value.path == str(directory)
    with pytest.raises(ValueError):
        write_image(image, str(tmp_path / "mask.bmp"))
    with pytest.raises(ValueError):
        image_to_bytes(image, "gif")


def test_output_name_pattern():
    grid = SampleGrid(Rectangle(0, 1, 0, 1), 256, 128)
    assert output_name("exp-single", "field", grid, "ppm") == "exp-single-field-256x128.ppm"
