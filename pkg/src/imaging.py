"""
画像出力モジュール
エスケープフィールドとマスクをエスケープタイム配色で画像化する
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from PIL import Image

from .field import EscapeField, Mask
from .grid import SampleGrid
from .orbit import CODE_ESCAPING, CODE_UNDETERMINED
from .utils.image_io import SUPPORTED_FORMATS, atomic_write_bytes, image_to_bytes

logger = logging.getLogger(__name__)

RGB = Tuple[int, int, int]

BOUNDED_COLOR: RGB = (0, 0, 0)
UNDETERMINED_COLOR: RGB = (255, 0, 255)
MASK_SET_COLOR: RGB = (255, 255, 255)
MASK_UNSET_COLOR: RGB = (0, 0, 0)


def _shade(iters: np.ndarray, max_iter: int) -> np.ndarray:
    """反復 1..N を 254..64 の明るさに写す（早く脱出するほど明るい）"""
    it = np.clip(iters.astype(np.int64), 1, max(1, max_iter))
    return 255 - (191 * it) // max(1, max_iter)


def _escape_time_colors(iters: np.ndarray, max_iter: int) -> np.ndarray:
    s = _shade(iters, max_iter)
    return np.stack([s, (s * 3) // 4, 255 - s // 2], axis=-1)


def _gray_colors(iters: np.ndarray, max_iter: int) -> np.ndarray:
    s = _shade(iters, max_iter)
    return np.stack([s, s, s], axis=-1)


@dataclass(frozen=True)
class Palette:
    """
    判定コードと脱出反復から RGB への写像

    Bounded は BOUNDED_COLOR、Undetermined は UNDETERMINED_COLOR に固定。
    escaping は反復数 (N で正規化) の関数で、各チャンネルが単調に変化する。
    """
    name: str
    escaping: Callable[[np.ndarray, int], np.ndarray]

    def colors(self, verdicts: np.ndarray, first_iter: np.ndarray, max_iter: int) -> np.ndarray:
        rgb = np.zeros(verdicts.shape + (3,), dtype=np.uint8)
        rgb[...] = BOUNDED_COLOR
        escaping = verdicts == CODE_ESCAPING
        if escaping.any():
            rgb[escaping] = self.escaping(first_iter[escaping], max_iter).astype(np.uint8)
        rgb[verdicts == CODE_UNDETERMINED] = UNDETERMINED_COLOR
        return rgb

    def map(self, verdict: int, first_escape_iter: Optional[int], max_iter: int) -> RGB:
        iters = np.array([-1 if first_escape_iter is None else first_escape_iter])
        color = self.colors(np.array([verdict], dtype=np.uint8), iters, max_iter)[0]
        return tuple(int(c) for c in color)


PALETTES: Dict[str, Palette] = {
    "escape-time": Palette("escape-time", _escape_time_colors),
    "gray": Palette("gray", _gray_colors),
}
DEFAULT_PALETTE = PALETTES["escape-time"]


def get_palette(name: str) -> Palette:
    try:
        return PALETTES[name]
    except KeyError:
        raise ValueError(f"不明なパレットです: {name}（利用可能: {', '.join(PALETTES)}）") from None


def render_field(escape_field: EscapeField, palette: Palette = DEFAULT_PALETTE) -> Image.Image:
    """width × height の RGB 画像。ピクセル色は palette(判定, 反復, N)"""
    rgb = palette.colors(escape_field.verdicts, escape_field.first_escape_iter, escape_field.params.max_iter)
    return Image.fromarray(np.ascontiguousarray(rgb))


def render_mask(m: Mask) -> Image.Image:
    """セット=白、未セット=黒"""
    rgb = np.empty(m.bits.shape + (3,), dtype=np.uint8)
    rgb[...] = MASK_UNSET_COLOR
    rgb[m.bits] = MASK_SET_COLOR
    return Image.fromarray(rgb)


def write_image(image: Image.Image, path: str, format: Optional[str] = None) -> None:
    """
    画像を書き出す（一時ファイル + rename）

    Args:
        image: PIL Image
        path: 出力先
        format: "ppm" / "png"。省略時は拡張子から判断

    Raises:
        ImageIOError: 書き込み失敗
    """
    if format is None:
        format = os.path.splitext(path)[1].lstrip(".").lower() or "ppm"
    if format not in SUPPORTED_FORMATS:
        raise ValueError(f"未対応の形式です: {format}")
    atomic_write_bytes(path, image_to_bytes(image, format))
    logger.debug("wrote %s (%dx%d)", path, *image.size)


def output_name(preset: str, kind: str, grid: SampleGrid, extension: str) -> str:
    """<preset>-<kind>-<WxH>.<ext>"""
    return f"{preset}-{kind}-{grid.label()}.{extension}"
