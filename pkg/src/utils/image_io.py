"""
画像入出力処理モジュール
PPM/PBM/PNG/ESCF のバイト列生成・読み込みとアトミックなファイル書き込みを担当
"""

import io
import os
import struct
import tempfile
from typing import Tuple

import numpy as np
from PIL import Image

from ..errors import ImageIOError

ESCF_MAGIC = b"ESCF"
ESCF_HEADER = struct.Struct("<4sII")
ESCF_PIXEL = np.dtype([("code", "u1"), ("iter", "<u2")])
ESCF_ITER_ABSENT = 0xFFFF
ESCF_ITER_MAX = 0xFFFE

SUPPORTED_FORMATS = ("ppm", "png")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """
    一時ファイルに書いてから rename する

    Raises:
        ImageIOError: 書き込み・rename に失敗
    """
    directory = os.path.dirname(os.path.abspath(path))
    tmp_path = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
        tmp_path = None
    except OSError as e:
        raise ImageIOError(path, e) from e
    finally:
        if tmp_path is not None and os.path.exists(tmp_path):
            os.remove(tmp_path)


def ppm_bytes(image: Image.Image) -> bytes:
    """P6 形式: "P6\\n<w> <h>\\n255\\n" の後に上から下へ RGB 行"""
    rgb = image if image.mode == "RGB" else image.convert("RGB")
    width, height = rgb.size
    return f"P6\n{width} {height}\n255\n".encode("ascii") + rgb.tobytes()


def png_bytes(image: Image.Image) -> bytes:
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def image_to_bytes(image: Image.Image, format: str = "ppm") -> bytes:
    """
    画像をバイトデータに変換

    Args:
        image: PIL Imageオブジェクト
        format: "ppm" または "png"

    Returns:
        画像のバイトデータ
    """
    format = format.lower()
    if format == "ppm":
        return ppm_bytes(image)
    if format == "png":
        return png_bytes(image)
    raise ValueError(f"未対応の形式です: {format}")


def pbm_bytes(bits: np.ndarray) -> bytes:
    """P4 形式。セット=1（黒）、各行はバイト境界までパディング"""
    bits = np.asarray(bits, dtype=bool)
    height, width = bits.shape
    packed = np.packbits(bits, axis=1)
    return f"P4\n{width} {height}\n".encode("ascii") + packed.tobytes()


def _read_header_tokens(data: bytes, count: int) -> Tuple[list, int]:
    """ヘッダーの空白区切りトークンを count 個読み、データ開始位置を返す"""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("ヘッダーが途中で終わっています")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pbm(data: bytes) -> np.ndarray:
    """P4 形式のバイト列をブール配列に戻す"""
    (magic, w, h), start = _read_header_tokens(data, 3)
    if magic != b"P4":
        raise ValueError(f"P4 形式ではありません: {magic!r}")
    width, height = int(w), int(h)
    row_bytes = (width + 7) // 8
    packed = np.frombuffer(data[start:start + row_bytes * height], dtype=np.uint8).reshape(height, row_bytes)
    return np.unpackbits(packed, axis=1)[:, :width].astype(bool)


def escf_bytes(codes: np.ndarray, first_iter: np.ndarray) -> bytes:
    """
    エスケープフィールドのバイナリ形式

    "ESCF", u32 幅, u32 高さ, 各ピクセル u8 判定コード + u16 最初の脱出反復（なしは 0xFFFF）、リトルエンディアン
    """
    height, width = codes.shape
    pixels = np.empty(codes.size, dtype=ESCF_PIXEL)
    pixels["code"] = codes.ravel()
    iters = first_iter.ravel()
    pixels["iter"] = np.where(iters < 0, ESCF_ITER_ABSENT, np.minimum(iters, ESCF_ITER_MAX))
    return ESCF_HEADER.pack(ESCF_MAGIC, width, height) + pixels.tobytes()


def read_escf(data: bytes) -> Tuple[np.ndarray, np.ndarray]:
    """ESCF バイト列を (判定コード, 最初の脱出反復（なしは -1）) に戻す"""
    magic, width, height = ESCF_HEADER.unpack_from(data, 0)
    if magic != ESCF_MAGIC:
        raise ValueError(f"ESCF 形式ではありません: {magic!r}")
    pixels = np.frombuffer(data, dtype=ESCF_PIXEL, count=width * height, offset=ESCF_HEADER.size)
    codes = pixels["code"].reshape(height, width).copy()
    raw = pixels["iter"].reshape(height, width).astype(np.int32)
    first_iter = np.where(raw == ESCF_ITER_ABSENT, -1, raw).astype(np.int32)
    return codes, first_iter


def read_file(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()
