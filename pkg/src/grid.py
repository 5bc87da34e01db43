"""
平面領域とサンプルグリッド
ピクセル (i, j) と複素平面上の点の対応を担当
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class Rectangle:
    """複素平面上の矩形窓"""
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"不正な矩形: {self}")

    def contains(self, z: complex) -> bool:
        return self.x_min <= z.real <= self.x_max and self.y_min <= z.imag <= self.y_max

    def contains_array(self, z: np.ndarray) -> np.ndarray:
        return ((z.real >= self.x_min) & (z.real <= self.x_max)
                & (z.imag >= self.y_min) & (z.imag <= self.y_max))

    def as_list(self) -> list:
        return [self.x_min, self.x_max, self.y_min, self.y_max]


@dataclass(frozen=True)
class SampleGrid:
    """
    width × height のピクセルグリッド

    列 i は左から右、行 j は上（y_max）から下。ピクセル (i, j) はセル中心の点で代表する。
    セルは半開区間 [x0, x0+dx) × (y0-dy, y0] で、右端・下端の境界上の点は窓外として扱う。
    """
    region: Rectangle
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"不正なグリッドサイズ: {self.width}x{self.height}")

    @property
    def dx(self) -> float:
        return (self.region.x_max - self.region.x_min) / self.width

    @property
    def dy(self) -> float:
        return (self.region.y_max - self.region.y_min) / self.height

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    def label(self) -> str:
        return f"{self.width}x{self.height}"

    def center(self, i: int, j: int) -> complex:
        """ピクセル (i, j) の中心点"""
        x = self.region.x_min + (i + 0.5) * self.dx
        y = self.region.y_max - (j + 0.5) * self.dy
        return complex(x, y)

    def row_points(self, row_start: int, row_end: int) -> np.ndarray:
        """行 row_start..row_end-1 の中心点を (rows, width) の配列で返す"""
        cols = np.arange(self.width, dtype=np.float64)
        rows = np.arange(row_start, row_end, dtype=np.float64)
        x = self.region.x_min + (cols + 0.5) * self.dx
        y = self.region.y_max - (rows + 0.5) * self.dy
        return x[np.newaxis, :] + 1j * y[:, np.newaxis]

    def points(self) -> np.ndarray:
        return self.row_points(0, self.height)

    def locate(self, z: complex) -> Optional[Tuple[int, int]]:
        """点を含むピクセル (i, j)。窓外なら None"""
        cols, rows, inside = self.locate_array(np.array([z], dtype=np.complex128))
        if not inside[0]:
            return None
        return int(cols[0]), int(rows[0])

    def locate_array(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        各点を含むピクセルの列・行と窓内フラグを返す

        非有限な点は窓外として扱う
        """
        z = np.asarray(z, dtype=np.complex128)
        finite = np.isfinite(z)
        safe = np.where(finite, z, 0)
        with np.errstate(all="ignore"):
            fx = np.floor((safe.real - self.region.x_min) / self.dx)
            fy = np.floor((self.region.y_max - safe.imag) / self.dy)
        inside = finite & (fx >= 0) & (fx < self.width) & (fy >= 0) & (fy < self.height)
        cols = np.where(inside, fx, 0).astype(np.int64)
        rows = np.where(inside, fy, 0).astype(np.int64)
        return cols, rows, inside
