"""
エスケープフィールドモジュール
ピクセルグリッド上の脱出判定と E_n / F_n 塔マスクの構成を担当
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import GridMismatch
from .expr import Generator, evaluate_array
from .grid import Rectangle, SampleGrid
from .orbit import (
    CODE_BOUNDED, CODE_ESCAPING, CODE_UNDETERMINED, DEFAULT_WORD_CAP, OrbitParams, Word,
    classify_array, enumerate_words, iterate_word_array,
)
from .utils.image_io import atomic_write_bytes, escf_bytes, pbm_bytes, read_escf, read_file, read_pbm
from .utils.monitoring import performance_monitor
from .utils.parallel import DEFAULT_TILE_ROWS, flat_chunks, row_tiles, run_tiles

logger = logging.getLogger(__name__)

__all__ = [
    "Rectangle", "SampleGrid", "EscapeField", "Mask", "Tower",
    "compute_escape_field", "classify_points", "mask_escaping", "mask_single_element",
    "mask_and", "mask_or", "forward_image_mask", "preimage_mask", "construct_E", "construct_F",
    "write_escape_field", "read_escape_field", "write_mask", "load_mask",
]

POINT_CHUNK = 4096
# 前方像でセル1辺あたりにとる分割数の上限
SUPERSAMPLE_MAX = 8

E_TOWER_LABEL = "E-tower approximation of K(S)"
F_TOWER_LABEL = "F-tower approximation of I(S)"


@dataclass(eq=False)
class EscapeField:
    """
    ピクセルごとの判定結果

    verdicts: (height, width) の判定コード（0=Bounded, 1=EscapingAll, 2=Undetermined）
    first_escape_iter: 全ワード中で最小の脱出反復。脱出したワードがなければ -1
    """
    grid: SampleGrid
    verdicts: np.ndarray
    first_escape_iter: np.ndarray
    params: OrbitParams
    depth: int
    labels: Tuple[str, ...] = ()

    def verdict_at(self, i: int, j: int) -> int:
        return int(self.verdicts[j, i])

    def first_escape_at(self, i: int, j: int) -> Optional[int]:
        value = int(self.first_escape_iter[j, i])
        return None if value < 0 else value

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.verdicts == code))

    def to_bytes(self) -> bytes:
        return escf_bytes(self.verdicts, self.first_escape_iter)

    def parameters(self) -> dict:
        region = self.grid.region
        return {
            "region": region.as_list(),
            "width": self.grid.width,
            "height": self.grid.height,
            "depth": self.depth,
            **self.params.as_dict(),
            "generators": list(self.labels),
        }


@dataclass(eq=False)
class Mask:
    """
    ピクセルマスク

    spill: 生成時に窓外へ出た（またはオーバーフローした）点の数
    """
    grid: SampleGrid
    bits: np.ndarray
    spill: int = 0
    label: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != self.grid.shape:
            raise GridMismatch(f"マスクの形状 {self.bits.shape} がグリッド {self.grid.shape} と一致しません")

    @classmethod
    def zeros(cls, grid: SampleGrid, label: str = "") -> "Mask":
        return cls(grid, np.zeros(grid.shape, dtype=bool), label=label)

    @classmethod
    def ones(cls, grid: SampleGrid, label: str = "") -> "Mask":
        return cls(grid, np.ones(grid.shape, dtype=bool), label=label)

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def density(self) -> float:
        return self.count() / self.grid.size

    def same_bits(self, other: "Mask") -> bool:
        return self.grid == other.grid and bool(np.array_equal(self.bits, other.bits))

    def to_pbm(self) -> bytes:
        return pbm_bytes(self.bits)


class Tower(NamedTuple):
    levels: List[Mask]
    final: Mask
    spills: List[int]
    label: str


# ---------------------------------------------------------------------------
# ワーカー（プロセスプールから呼ばれるのでトップレベルに置く）
# ---------------------------------------------------------------------------

def _classify_tile(grid: SampleGrid, row_start: int, row_end: int, gens: Sequence[Generator],
                   words: Sequence[Word], params: OrbitParams) -> Tuple[np.ndarray, np.ndarray]:
    return classify_array(grid.row_points(row_start, row_end), gens, words, params)


def _classify_chunk(points: np.ndarray, gens: Sequence[Generator], words: Sequence[Word],
                    params: OrbitParams) -> Tuple[np.ndarray, np.ndarray]:
    return classify_array(points, gens, words, params)


def _single_element_tile(grid: SampleGrid, row_start: int, row_end: int, word: Word,
                         gens: Sequence[Generator], params: OrbitParams) -> np.ndarray:
    orbit = iterate_word_array(word, gens, grid.row_points(row_start, row_end), params)
    escaped = orbit.escape_iter > 0
    if not params.overflow_is_escape:
        escaped &= ~orbit.overflowed
    return escaped


# ---------------------------------------------------------------------------
# フィールド計算
# ---------------------------------------------------------------------------

@performance_monitor("compute_escape_field")
def compute_escape_field(gens: Sequence[Generator], grid: SampleGrid, depth: int, params: OrbitParams,
                         threads: Optional[int] = None, word_cap: int = DEFAULT_WORD_CAP,
                         tile_rows: int = DEFAULT_TILE_ROWS) -> EscapeField:
    """
    グリッドの各ピクセル中心を classify_point と同じ規則で判定する

    Args:
        gens: 生成元
        grid: サンプルグリッド
        depth: ワード長の上限 L
        params: 脱出判定パラメータ
        threads: ワーカー数（結果は並列度に依存しない）
        word_cap: ワード数の上限
        tile_rows: タイルの行数

    Returns:
        EscapeField

    Raises:
        BudgetExceeded: ワード数が上限を超える
    """
    words = enumerate_words(len(gens), depth, word_cap)
    tiles = row_tiles(grid.height, tile_rows)
    results = run_tiles(_classify_tile, [(grid, r0, r1, list(gens), words, params) for r0, r1 in tiles], threads)
    verdicts = np.concatenate([codes for codes, _ in results], axis=0)
    first_iter = np.concatenate([iters for _, iters in results], axis=0)
    escape_field = EscapeField(
        grid=grid,
        verdicts=verdicts,
        first_escape_iter=first_iter,
        params=params,
        depth=depth,
        labels=tuple(g.name for g in gens),
    )
    logger.info(
        "escape field %s: escaping=%d bounded=%d undetermined=%d (words=%d)",
        grid.label(), escape_field.count(CODE_ESCAPING), escape_field.count(CODE_BOUNDED),
        escape_field.count(CODE_UNDETERMINED), len(words),
    )
    return escape_field


def classify_points(points: np.ndarray, gens: Sequence[Generator], words: Sequence[Word],
                    params: OrbitParams, threads: Optional[int] = None,
                    chunk_size: int = POINT_CHUNK) -> Tuple[np.ndarray, np.ndarray]:
    """
    任意の点集合を固定サイズのチャンクで一括判定する

    Returns:
        (判定コード, 最小脱出反復)。入力と同じ形状
    """
    points = np.asarray(points, dtype=np.complex128)
    flat = points.ravel()
    if flat.size == 0:
        return np.zeros(points.shape, dtype=np.uint8), np.full(points.shape, -1, dtype=np.int32)
    tasks = [(flat[a:b], list(gens), list(words), params) for a, b in flat_chunks(flat.size, chunk_size)]
    results = run_tiles(_classify_chunk, tasks, threads)
    codes = np.concatenate([c for c, _ in results]).reshape(points.shape)
    iters = np.concatenate([i for _, i in results]).reshape(points.shape)
    return codes, iters


def mask_escaping(escape_field: EscapeField) -> Mask:
    """EscapingAll のピクセルをセットしたマスク（I(S) の近似）"""
    return Mask(escape_field.grid, escape_field.verdicts == CODE_ESCAPING, label="I(S)")


@performance_monitor("mask_single_element")
def mask_single_element(word: Word, gens: Sequence[Generator], grid: SampleGrid, params: OrbitParams,
                        threads: Optional[int] = None, tile_rows: int = DEFAULT_TILE_ROWS,
                        names: Optional[Sequence[str]] = None) -> Mask:
    """単一の元 h の脱出集合 I(h) のマスク"""
    word.validate(len(gens))
    tiles = row_tiles(grid.height, tile_rows)
    results = run_tiles(_single_element_tile, [(grid, r0, r1, word, list(gens), params) for r0, r1 in tiles], threads)
    names = names or [g.name for g in gens]
    return Mask(grid, np.concatenate(results, axis=0), label=f"I({word.compose_form(names)})")


def _check_same_grid(masks: Sequence[Mask]) -> SampleGrid:
    if not masks:
        raise ValueError("マスクのリストが空です")
    grid = masks[0].grid
    for m in masks[1:]:
        if m.grid != grid:
            raise GridMismatch("異なるグリッドのマスクは結合できません")
    return grid


def mask_and(masks: Sequence[Mask]) -> Mask:
    grid = _check_same_grid(masks)
    bits = masks[0].bits.copy()
    for m in masks[1:]:
        bits &= m.bits
    return Mask(grid, bits)


def mask_or(masks: Sequence[Mask]) -> Mask:
    grid = _check_same_grid(masks)
    bits = masks[0].bits.copy()
    for m in masks[1:]:
        bits |= m.bits
    return Mask(grid, bits)


def _subdivisions(g: Generator, centers: np.ndarray, grid: SampleGrid) -> np.ndarray:
    """セルの像の広がり |g'|・セル幅 に応じた 1 辺あたりの分割数 k（1..SUPERSAMPLE_MAX）"""
    slopes, bad = evaluate_array(g.derivative, centers)
    aspect = max(grid.dx, grid.dy) / min(grid.dx, grid.dy)
    spread = np.minimum(np.abs(np.where(bad, 0, slopes)) * aspect, SUPERSAMPLE_MAX)
    k = np.where(bad, SUPERSAMPLE_MAX, np.ceil(spread))
    return np.clip(k, 1, SUPERSAMPLE_MAX).astype(np.int64)


def _cell_offsets(k: int, grid: SampleGrid) -> np.ndarray:
    """セル中心からの標本オフセット。角と辺を含む (2k+1)^2 点"""
    steps = np.arange(-k, k + 1) / (2 * k)
    return (steps[np.newaxis, :] * grid.dx + 1j * steps[:, np.newaxis] * grid.dy).ravel()


def forward_image_mask(m: Mask, g: Generator) -> Mask:
    """
    セットされたピクセル（セル全体）の g による像が触れるピクセルをセットする

    セルごとに |g'| に比例した密度で角を含む格子点を標本にとり、像の標本間隔が
    ピクセル幅の半分以下になるようにする。
    標本が1つも窓内に落ちなかった元ピクセルの数を spill に数える
    """
    grid = m.grid
    bits = np.zeros(grid.shape, dtype=bool)
    centers = grid.points()[m.bits]
    if centers.size == 0:
        return Mask(grid, bits, spill=0)
    landed = np.zeros(centers.size, dtype=bool)
    subdivisions = _subdivisions(g, centers, grid)
    for k in np.unique(subdivisions):
        offsets = _cell_offsets(int(k), grid)
        chosen = np.flatnonzero(subdivisions == k)
        for a, b in flat_chunks(chosen.size, max(1, POINT_CHUNK // offsets.size)):
            index = chosen[a:b]
            samples = centers[index, np.newaxis] + offsets[np.newaxis, :]
            images, bad = evaluate_array(g.expr, samples.ravel())
            cols, rows, inside = grid.locate_array(np.where(bad, np.nan, images))
            inside &= ~bad
            bits[rows[inside], cols[inside]] = True
            landed[index] |= inside.reshape(samples.shape).any(axis=1)
    return Mask(grid, bits, spill=int(np.count_nonzero(~landed)))


def preimage_mask(m: Mask, g: Generator) -> Mask:
    """
    g(中心) が m のセットピクセルに落ちるピクセルをセットする（g^{-1}(m) の所属判定）

    spill は像が窓外へ出たピクセル数
    """
    grid = m.grid
    images, bad = evaluate_array(g.expr, grid.points())
    cols, rows, inside = grid.locate_array(np.where(bad, np.nan, images))
    inside &= ~bad
    bits = inside & m.bits[rows, cols]
    return Mask(grid, bits, spill=int(np.count_nonzero(~inside)))


def _base_level(gens: Sequence[Generator], grid: SampleGrid, depth: int, params: OrbitParams,
                threads: Optional[int], word_cap: int, tile_rows: int) -> Mask:
    """E_0 = F_0 = ⋂_h I(h)（長さ depth 以下のワード h）"""
    words = enumerate_words(len(gens), depth, word_cap)
    names = [g.name for g in gens]
    base = mask_and([mask_single_element(w, gens, grid, params, threads, tile_rows, names) for w in words])
    base.label = "E_0"
    return base


@performance_monitor("construct_E")
def construct_E(gens: Sequence[Generator], grid: SampleGrid, depth: int, n_max: int, params: OrbitParams,
                threads: Optional[int] = None, word_cap: int = DEFAULT_WORD_CAP,
                tile_rows: int = DEFAULT_TILE_ROWS) -> Tower:
    """
    E 塔: E_{n+1} = ⋃_g g^{-1}(E_n) ∪ ⋃_g g(E_n)、E = E_0 ∩ ... ∩ E_{n_max}

    レベル1以上の和は生成元のみを走る（ワードの像・逆像はレベルをまたいだ合成で到達する）

    Returns:
        Tower(levels=[E_0..E_{n_max}], final=E, spills, label)
    """
    if n_max < 0:
        raise ValueError(f"n_max は0以上である必要があります: {n_max}")
    levels = [_base_level(gens, grid, depth, params, threads, word_cap, tile_rows)]
    spills = [0]
    for n in range(n_max):
        current = levels[-1]
        parts = []
        for g in gens:
            parts.append(preimage_mask(current, g))
            parts.append(forward_image_mask(current, g))
        nxt = mask_or(parts)
        nxt.label = f"E_{n + 1}"
        nxt.spill = sum(p.spill for p in parts)
        levels.append(nxt)
        spills.append(nxt.spill)
    final = mask_and(levels)
    final.label = "E"
    logger.info("E tower: %s", [lv.count() for lv in levels] + [final.count()])
    return Tower(levels=levels, final=final, spills=spills, label=E_TOWER_LABEL)


@performance_monitor("construct_F")
def construct_F(gens: Sequence[Generator], grid: SampleGrid, depth: int, n_max: int, params: OrbitParams,
                threads: Optional[int] = None, word_cap: int = DEFAULT_WORD_CAP,
                tile_rows: int = DEFAULT_TILE_ROWS) -> Tower:
    """
    F 塔: F_0 = E_0、F_{n+1} = ⋃_g g(F_n)、F = F_0 ∩ ... ∩ F_{n_max}
    """
    if n_max < 0:
        raise ValueError(f"n_max は0以上である必要があります: {n_max}")
    base = _base_level(gens, grid, depth, params, threads, word_cap, tile_rows)
    base.label = "F_0"
    levels = [base]
    spills = [0]
    for n in range(n_max):
        parts = [forward_image_mask(levels[-1], g) for g in gens]
        nxt = mask_or(parts)
        nxt.label = f"F_{n + 1}"
        nxt.spill = sum(p.spill for p in parts)
        levels.append(nxt)
        spills.append(nxt.spill)
    final = mask_and(levels)
    final.label = "F"
    logger.info("F tower: %s", [lv.count() for lv in levels] + [final.count()])
    return Tower(levels=levels, final=final, spills=spills, label=F_TOWER_LABEL)


# ---------------------------------------------------------------------------
# ファイル入出力
# ---------------------------------------------------------------------------

def write_escape_field(escape_field: EscapeField, path: str) -> None:
    atomic_write_bytes(path, escape_field.to_bytes())


def read_escape_field(path: str, grid: SampleGrid, params: OrbitParams, depth: int,
                      labels: Tuple[str, ...] = ()) -> EscapeField:
    """ESCF ファイルを読み込み、設定のグリッドと寸法が一致することを確認する"""
    codes, first_iter = read_escf(read_file(path))
    if codes.shape != grid.shape:
        raise GridMismatch(f"{path}: 寸法 {codes.shape} が設定 {grid.shape} と一致しません")
    return EscapeField(grid=grid, verdicts=codes, first_escape_iter=first_iter,
                       params=params, depth=depth, labels=labels)


def write_mask(mask: Mask, path: str) -> None:
    atomic_write_bytes(path, mask.to_pbm())


def load_mask(path: str, grid: SampleGrid) -> Mask:
    bits = read_pbm(read_file(path))
    return Mask(grid, bits)
