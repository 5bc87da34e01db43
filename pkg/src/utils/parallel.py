"""
タイル並列処理
行タイルへの分割とプロセスプールへの割り当てを担当
"""

import logging
import os
from math import ceil
from multiprocessing import Pool, cpu_count
from typing import Any, Callable, List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

DEFAULT_TILE_ROWS = 16
THREADS_ENV = "ESCAPE_LAB_THREADS"


def row_tiles(height: int, tile_rows: int = DEFAULT_TILE_ROWS) -> List[Tuple[int, int]]:
    """
    行範囲 [start, end) のタイル列を返す

    タイル境界はワーカー数に依存しないので、どの並列度でも同じ計算単位になる
    """
    tile_rows = max(1, int(tile_rows))
    return [(start, min(start + tile_rows, height)) for start in range(0, height, tile_rows)]


def flat_chunks(count: int, chunk_size: int) -> List[Tuple[int, int]]:
    chunk_size = max(1, int(chunk_size))
    return [(start, min(start + chunk_size, count)) for start in range(0, count, chunk_size)]


def resolve_threads(threads: Optional[int] = None) -> int:
    """引数 > 環境変数 ESCAPE_LAB_THREADS > 1 の順でワーカー数を決める"""
    if threads is None:
        env_value = os.getenv(THREADS_ENV)
        if env_value:
            try:
                threads = int(env_value)
            except ValueError:
                logger.warning("%s の値が不正です: %r", THREADS_ENV, env_value)
                threads = 1
        else:
            threads = 1
    if threads <= 0:
        threads = cpu_count()
    return threads


def run_tiles(worker: Callable[..., Any], tasks: Sequence[Tuple], threads: Optional[int] = None) -> List[Any]:
    """
    worker(*task) をすべてのタスクに適用し、タスク順に結果を返す

    Args:
        worker: モジュールトップレベルの関数（pickle 可能であること）
        tasks: 引数タプルのリスト
        threads: ワーカー数（None は環境変数、0 以下は CPU 数）

    Returns:
        結果のリスト（tasks と同じ順序）
    """
    threads = resolve_threads(threads)
    if threads <= 1 or len(tasks) <= 1:
        return [worker(*task) for task in tasks]
    processes = min(threads, len(tasks))
    chunksize = max(1, ceil(len(tasks) / (processes * 4)))
    with Pool(processes=processes) as pool:
        return pool.starmap(worker, tasks, chunksize=chunksize)
