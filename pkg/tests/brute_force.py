"""
素朴な1点ずつの再実装（タイル分割・並列化なし）

テストでライブラリのベクトル化実装と突き合わせるために使う
"""

import itertools
import math

import numpy as np

from src.expr import OVERFLOW, differentiate, eval_expr


def words(k, depth):
    return [w for n in range(1, depth + 1) for w in itertools.product(range(k), repeat=n)]


def center(region, width, height, i, j):
    x_min, x_max, y_min, y_max = region
    dx = (x_max - x_min) / width
    dy = (y_max - y_min) / height
    return complex(x_min + (i + 0.5) * dx, y_max - (j + 0.5) * dy)


def locate(region, width, height, z):
    x_min, x_max, y_min, y_max = region
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        return None
    dx = (x_max - x_min) / width
    dy = (y_max - y_min) / height
    i = math.floor((z.real - x_min) / dx)
    j = math.floor((y_max - z.imag) / dy)
    if 0 <= i < width and 0 <= j < height:
        return i, j
    return None


def escapes(word, exprs, z, radius, max_iter):
    """(脱出したか, 反復数, オーバーフローしたか)"""
    for n in range(1, max_iter + 1):
        for index in word:
            value = eval_expr(exprs[index], z)
            if value is OVERFLOW:
                return True, n, True
            z = value
        if abs(z) > radius:
            return True, n, False
    return False, 0, False


def field(exprs, region, width, height, depth, radius, max_iter, overflow_is_escape=True):
    """(判定コード, 最小脱出反復) を二重ループで計算"""
    codes = np.zeros((height, width), dtype=np.uint8)
    first = np.full((height, width), -1, dtype=np.int32)
    all_words = words(len(exprs), depth)
    for j in range(height):
        for i in range(width):
            z = center(region, width, height, i, j)
            bounded = undetermined = False
            best = -1
            for w in all_words:
                escaped, n, overflowed = escapes(w, exprs, z, radius, max_iter)
                if not escaped:
                    bounded = True
                    continue
                if overflowed and not overflow_is_escape:
                    undetermined = True
                if best < 0 or n < best:
                    best = n
            codes[j, i] = 0 if bounded else (2 if undetermined else 1)
            first[j, i] = best
    return codes, first


def single_element(word, exprs, region, width, height, radius, max_iter, overflow_is_escape=True):
    bits = np.zeros((height, width), dtype=bool)
    for j in range(height):
        for i in range(width):
            escaped, _, overflowed = escapes(word, exprs, center(region, width, height, i, j), radius, max_iter)
            bits[j, i] = escaped and (overflow_is_escape or not overflowed)
    return bits


def subdivisions(slope, dx, dy, cap=8):
    if slope is OVERFLOW:
        return cap
    return min(cap, max(1, math.ceil(min(abs(slope) * max(dx, dy) / min(dx, dy), cap))))


def image(bits, expr, region, width, height):
    """セットされたセルの角・辺を含む (2k+1)^2 点の像が落ちるピクセル"""
    x_min, x_max, y_min, y_max = region
    dx = (x_max - x_min) / width
    dy = (y_max - y_min) / height
    derivative = differentiate(expr)
    out = np.zeros_like(bits)
    for j, i in zip(*np.nonzero(bits)):
        c = center(region, width, height, i, j)
        k = subdivisions(eval_expr(derivative, c), dx, dy)
        for b in range(-k, k + 1):
            for a in range(-k, k + 1):
                value = eval_expr(expr, c + complex(a / (2 * k) * dx, b / (2 * k) * dy))
                if value is OVERFLOW:
                    continue
                cell = locate(region, width, height, value)
                if cell is not None:
                    out[cell[1], cell[0]] = True
    return out


def preimage(bits, expr, region, width, height):
    out = np.zeros_like(bits)
    for j in range(height):
        for i in range(width):
            value = eval_expr(expr, center(region, width, height, i, j))
            if value is OVERFLOW:
                continue
            cell = locate(region, width, height, value)
            if cell is not None and bits[cell[1], cell[0]]:
                out[j, i] = True
    return out


def towers(exprs, region, width, height, depth, n_max, radius, max_iter, overflow_is_escape=True):
    """(E, F) を素朴に構成"""
    base = np.ones((height, width), dtype=bool)
    for w in words(len(exprs), depth):
        base &= single_element(w, exprs, region, width, height, radius, max_iter, overflow_is_escape)
    e_levels, f_levels = [base], [base]
    for _ in range(n_max):
        e_next = np.zeros_like(base)
        f_next = np.zeros_like(base)
        for expr in exprs:
            e_next |= preimage(e_levels[-1], expr, region, width, height)
            e_next |= image(e_levels[-1], expr, region, width, height)
            f_next |= image(f_levels[-1], expr, region, width, height)
        e_levels.append(e_next)
        f_levels.append(f_next)
    return np.logical_and.reduce(e_levels), np.logical_and.reduce(f_levels)
