"""
軌道モジュール
半群のワード列挙、ワードの反復、脱出判定、逆像点の計算を担当
"""

import cmath
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BudgetExceeded, EmptyFiber, TemplateMismatch
from .expr import (
    OVERFLOW, Add, Const, Div, Exp, Expr, Generator, MaybeComplex, Mul, Neg, Sub, Var,
    evaluate_array,
)
from .grid import Rectangle

logger = logging.getLogger(__name__)

DEFAULT_ESCAPE_RADIUS = 1e10
DEFAULT_MAX_ITER = 100
DEFAULT_DEPTH = 4
DEFAULT_WORD_CAP = 10_000


@dataclass(frozen=True, order=True)
class Word:
    """
    半群の元を表すワード

    indices は適用順（先頭の生成元を最初に適用する）。
    長さ1以上（半群に単位元はない）。
    """
    indices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if not self.indices:
            raise ValueError("ワードの長さは1以上である必要があります")
        if min(self.indices) < 0:
            raise ValueError(f"負の生成元インデックス: {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    def validate(self, generator_count: int) -> None:
        if max(self.indices) >= generator_count:
            raise ValueError(f"生成元インデックスが範囲外です: {self.indices} (生成元数 {generator_count})")

    def compose_form(self, names: Sequence[str]) -> str:
        """右から左への合成表記（例: g ∘ f）"""
        return " ∘ ".join(names[i] for i in reversed(self.indices))

    def __str__(self) -> str:
        return "[" + ",".join(str(i) for i in self.indices) + "]"


@dataclass(frozen=True)
class OrbitParams:
    """脱出判定のパラメータ"""
    escape_radius: float = DEFAULT_ESCAPE_RADIUS
    max_iter: int = DEFAULT_MAX_ITER
    overflow_is_escape: bool = True

    def __post_init__(self):
        if not self.escape_radius > 1:
            raise ValueError(f"escape_radius は1より大きい必要があります: {self.escape_radius}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter は1以上である必要があります: {self.max_iter}")

    def as_dict(self) -> dict:
        return {
            "escape_radius": self.escape_radius,
            "max_iter": self.max_iter,
            "overflow_is_escape": self.overflow_is_escape,
        }


@dataclass(frozen=True)
class Escaped:
    iter: int
    modulus: float
    overflowed: bool


@dataclass(frozen=True)
class MaxedOut:
    final: complex


@dataclass(frozen=True)
class OrbitResult:
    status: Union[Escaped, MaxedOut]
    trace_len: int

    @property
    def escaped(self) -> bool:
        return isinstance(self.status, Escaped)


@dataclass(frozen=True)
class EscapingAll:
    """試したすべてのワードで脱出"""


@dataclass(frozen=True)
class BoundedWitness:
    """有界な軌道を持つ最初のワード"""
    word: Word
    result: OrbitResult


@dataclass(frozen=True)
class Undetermined:
    reason: str


Verdict = Union[EscapingAll, BoundedWitness, Undetermined]


@dataclass
class PointClass:
    verdict: Verdict
    per_word: Dict[Word, OrbitResult] = field(default_factory=dict)


# ピクセル判定コード（ESCF 形式と共通）
CODE_BOUNDED = 0
CODE_ESCAPING = 1
CODE_UNDETERMINED = 2


def count_words(generator_count: int, depth: int) -> int:
    return sum(generator_count ** j for j in range(1, depth + 1))


def enumerate_words(generator_count: int, depth: int, cap: int = DEFAULT_WORD_CAP) -> List[Word]:
    """
    長さ 1..depth のすべてのワードを列挙する（長さ昇順、同じ長さ内は辞書順）

    Raises:
        BudgetExceeded: ワード数が cap を超える
    """
    if generator_count < 1 or depth < 1:
        raise ValueError(f"generator_count と depth は1以上である必要があります: {generator_count}, {depth}")
    total = count_words(generator_count, depth)
    if total > cap:
        raise BudgetExceeded(total, cap)
    return [
        Word(indices)
        for length in range(1, depth + 1)
        for indices in itertools.product(range(generator_count), repeat=length)
    ]


# ---------------------------------------------------------------------------
# ベクトル化カーネル
# ---------------------------------------------------------------------------

def apply_word_array(word: Word, gens: Sequence[Generator], z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    ワードを配列に適用する

    Returns:
        (値, オーバーフローフラグ)。オーバーフローした要素の値は 0 に置き換える
    """
    values = np.asarray(z, dtype=np.complex128)
    overflow = np.zeros(values.shape, dtype=bool)
    for index in word.indices:
        values, bad = evaluate_array(gens[index].expr, values)
        overflow |= bad
        if overflow.any():
            values = np.where(overflow, 0, values)
    return values, overflow


@dataclass
class OrbitArrays:
    """iterate_word_array の結果。escape_iter が 0 の要素は脱出していない"""
    escape_iter: np.ndarray
    modulus: np.ndarray
    overflowed: np.ndarray
    final: np.ndarray


def iterate_word_array(word: Word, gens: Sequence[Generator], z0: np.ndarray,
                       params: OrbitParams) -> OrbitArrays:
    """
    ワード h を各点で max_iter 回まで反復し、|h^n(z)| > R またはオーバーフローで脱出とする
    """
    z = np.array(z0, dtype=np.complex128).ravel()
    shape = np.shape(z0)
    escape_iter = np.zeros(z.shape, dtype=np.int32)
    modulus = np.zeros(z.shape, dtype=np.float64)
    overflowed = np.zeros(z.shape, dtype=bool)
    active = np.arange(z.size)
    current = z.copy()

    for n in range(1, params.max_iter + 1):
        if active.size == 0:
            break
        values, bad = apply_word_array(word, gens, current)
        with np.errstate(all="ignore"):
            mod = np.abs(values)
        out = bad | (mod > params.escape_radius)
        if out.any():
            hit = active[out]
            escape_iter[hit] = n
            overflowed[hit] = bad[out]
            modulus[hit] = np.where(bad[out], np.inf, mod[out])
            z[hit] = values[out]
            keep = ~out
            active = active[keep]
            current = values[keep]
        else:
            current = values
    z[active] = current
    return OrbitArrays(
        escape_iter=escape_iter.reshape(shape),
        modulus=modulus.reshape(shape),
        overflowed=overflowed.reshape(shape),
        final=z.reshape(shape),
    )


def classify_array(points: np.ndarray, gens: Sequence[Generator], words: Sequence[Word],
                   params: OrbitParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    点の配列を一括判定する

    Returns:
        (判定コード uint8, 最小脱出反復 int32（脱出なしは -1）)
    """
    points = np.asarray(points, dtype=np.complex128)
    bounded = np.zeros(points.shape, dtype=bool)
    undetermined = np.zeros(points.shape, dtype=bool)
    first_iter = np.full(points.shape, -1, dtype=np.int32)
    for word in words:
        orbit = iterate_word_array(word, gens, points, params)
        escaped = orbit.escape_iter > 0
        bounded |= ~escaped
        if not params.overflow_is_escape:
            undetermined |= orbit.overflowed
        better = escaped & ((first_iter < 0) | (orbit.escape_iter < first_iter))
        first_iter = np.where(better, orbit.escape_iter, first_iter)
    codes = np.full(points.shape, CODE_ESCAPING, dtype=np.uint8)
    codes[undetermined] = CODE_UNDETERMINED
    codes[bounded] = CODE_BOUNDED
    return codes, first_iter


# ---------------------------------------------------------------------------
# 1点用 API
# ---------------------------------------------------------------------------

def apply_word(word: Word, gens: Sequence[Generator], z: complex) -> MaybeComplex:
    """
    ワードを1点に適用する（gens[w[0]] を最初に適用）

    Returns:
        複素数、またはオーバーフロー時は OVERFLOW
    """
    word.validate(len(gens))
    values, overflow = apply_word_array(word, gens, np.array([z], dtype=np.complex128))
    if overflow[0]:
        return OVERFLOW
    return complex(values[0])


def _to_result(orbit: OrbitArrays, params: OrbitParams) -> OrbitResult:
    n = int(orbit.escape_iter[0])
    if n > 0:
        return OrbitResult(
            status=Escaped(iter=n, modulus=float(orbit.modulus[0]), overflowed=bool(orbit.overflowed[0])),
            trace_len=n,
        )
    return OrbitResult(status=MaxedOut(final=complex(orbit.final[0])), trace_len=params.max_iter)


def iterate_word(word: Word, gens: Sequence[Generator], z0: complex, params: OrbitParams) -> OrbitResult:
    """
    ワードが表す元の自己反復で 1点の脱出を判定する

    Returns:
        Escaped（最初に R を超えた反復回数）または MaxedOut（最終値）
    """
    word.validate(len(gens))
    if not cmath.isfinite(z0):
        raise ValueError(f"初期点が有限ではありません: {z0}")
    orbit = iterate_word_array(word, gens, np.array([z0], dtype=np.complex128), params)
    return _to_result(orbit, params)


def classify_point(z: complex, gens: Sequence[Generator], depth: int, params: OrbitParams,
                   word_cap: int = DEFAULT_WORD_CAP, on_budget: str = "raise") -> PointClass:
    """
    長さ depth 以下のすべてのワードで z を判定する

    Args:
        z: 判定する点
        gens: 生成元
        depth: ワード長の上限 L
        params: 脱出判定パラメータ
        word_cap: ワード数の上限
        on_budget: "raise" なら BudgetExceeded を送出、"undetermined" なら Undetermined を返す

    Returns:
        PointClass
    """
    try:
        words = enumerate_words(len(gens), depth, word_cap)
    except BudgetExceeded as e:
        if on_budget == "undetermined":
            return PointClass(verdict=Undetermined(reason=str(e)))
        raise
    per_word: Dict[Word, OrbitResult] = {}
    witness: Optional[Word] = None
    overflow_only = False
    for word in words:
        result = iterate_word(word, gens, z, params)
        per_word[word] = result
        # 証拠は辞書順で最小の有界ワード
        if not result.escaped and (witness is None or word.indices < witness.indices):
            witness = word
        if result.escaped and result.status.overflowed and not params.overflow_is_escape:
            overflow_only = True
    if witness is not None:
        verdict: Verdict = BoundedWitness(word=witness, result=per_word[witness])
    elif overflow_only:
        verdict = Undetermined(reason="オーバーフローのみで脱出したワードがあります")
    else:
        verdict = EscapingAll()
    return PointClass(verdict=verdict, per_word=per_word)


# ---------------------------------------------------------------------------
# 逆像点
# ---------------------------------------------------------------------------

def _affine_coefficients(e: Expr) -> Optional[Tuple[complex, complex]]:
    """e = a*z + b なら (a, b)、そうでなければ None"""
    if isinstance(e, Var):
        return 1 + 0j, 0j
    if isinstance(e, Const):
        return 0j, e.value
    if isinstance(e, Neg):
        inner = _affine_coefficients(e.arg)
        return None if inner is None else (-inner[0], -inner[1])
    if isinstance(e, (Add, Sub)):
        left, right = _affine_coefficients(e.left), _affine_coefficients(e.right)
        if left is None or right is None:
            return None
        sign = 1 if isinstance(e, Add) else -1
        return left[0] + sign * right[0], left[1] + sign * right[1]
    if isinstance(e, Mul):
        left, right = _affine_coefficients(e.left), _affine_coefficients(e.right)
        if left is None or right is None:
            return None
        if left[0] == 0:
            return left[1] * right[0], left[1] * right[1]
        if right[0] == 0:
            return right[1] * left[0], right[1] * left[1]
        return None
    if isinstance(e, Div):
        left, right = _affine_coefficients(e.left), _affine_coefficients(e.right)
        if left is None or right is None or right[0] != 0 or right[1] == 0:
            return None
        return left[0] / right[1], left[1] / right[1]
    return None


def _scaled_exp(e: Expr) -> Optional[Tuple[complex, complex, complex]]:
    """e = λ·exp(a z + b) なら (a, b, λ)"""
    if isinstance(e, Exp):
        coeffs = _affine_coefficients(e.arg)
        if coeffs is None or coeffs[0] == 0:
            return None
        return coeffs[0], coeffs[1], 1 + 0j
    if isinstance(e, Mul):
        for scale, body in ((e.left, e.right), (e.right, e.left)):
            if isinstance(scale, Const) and scale.value != 0:
                inner = _scaled_exp(body)
                if inner is not None:
                    return inner[0], inner[1], inner[2] * scale.value
    if isinstance(e, Neg):
        inner = _scaled_exp(e.arg)
        if inner is not None:
            return inner[0], inner[1], -inner[2]
    return None


def match_exp_affine(e: Expr) -> Optional[Tuple[complex, complex, complex]]:
    """
    e = λ·exp(a z + b) + c の形なら (a, b', c) を返す。λ は b' = b + log λ に吸収する
    """
    candidates = [(e, 0j)]
    if isinstance(e, (Add, Sub)):
        sign = 1 if isinstance(e, Add) else -1
        if isinstance(e.right, Const):
            candidates.append((e.left, sign * e.right.value))
        if isinstance(e.left, Const) and isinstance(e, Add):
            candidates.append((e.right, e.left.value))
    for body, c in candidates:
        scaled = _scaled_exp(body)
        if scaled is not None:
            a, b, lam = scaled
            return a, b + cmath.log(lam), c
    return None


def exp_affine_preimages(f: Generator, target: complex, region: Rectangle) -> List[complex]:
    """
    exp-affine 族の解析的な逆分枝で region 内の逆像点をすべて求める

    z_k = (log(target - c) + 2πik - b) / a

    Raises:
        TemplateMismatch: f が exp-affine 形でない
        EmptyFiber: target = c
    """
    matched = match_exp_affine(f.expr)
    if matched is None:
        raise TemplateMismatch(f"{f.name} は exp(a*z+b)+c の形ではありません")
    a, b, c = matched
    w = complex(target) - c
    if w == 0:
        raise EmptyFiber(f"{f.name}: ターゲット {target} は除外値です")
    log_w = cmath.log(w)
    # a*z + b が取りうる虚部の範囲から k の範囲を決める
    corners = [complex(x, y) for x in (region.x_min, region.x_max) for y in (region.y_min, region.y_max)]
    imag_parts = [(a * corner + b - log_w).imag for corner in corners]
    two_pi = 2 * math.pi
    k_min = math.floor(min(imag_parts) / two_pi) - 1
    k_max = math.ceil(max(imag_parts) / two_pi) + 1
    roots = []
    for k in range(k_min, k_max + 1):
        z = (log_w + two_pi * 1j * k - b) / a
        if region.contains(z):
            roots.append(z)
    return sorted(roots, key=lambda r: (r.imag, r.real))


def _deduplicate(roots: Sequence[complex], distance: float) -> List[complex]:
    unique: List[complex] = []
    for root in sorted(roots, key=lambda r: (r.imag, r.real)):
        if all(abs(root - other) >= distance for other in unique):
            unique.append(root)
    return unique


def newton_preimages(f: Generator, target: complex, region: Rectangle, seed_grid: int = 8,
                     tol: float = 1e-10, max_steps: int = 100) -> List[complex]:
    """
    Newton 法 z ← z - (f(z) - target) / f'(z) で region 内の逆像点を求める

    Args:
        f: 生成元
        target: 目標値
        region: 探索領域（種点は seed_grid × seed_grid のセル中心）
        seed_grid: 1軸あたりの種点数（2以上）
        tol: 残差 |f(root) - target| の許容値
        max_steps: 最大ステップ数

    Returns:
        重複（距離 1e-8 未満）を除いた根のリスト。収束しなかった種点は黙って捨てる
    """
    if tol <= 0 or seed_grid < 2:
        raise ValueError("tol > 0 かつ seed_grid >= 2 が必要です")
    xs = region.x_min + (np.arange(seed_grid) + 0.5) * (region.x_max - region.x_min) / seed_grid
    ys = region.y_min + (np.arange(seed_grid) + 0.5) * (region.y_max - region.y_min) / seed_grid
    z = (xs[np.newaxis, :] + 1j * ys[:, np.newaxis]).ravel()
    alive = np.ones(z.shape, dtype=bool)
    target = complex(target)

    for _ in range(max_steps):
        values, bad_v = evaluate_array(f.expr, z)
        slopes, bad_d = evaluate_array(f.derivative, z)
        with np.errstate(all="ignore"):
            step = (values - target) / slopes
        failed = bad_v | bad_d | ~np.isfinite(step)
        alive &= ~failed
        step = np.where(alive, step, 0)
        z = np.where(alive, z - step, z)
        with np.errstate(all="ignore"):
            small = np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(z))
        if np.all(small | ~alive):
            break

    values, bad = evaluate_array(f.expr, z)
    with np.errstate(all="ignore"):
        residual = np.abs(values - target)
    ok = alive & ~bad & (residual < tol) & region.contains_array(z)
    roots = [complex(r) for r in z[ok]]
    logger.debug("newton_preimages: %d/%d 種点が収束", len(roots), z.size)
    return _deduplicate(roots, 1e-8)
