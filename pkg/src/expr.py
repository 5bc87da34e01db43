"""
複素関数式モジュール
半群の生成元を定義する式のパース・評価・記号微分・合成を担当
"""

import math
import re
from dataclasses import dataclass
from functools import singledispatch
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import ExpressionDivisionByZero, ExpressionSyntaxError, InsufficientSamples


class _Overflow:
    """評価中に非有限値が現れたことを表すマーカー"""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "OVERFLOW"

    def __reduce__(self):
        return (_Overflow, ())


OVERFLOW = _Overflow()

MaybeComplex = Union[complex, _Overflow]


# 式ノード（すべてイミュータブル）

@dataclass(frozen=True)
class Var:
    """変数 z"""


@dataclass(frozen=True)
class Const:
    value: complex

    def __post_init__(self):
        object.__setattr__(self, "value", complex(self.value))


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Exp:
    arg: "Expr"


@dataclass(frozen=True)
class Sin:
    arg: "Expr"


@dataclass(frozen=True)
class Cos:
    arg: "Expr"


Expr = Union[Var, Const, Add, Sub, Mul, Div, Neg, Exp, Sin, Cos]

BINARY_NODES = (Add, Sub, Mul, Div)
UNARY_NODES = (Neg, Exp, Sin, Cos)
FUNCTIONS = {"exp": Exp, "sin": Sin, "cos": Cos}


@dataclass(frozen=True)
class Generator:
    """
    半群の生成元

    bounded_type と period は利用者が宣言するメタデータ。
    period は verify_periodicity で検証してから使用する。
    """
    name: str
    expr: Expr
    derivative: Expr
    bounded_type: bool = False
    period: Optional[complex] = None


def make_generator(name: str, expr: Union[str, Expr], bounded_type: bool = False,
                   period: Optional[complex] = None) -> Generator:
    """
    式（テキストまたはAST）から生成元を作成し、導関数をキャッシュする

    Args:
        name: 生成元のラベル
        expr: 式テキストまたは Expr
        bounded_type: 有界型（Eremenko-Lyubich クラス）の宣言
        period: 宣言された周期

    Returns:
        Generator
    """
    if isinstance(expr, str):
        expr = parse_expression(expr)
    return Generator(
        name=name,
        expr=expr,
        derivative=differentiate(expr),
        bounded_type=bounded_type,
        period=None if period is None else complex(period),
    )


# ---------------------------------------------------------------------------
# パーサー
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# (kind, text, offset)
Token = Tuple[str, str, int]


def _tokenize(text: str) -> List[Token]:
    """字句解析。オフセットは UTF-8 のバイト位置"""
    tokens: List[Token] = []
    i = 0

    def byte_offset(index: int) -> int:
        return len(text[:index].encode("utf-8"))

    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            m = _NUMBER_RE.match(text, i)
            end = m.end()
            # 直後の単独の i は虚数単位
            if end < len(text) and text[end] == "i" and not (
                    end + 1 < len(text) and (text[end + 1].isalnum() or text[end + 1] == "_")):
                tokens.append(("IMAG", text[i:end], byte_offset(i)))
                i = end + 1
            else:
                tokens.append(("NUM", text[i:end], byte_offset(i)))
                i = end
            continue
        if ch.isalpha() or ch == "_":
            m = _IDENT_RE.match(text, i)
            tokens.append(("IDENT", m.group(0), byte_offset(i)))
            i = m.end()
            continue
        if ch in "+-*/":
            tokens.append(("OP", ch, byte_offset(i)))
        elif ch == "(":
            tokens.append(("LPAREN", ch, byte_offset(i)))
        elif ch == ")":
            tokens.append(("RPAREN", ch, byte_offset(i)))
        else:
            raise ExpressionSyntaxError(f"不正な文字 '{ch}'", byte_offset(i))
        i += 1
    tokens.append(("EOF", "", byte_offset(len(text))))
    return tokens


def _literal(text: str, offset: int) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ExpressionSyntaxError(f"有限でない数値リテラル '{text}'", offset)
    return value


def _fold_binary(node_type, left: Expr, right: Expr) -> Expr:
    """定数同士の四則演算を畳み込む。ゼロ除算・非有限になる場合はそのまま残す"""
    if isinstance(left, Const) and isinstance(right, Const):
        a, b = left.value, right.value
        if node_type is Add:
            value = a + b
        elif node_type is Sub:
            value = a - b
        elif node_type is Mul:
            value = a * b
        else:
            if b == 0:
                return node_type(left, right)
            value = a / b
        if math.isfinite(value.real) and math.isfinite(value.imag):
            return Const(value)
    return node_type(left, right)


class _Parser:
    """
    再帰下降パーサー

    優先順位（低い順）:
    1. + - （左結合）
    2. * / （左結合）
    3. 単項 -
    4. 数値・定数・z・関数呼び出し・括弧
    """

    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        if token[0] != "EOF":
            self.pos += 1
        return token

    def parse(self) -> Expr:
        if self.current[0] == "EOF":
            raise ExpressionSyntaxError("式が空です", self.current[2])
        expr = self.parse_sum()
        kind, text, offset = self.current
        if kind == "RPAREN":
            raise ExpressionSyntaxError("対応する '(' がない ')'", offset)
        if kind != "EOF":
            raise ExpressionSyntaxError(f"予期しないトークン '{text}'", offset)
        return expr

    def parse_sum(self) -> Expr:
        left = self.parse_product()
        while self.current[0] == "OP" and self.current[1] in "+-":
            op = self.advance()[1]
            right = self.parse_product()
            left = _fold_binary(Add if op == "+" else Sub, left, right)
        return left

    def parse_product(self) -> Expr:
        left = self.parse_unary()
        while self.current[0] == "OP" and self.current[1] in "*/":
            op = self.advance()[1]
            right = self.parse_unary()
            left = _fold_binary(Mul if op == "*" else Div, left, right)
        return left

    def parse_unary(self) -> Expr:
        if self.current[0] == "OP" and self.current[1] == "-":
            self.advance()
            arg = self.parse_unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Neg(arg)
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        kind, text, offset = self.advance()
        if kind == "NUM":
            return Const(_literal(text, offset))
        if kind == "IMAG":
            return Const(complex(0.0, _literal(text, offset)))
        if kind == "IDENT":
            if text == "z":
                return Var()
            if text == "i":
                return Const(1j)
            if text == "pi":
                return Const(math.pi)
            if text in FUNCTIONS:
                self.expect("LPAREN", f"'{text}' の後に '(' が必要です")
                arg = self.parse_sum()
                self.expect("RPAREN", "')' が閉じられていません")
                return FUNCTIONS[text](arg)
            raise ExpressionSyntaxError(f"未知の識別子 '{text}'", offset)
        if kind == "LPAREN":
            inner = self.parse_sum()
            self.expect("RPAREN", "')' が閉じられていません")
            return inner
        if kind == "EOF":
            raise ExpressionSyntaxError("予期しない入力の終わり", offset)
        raise ExpressionSyntaxError(f"予期しないトークン '{text}'", offset)

    def expect(self, kind: str, message: str) -> Token:
        if self.current[0] != kind:
            raise ExpressionSyntaxError(message, self.current[2])
        return self.advance()


def parse_expression(text: str) -> Expr:
    """
    式テキストをASTに変換する

    Args:
        text: z, 複素リテラル（a+bi）, pi, i, 四則演算, 単項マイナス, 括弧,
              exp/sin/cos からなる式

    Returns:
        Expr（定数部分式は畳み込み済み）

    Raises:
        ExpressionSyntaxError: 括弧の不一致・未知の識別子・空入力
    """
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# シリアライザー
# ---------------------------------------------------------------------------

def _format_real(x: float) -> str:
    if x < 0:
        return f"(-{-x!r})"
    return repr(abs(x)) if x == 0 else repr(x)


def _format_complex(c: complex) -> str:
    if c.imag == 0:
        return _format_real(c.real)
    imag = f"{abs(c.imag)!r}i"
    if c.imag < 0:
        imag = f"(-{imag})"
    if c.real == 0:
        return f"({imag})"
    return f"({_format_real(c.real)} + {imag})"


@singledispatch
def to_text(e) -> str:
    """完全に括弧付けされた正規形テキストを返す"""
    raise TypeError(f"式ノードではありません: {type(e).__name__}")


@to_text.register(Var)
def _(e):
    return "z"


@to_text.register(Const)
def _(e):
    return _format_complex(e.value)


_OP_SYMBOLS = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


@to_text.register(Add)
@to_text.register(Sub)
@to_text.register(Mul)
@to_text.register(Div)
def _(e):
    return f"({to_text(e.left)} {_OP_SYMBOLS[type(e)]} {to_text(e.right)})"


@to_text.register(Neg)
def _(e):
    return f"(-{to_text(e.arg)})"


@to_text.register(Exp)
@to_text.register(Sin)
@to_text.register(Cos)
def _(e):
    return f"{type(e).__name__.lower()}({to_text(e.arg)})"


# ---------------------------------------------------------------------------
# 評価
# ---------------------------------------------------------------------------

@singledispatch
def _evaluate(e, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    raise TypeError(f"式ノードではありません: {type(e).__name__}")


def _flag(values: np.ndarray, *bad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    flags = ~np.isfinite(values)
    for b in bad:
        flags |= b
    return values, flags


@_evaluate.register(Var)
def _(e, z):
    return z, np.zeros(z.shape, dtype=bool)


@_evaluate.register(Const)
def _(e, z):
    return np.full(z.shape, e.value, dtype=np.complex128), np.zeros(z.shape, dtype=bool)


@_evaluate.register(Add)
def _(e, z):
    (a, bad_a), (b, bad_b) = _evaluate(e.left, z), _evaluate(e.right, z)
    return _flag(a + b, bad_a, bad_b)


@_evaluate.register(Sub)
def _(e, z):
    (a, bad_a), (b, bad_b) = _evaluate(e.left, z), _evaluate(e.right, z)
    return _flag(a - b, bad_a, bad_b)


@_evaluate.register(Mul)
def _(e, z):
    (a, bad_a), (b, bad_b) = _evaluate(e.left, z), _evaluate(e.right, z)
    return _flag(a * b, bad_a, bad_b)


@_evaluate.register(Div)
def _(e, z):
    (a, bad_a), (b, bad_b) = _evaluate(e.left, z), _evaluate(e.right, z)
    # 分母ゼロの要素だけをフラグにする（配列全体は止めない）
    zero = (b == 0) & ~bad_b
    quotient = np.where(zero, np.nan, a / np.where(zero, 1, b))
    return _flag(quotient, bad_a, bad_b, zero)


@_evaluate.register(Neg)
def _(e, z):
    a, bad = _evaluate(e.arg, z)
    return -a, bad


_UFUNCS = {Exp: np.exp, Sin: np.sin, Cos: np.cos}


@_evaluate.register(Exp)
@_evaluate.register(Sin)
@_evaluate.register(Cos)
def _(e, z):
    a, bad = _evaluate(e.arg, z)
    return _flag(_UFUNCS[type(e)](a), bad)


def evaluate_array(e: Expr, z) -> Tuple[np.ndarray, np.ndarray]:
    """
    配列上で式を評価する

    Args:
        e: 式
        z: 複素数の配列（任意形状）

    Returns:
        (値の配列, オーバーフローフラグの配列)。途中で非有限値が出た要素と分母がゼロになった要素は True
    """
    z = np.asarray(z, dtype=np.complex128)
    with np.errstate(all="ignore"):
        return _evaluate(e, z)


def eval_expr(e: Expr, z: complex) -> MaybeComplex:
    """
    1点で式を評価する

    Returns:
        複素数、または途中で非有限値が現れた場合は OVERFLOW

    Raises:
        ExpressionDivisionByZero: 分母がゼロ
    """
    point = np.array([z], dtype=np.complex128)
    values, bad = evaluate_array(e, point)
    if bad[0]:
        if _zero_denominator(e, point):
            raise ExpressionDivisionByZero(f"ゼロ除算: {to_text(e)} (z = {z})")
        return OVERFLOW
    return complex(values[0])


def _zero_denominator(e: Expr, point: np.ndarray) -> bool:
    """e のどこかの Div の分母が point で有限のゼロになるか"""
    if isinstance(e, Div):
        den, bad = evaluate_array(e.right, point)
        if not bad[0] and den[0] == 0:
            return True
    if isinstance(e, BINARY_NODES):
        return _zero_denominator(e.left, point) or _zero_denominator(e.right, point)
    if isinstance(e, (Neg, Exp, Sin, Cos)):
        return _zero_denominator(e.arg, point)
    return False


# ---------------------------------------------------------------------------
# 記号微分
# ---------------------------------------------------------------------------

ZERO = Const(0)
ONE = Const(1)


def _is_const(e: Expr, value: complex) -> bool:
    return isinstance(e, Const) and e.value == value


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return _neg(b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    return Div(a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return ZERO if a.value == 0 else Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


@singledispatch
def differentiate(e) -> Expr:
    """
    構造規則による d/dz。0 と 1 の吸収は適用済み

    Args:
        e: 式

    Returns:
        導関数の式
    """
    raise TypeError(f"式ノードではありません: {type(e).__name__}")


@differentiate.register(Var)
def _(e):
    return ONE


@differentiate.register(Const)
def _(e):
    return ZERO


@differentiate.register(Add)
def _(e):
    return _add(differentiate(e.left), differentiate(e.right))


@differentiate.register(Sub)
def _(e):
    return _sub(differentiate(e.left), differentiate(e.right))


@differentiate.register(Mul)
def _(e):
    # 積の微分
    return _add(_mul(differentiate(e.left), e.right), _mul(e.left, differentiate(e.right)))


@differentiate.register(Div)
def _(e):
    # 商の微分
    numerator = _sub(_mul(differentiate(e.left), e.right), _mul(e.left, differentiate(e.right)))
    return _div(numerator, Mul(e.right, e.right))


@differentiate.register(Neg)
def _(e):
    return _neg(differentiate(e.arg))


@differentiate.register(Exp)
def _(e):
    return _mul(differentiate(e.arg), e)


@differentiate.register(Sin)
def _(e):
    return _mul(differentiate(e.arg), Cos(e.arg))


@differentiate.register(Cos)
def _(e):
    return _mul(differentiate(e.arg), _neg(Sin(e.arg)))


# ---------------------------------------------------------------------------
# 合成
# ---------------------------------------------------------------------------

@singledispatch
def compose(outer, inner: Expr) -> Expr:
    """outer のすべての Var を inner で置き換える（outer ∘ inner）"""
    raise TypeError(f"式ノードではありません: {type(outer).__name__}")


@compose.register(Var)
def _(outer, inner):
    return inner


@compose.register(Const)
def _(outer, inner):
    return outer


@compose.register(Add)
@compose.register(Sub)
@compose.register(Mul)
@compose.register(Div)
def _(outer, inner):
    return type(outer)(compose(outer.left, inner), compose(outer.right, inner))


@compose.register(Neg)
@compose.register(Exp)
@compose.register(Sin)
@compose.register(Cos)
def _(outer, inner):
    return type(outer)(compose(outer.arg, inner))


def format_constant(c: complex) -> str:
    """名前生成用の短い表記"""
    if c.imag == 0:
        return f"{c.real:.6g}"
    if c.real == 0:
        return f"{c.imag:.6g}i"
    return f"({c.real:.6g}{c.imag:+.6g}i)"


def build_shifted_iterate(f: Generator, k: int, p: complex) -> Generator:
    """
    f の k 回合成に定数 p を加えた生成元 g = f^k + p を作る

    Args:
        f: 元の生成元
        k: 合成回数（1以上）
        p: 加える定数

    Returns:
        新しい Generator（有界型・周期の宣言は f から引き継ぐ）
    """
    if k < 1:
        raise ValueError(f"k は1以上である必要があります: {k}")
    p = complex(p)
    body = f.expr
    for _ in range(k - 1):
        body = compose(f.expr, body)
    if p != 0:
        body = Add(body, Const(p))
    name = f.name if k == 1 else f"{f.name}^{k}"
    if p != 0:
        name = f"{name}+{format_constant(p)}"
    return make_generator(name, body, bounded_type=f.bounded_type, period=f.period)


# ---------------------------------------------------------------------------
# 標本検証
# ---------------------------------------------------------------------------

SAMPLE_SEED = 20240611
SAMPLE_RADIUS = 10.0


@dataclass(frozen=True)
class SampleCheckReport:
    """周期性・可換性の標本検証結果"""
    check_name: str
    passed: bool
    tested: int
    skipped: int
    max_deviation: float
    tol: float

    def __bool__(self) -> bool:
        return self.passed


def sample_points(count: int, radius: float = SAMPLE_RADIUS, seed: int = SAMPLE_SEED) -> np.ndarray:
    """単位正方形の固定疑似乱数列を |z| <= radius に縮尺した標本点"""
    rng = np.random.default_rng(seed)
    box = rng.uniform(-1.0, 1.0, size=(count, 2))
    scale = radius / math.sqrt(2.0)
    return (box[:, 0] + 1j * box[:, 1]) * scale


def _summarize(check_name: str, deviation: np.ndarray, valid: np.ndarray, tol: float) -> SampleCheckReport:
    tested = int(valid.sum())
    if tested == 0:
        raise InsufficientSamples(f"{check_name}: すべての標本点でオーバーフローしました")
    max_dev = float(deviation[valid].max())
    return SampleCheckReport(
        check_name=check_name,
        passed=bool(np.all(deviation[valid] < tol)),
        tested=tested,
        skipped=int(valid.size - tested),
        max_deviation=max_dev,
        tol=tol,
    )


def verify_periodicity(f: Generator, p: complex, sample_count: int = 100, tol: float = 1e-9,
                       seed: int = SAMPLE_SEED) -> SampleCheckReport:
    """
    f(z+p) = f(z) を固定標本上で検証する

    Args:
        f: 生成元
        p: 周期の候補
        sample_count: 標本数
        tol: 絶対誤差の許容値
        seed: 標本列のシード

    Returns:
        SampleCheckReport（真偽値として評価可能）

    Raises:
        InsufficientSamples: すべての標本でオーバーフロー
    """
    if sample_count < 1 or tol <= 0:
        raise ValueError("sample_count >= 1 かつ tol > 0 が必要です")
    z = sample_points(sample_count, seed=seed)
    shifted, bad_shifted = evaluate_array(f.expr, z + complex(p))
    base, bad_base = evaluate_array(f.expr, z)
    valid = ~(bad_shifted | bad_base)
    with np.errstate(all="ignore"):
        deviation = np.abs(shifted - base)
    return _summarize(f"periodicity[{f.name}]", deviation, valid, tol)


def verify_commutation(f: Generator, g: Generator, sample_count: int = 100, tol: float = 1e-9,
                       seed: int = SAMPLE_SEED) -> SampleCheckReport:
    """
    f∘g = g∘f を固定標本上で検証する（相対誤差）

    Raises:
        InsufficientSamples: すべての標本でオーバーフロー
    """
    if sample_count < 1 or tol <= 0:
        raise ValueError("sample_count >= 1 かつ tol > 0 が必要です")
    z = sample_points(sample_count, seed=seed)
    g_z, bad_g = evaluate_array(g.expr, z)
    f_z, bad_f = evaluate_array(f.expr, z)
    fg, bad_fg = evaluate_array(f.expr, np.where(bad_g, 0, g_z))
    gf, bad_gf = evaluate_array(g.expr, np.where(bad_f, 0, f_z))
    valid = ~(bad_g | bad_f | bad_fg | bad_gf)
    with np.errstate(all="ignore"):
        deviation = np.abs(fg - gf) / np.maximum(1.0, np.abs(fg))
    return _summarize(f"commutation[{f.name},{g.name}]", deviation, valid, tol)
