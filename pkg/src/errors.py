"""
例外定義モジュール
エンジン全体で使用する例外クラスをまとめて定義
"""

from typing import Optional


class EscapeLabError(Exception):
    """すべてのエンジン例外の基底クラス"""


class ExpressionSyntaxError(EscapeLabError, ValueError):
    """式の構文エラー（バイトオフセット付き）"""

    def __init__(self, message: str, offset: int):
        self.message = message
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class ExpressionDivisionByZero(EscapeLabError, ZeroDivisionError):
    """Div ノードの分母がゼロになった"""


class InsufficientSamples(EscapeLabError):
    """すべてのサンプル点でオーバーフローが発生した"""


class BudgetExceeded(EscapeLabError):
    """ワード数が上限を超えた"""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"ワード数 {count} が上限 {cap} を超えています")


class TemplateMismatch(EscapeLabError):
    """生成元が exp-affine テンプレートに一致しない"""


class EmptyFiber(EscapeLabError):
    """ターゲットが除外値（漸近値）に一致し、逆像が空"""


class GridMismatch(EscapeLabError):
    """異なるグリッド上のマスク同士を演算しようとした"""


class ConfigParseError(EscapeLabError):
    """設定ファイルの構文エラー（位置情報付き）"""

    def __init__(self, message: str, location: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class ConfigValidationError(EscapeLabError):
    """設定値の検証エラー（フィールド名付き）"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ImageIOError(EscapeLabError, OSError):
    """出力ファイルの書き込みに失敗した"""

    def __init__(self, path: str, cause: Optional[BaseException] = None):
        self.path = path
        self.cause = cause
        detail = f": {cause}" if cause else ""
        super().__init__(f"ファイルの書き込みに失敗しました {path}{detail}")
