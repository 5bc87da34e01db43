"""
escape-lab エントリーポイント
超越的半群の脱出集合を近似・検証するコマンドラインツール
"""

import sys

from dotenv import load_dotenv

# 環境変数を読み込み（ESCAPE_LAB_THREADS など）
load_dotenv()

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
