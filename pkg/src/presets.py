"""
プリセット管理
presets/ ディレクトリの組み込みシーン設定を列挙・読み込み
"""

import os
from pathlib import Path
from typing import List, Optional

from .errors import ConfigValidationError
from .utils.config import SceneConfig, load_config

PRESET_DIR_ENV = "ESCAPE_LAB_PRESET_DIR"
BUILTIN_PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


def preset_dir() -> Path:
    """環境変数 ESCAPE_LAB_PRESET_DIR があればそちらを優先"""
    override = os.getenv(PRESET_DIR_ENV)
    return Path(override) if override else BUILTIN_PRESET_DIR


def list_presets(directory: Optional[Path] = None) -> List[str]:
    """プリセット名の一覧（名前順）"""
    directory = directory or preset_dir()
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.glob("*.json"))


def preset_path(name: str, directory: Optional[Path] = None) -> Path:
    directory = directory or preset_dir()
    path = directory / f"{name}.json"
    if not path.is_file():
        available = ", ".join(list_presets(directory))
        raise ConfigValidationError("preset", f"不明なプリセットです: {name}（利用可能: {available}）")
    return path


def load_preset(name: str, directory: Optional[Path] = None) -> SceneConfig:
    return load_config(str(preset_path(name, directory)), name=name)
