"""
シーン設定モジュール
JSON 設定ファイルの読み込み・デフォルト値のマージ・検証を担当
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..errors import ConfigParseError, ConfigValidationError, ExpressionSyntaxError, InsufficientSamples
from ..expr import (
    Const, Generator, SAMPLE_SEED, SampleCheckReport, build_shifted_iterate, make_generator,
    parse_expression, verify_commutation, verify_periodicity,
)
from ..grid import Rectangle, SampleGrid
from ..orbit import OrbitParams

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS: Dict[str, float] = {
    "invariance": 0.01,
    "jaccard": 0.85,
    "emptiness": 0.01,
    "containment": 0.0,
    "tower_subset": 0.01,
    "tower_jaccard": 0.9,
    "thinness": 0.5,
    "period_tol": 1e-9,
}

DEFAULT_SCENE: Dict[str, Any] = {
    "description": "",
    "region": [-2.0, 2.0, -2.0, 2.0],
    "width": 512,
    "height": 512,
    "depth": 4,
    "escape_radius": 1e10,
    "max_iter": 100,
    "overflow_is_escape": True,
    "n_max": 3,
    "word_cap": 10_000,
    "thresholds": DEFAULT_THRESHOLDS,
    "abelian": False,
    "expect_empty": False,
    "thin_escaping": False,
    "tower_equality": False,
    "compare": None,
    "seed": SAMPLE_SEED,
    "sample_count": 100,
    "output_dir": "output",
    "tile_rows": 16,
    "notes": "",
}


@dataclass(frozen=True)
class Thresholds:
    invariance: float = 0.01
    jaccard: float = 0.85
    emptiness: float = 0.01
    containment: float = 0.0
    tower_subset: float = 0.01
    tower_jaccard: float = 0.9
    thinness: float = 0.5
    period_tol: float = 1e-9


@dataclass
class SceneConfig:
    """検証済みのシーン設定"""
    name: str
    generators: List[Generator]
    region: Rectangle
    width: int
    height: int
    depth: int
    params: OrbitParams
    n_max: int
    word_cap: int
    thresholds: Thresholds
    description: str = ""
    abelian: bool = False
    expect_empty: bool = False
    thin_escaping: bool = False
    tower_equality: bool = False
    compare: Optional[Tuple[str, str]] = None
    seed: int = SAMPLE_SEED
    sample_count: int = 100
    output_dir: str = "output"
    tile_rows: int = 16
    notes: str = ""
    source: Optional[str] = None
    sample_checks: List[SampleCheckReport] = field(default_factory=list)

    @property
    def grid(self) -> SampleGrid:
        return SampleGrid(self.region, self.width, self.height)

    def generator_index(self, name: str) -> int:
        for index, g in enumerate(self.generators):
            if g.name == name:
                return index
        raise KeyError(name)

    def with_overrides(self, **changes: Any) -> "SceneConfig":
        """寸法や予算を差し替えたコピー（テスト・受け入れ実行用）"""
        clone = copy.copy(self)
        for key, value in changes.items():
            if not hasattr(clone, key):
                raise AttributeError(key)
            setattr(clone, key, value)
        return clone

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "generators": [g.name for g in self.generators],
            "region": self.region.as_list(),
            "width": self.width,
            "height": self.height,
            "depth": self.depth,
            "n_max": self.n_max,
            **self.params.as_dict(),
        }


def _merge_defaults(data: Dict[str, Any]) -> Dict[str, Any]:
    """デフォルト値の上にファイルの値を重ねる"""
    merged = copy.deepcopy(DEFAULT_SCENE)
    for key, value in data.items():
        if key == "thresholds" and isinstance(value, dict):
            merged["thresholds"] = {**DEFAULT_THRESHOLDS, **value}
        else:
            merged[key] = value
    return merged


def parse_constant(value: Any, field_name: str) -> complex:
    """
    設定中の複素定数を読む

    数値、[re, im] の組、または z を含まない式テキスト（例: "2*pi*i/0.3"）
    """
    if isinstance(value, bool):
        raise ConfigValidationError(field_name, "複素定数が必要です")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    if isinstance(value, str):
        try:
            node = parse_expression(value)
        except ExpressionSyntaxError as e:
            raise ConfigValidationError(field_name, str(e)) from e
        if not isinstance(node, Const):
            raise ConfigValidationError(field_name, f"定数式である必要があります: {value!r}")
        return node.value
    raise ConfigValidationError(field_name, f"複素定数として解釈できません: {value!r}")


def _require_int(data: Dict[str, Any], key: str, minimum: int) -> int:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigValidationError(key, f"整数が必要です: {value!r}")
    if value < minimum:
        raise ConfigValidationError(key, f"{minimum} 以上である必要があります: {value}")
    return value


def _require_number(data: Dict[str, Any], key: str) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(key, f"数値が必要です: {value!r}")
    return float(value)


def _build_generators(entries: Any) -> List[Generator]:
    if not isinstance(entries, list) or not entries:
        raise ConfigValidationError("generators", "1つ以上の生成元が必要です")
    generators: List[Generator] = []
    by_name: Dict[str, Generator] = {}
    for index, entry in enumerate(entries):
        where = f"generators[{index}]"
        if not isinstance(entry, dict):
            raise ConfigValidationError(where, "オブジェクトが必要です")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigValidationError(f"{where}.name", "名前が必要です")
        if name in by_name:
            raise ConfigValidationError(f"{where}.name", f"名前が重複しています: {name}")
        bounded_type = bool(entry.get("bounded_type", False))
        period = entry.get("period")
        period_value = None if period is None else parse_constant(period, f"{where}.period")

        if "expression" in entry:
            text = entry["expression"]
            if not isinstance(text, str):
                raise ConfigValidationError(f"{where}.expression", "文字列が必要です")
            try:
                g = make_generator(name, text, bounded_type=bounded_type, period=period_value)
            except ExpressionSyntaxError as e:
                raise ConfigValidationError(f"{where}.expression", str(e)) from e
        elif "shifted_iterate" in entry:
            spec = entry["shifted_iterate"]
            base_name = spec.get("of") if isinstance(spec, dict) else None
            if base_name not in by_name:
                raise ConfigValidationError(f"{where}.shifted_iterate.of", f"先に定義された生成元が必要です: {base_name!r}")
            k = spec.get("k", 1)
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ConfigValidationError(f"{where}.shifted_iterate.k", f"1以上の整数が必要です: {k!r}")
            shift = parse_constant(spec.get("shift", 0), f"{where}.shifted_iterate.shift")
            base = build_shifted_iterate(by_name[base_name], k, shift)
            g = make_generator(
                name,
                base.expr,
                bounded_type=bool(entry.get("bounded_type", base.bounded_type)),
                period=period_value if "period" in entry else base.period,
            )
        else:
            raise ConfigValidationError(where, "expression か shifted_iterate が必要です")
        generators.append(g)
        by_name[name] = g
    return generators


def _build_thresholds(values: Dict[str, Any]) -> Thresholds:
    unknown = set(values) - set(DEFAULT_THRESHOLDS)
    if unknown:
        raise ConfigValidationError(f"thresholds.{sorted(unknown)[0]}", "不明なしきい値です")
    checked = {}
    for key, value in values.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(f"thresholds.{key}", f"数値が必要です: {value!r}")
        if key == "period_tol":
            if value <= 0:
                raise ConfigValidationError("thresholds.period_tol", "正の値が必要です")
        elif not 0.0 <= value <= 1.0:
            raise ConfigValidationError(f"thresholds.{key}", f"0 から 1 の範囲が必要です: {value}")
        checked[key] = float(value)
    return Thresholds(**checked)


def _verify_claims(config: SceneConfig) -> None:
    """宣言された周期・可換性を固定標本で確かめる"""
    tol = config.thresholds.period_tol
    for index, g in enumerate(config.generators):
        if g.period is None:
            continue
        try:
            report = verify_periodicity(g, g.period, config.sample_count, tol, seed=config.seed)
        except InsufficientSamples as e:
            raise ConfigValidationError(f"generators[{index}].period", str(e)) from e
        if not report:
            raise ConfigValidationError(
                f"generators[{index}].period",
                f"周期性の検証に失敗しました（最大偏差 {report.max_deviation:.3g}、許容値 {tol:g}）",
            )
        config.sample_checks.append(report)

    if config.abelian:
        gens = config.generators
        for a in range(len(gens)):
            for b in range(a + 1, len(gens)):
                try:
                    report = verify_commutation(gens[a], gens[b], config.sample_count, tol, seed=config.seed)
                except InsufficientSamples as e:
                    raise ConfigValidationError("abelian", str(e)) from e
                if not report:
                    raise ConfigValidationError(
                        "abelian",
                        f"{gens[a].name} と {gens[b].name} が可換ではありません（最大偏差 {report.max_deviation:.3g}）",
                    )
                config.sample_checks.append(report)


def config_from_dict(data: Dict[str, Any], name: Optional[str] = None, source: Optional[str] = None) -> SceneConfig:
    """
    辞書から SceneConfig を作る

    Args:
        data: 設定値（未指定のキーはデフォルト値）
        name: シーン名（data の name より優先）
        source: 読み込み元のパス

    Returns:
        検証済みの SceneConfig

    Raises:
        ConfigValidationError: 不正な値（フィールド名付き）
    """
    if not isinstance(data, dict):
        raise ConfigValidationError("<root>", "オブジェクトが必要です")
    merged = _merge_defaults(data)
    if "generators" not in merged:
        raise ConfigValidationError("generators", "必須項目です")

    scene_name = name or merged.get("name")
    if not scene_name and source:
        scene_name = os.path.splitext(os.path.basename(source))[0]
    if not isinstance(scene_name, str) or not scene_name:
        raise ConfigValidationError("name", "シーン名が必要です")

    region_values = merged["region"]
    if (not isinstance(region_values, list) or len(region_values) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in region_values)):
        raise ConfigValidationError("region", "[x_min, x_max, y_min, y_max] が必要です")
    try:
        region = Rectangle(*(float(v) for v in region_values))
    except ValueError as e:
        raise ConfigValidationError("region", str(e)) from e

    try:
        params = OrbitParams(
            escape_radius=_require_number(merged, "escape_radius"),
            max_iter=_require_int(merged, "max_iter", 1),
            overflow_is_escape=bool(merged["overflow_is_escape"]),
        )
    except ValueError as e:
        raise ConfigValidationError("escape_radius", str(e)) from e

    compare = merged["compare"]
    generators = _build_generators(merged["generators"])
    names = {g.name for g in generators}
    if compare is not None:
        if not isinstance(compare, list) or len(compare) != 2 or not all(c in names for c in compare):
            raise ConfigValidationError("compare", f"2つの生成元名が必要です: {compare!r}")
        compare = (compare[0], compare[1])

    config = SceneConfig(
        name=scene_name,
        generators=generators,
        region=region,
        width=_require_int(merged, "width", 1),
        height=_require_int(merged, "height", 1),
        depth=_require_int(merged, "depth", 1),
        params=params,
        n_max=_require_int(merged, "n_max", 0),
        word_cap=_require_int(merged, "word_cap", 1),
        thresholds=_build_thresholds(merged["thresholds"]),
        description=str(merged["description"]),
        abelian=bool(merged["abelian"]),
        expect_empty=bool(merged["expect_empty"]),
        thin_escaping=bool(merged["thin_escaping"]),
        tower_equality=bool(merged["tower_equality"]),
        compare=compare,
        seed=_require_int(merged, "seed", 0),
        sample_count=_require_int(merged, "sample_count", 1),
        output_dir=str(merged["output_dir"]),
        tile_rows=_require_int(merged, "tile_rows", 1),
        notes=str(merged["notes"]),
        source=source,
    )
    _verify_claims(config)
    logger.debug("loaded scene %s: %s", config.name, config.summary())
    return config


def load_config(path: str, name: Optional[str] = None) -> SceneConfig:
    """
    JSON 設定ファイルを読み込む

    Raises:
        ConfigParseError: JSON の構文エラー（行:列付き）
        ConfigValidationError: 値の検証エラー
        OSError: ファイルが読めない
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(e.msg, f"{path}:{e.lineno}:{e.colno}") from e
    return config_from_dict(data, name=name, source=path)
