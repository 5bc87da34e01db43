"""
コマンドラインインターフェース
設定の読み込みとサブコマンド（classify / construct-e / construct-f / verify / compare / render / preset-list）の実行
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

from .errors import ConfigValidationError, EscapeLabError, ImageIOError
from .field import (
    EscapeField, Mask, compute_escape_field, construct_E, construct_F, mask_escaping,
    read_escape_field, write_escape_field, write_mask,
)
from .imaging import get_palette, output_name, render_field, render_mask, write_image
from .presets import list_presets, load_preset
from .utils.config import SceneConfig, load_config
from .utils.export_utils import ReportExporter
from .utils.image_io import SUPPORTED_FORMATS, atomic_write_bytes
from .utils.monitoring import configure_logging, get_monitoring, log_action, log_error
from .verify import (
    VerificationReport, check_backward_invariance, check_containment, check_emptiness, check_equality,
    check_forward_invariance, check_mask_invariance, check_thinness, compare_masks, extract_boundary,
    summarize,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("classify", "construct-e", "construct-f", "verify", "compare", "render", "preset-list")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


@dataclass
class RunFlags:
    """サブコマンド共通のオプション"""
    threads: Optional[int] = None
    out: Optional[str] = None
    format: str = "ppm"
    report: Optional[str] = None
    palette: str = "escape-time"
    render: bool = False
    input: Optional[str] = None
    pair: Optional[Sequence[str]] = None

    def output_dir(self, config: SceneConfig) -> str:
        return self.out or config.output_dir


def _path(config: SceneConfig, flags: RunFlags, kind: str, extension: str) -> str:
    return os.path.join(flags.output_dir(config), output_name(config.name, kind, config.grid, extension))


def _field_for(config: SceneConfig, flags: RunFlags, generators=None) -> EscapeField:
    return compute_escape_field(
        generators or config.generators, config.grid, config.depth, config.params,
        threads=flags.threads, word_cap=config.word_cap, tile_rows=config.tile_rows,
    )


def _single_generator_mask(config: SceneConfig, flags: RunFlags, index: int) -> Mask:
    """⟨f_i⟩ の脱出集合 I(f_i)。ワード f_i^j（j <= L）は S のワードの部分集合"""
    g = config.generators[index]
    mask = mask_escaping(_field_for(config, flags, [g]))
    mask.label = f"I({g.name})"
    return mask


# ---------------------------------------------------------------------------
# サブコマンド
# ---------------------------------------------------------------------------

def _run_classify(config: SceneConfig, flags: RunFlags) -> int:
    escape_field = _field_for(config, flags)
    field_path = _path(config, flags, "field", "escf")
    write_escape_field(escape_field, field_path)
    written = [field_path]
    if flags.render:
        image_path = _path(config, flags, "field", flags.format)
        write_image(render_field(escape_field, get_palette(flags.palette)), image_path, flags.format)
        written.append(image_path)
    for path in written:
        print(path)
    return EXIT_OK


def _run_construct(config: SceneConfig, flags: RunFlags, letter: str) -> int:
    build = construct_E if letter == "E" else construct_F
    tower = build(
        config.generators, config.grid, config.depth, config.n_max, config.params,
        threads=flags.threads, word_cap=config.word_cap, tile_rows=config.tile_rows,
    )
    written = []
    for n, level in enumerate(tower.levels):
        path = _path(config, flags, f"{letter}{n}", "pbm")
        write_mask(level, path)
        written.append(path)
    final_path = _path(config, flags, letter, "pbm")
    write_mask(tower.final, final_path)
    written.append(final_path)
    if flags.render:
        image_path = _path(config, flags, letter, flags.format)
        write_image(render_mask(tower.final), image_path, flags.format)
        written.append(image_path)

    summary = {
        "scene": config.name,
        "label": tower.label,
        "config": config.summary(),
        "level_counts": [level.count() for level in tower.levels],
        "final_count": tower.final.count(),
        "spills": tower.spills,
    }
    summary_path = _path(config, flags, f"{letter}-tower", "json")
    atomic_write_bytes(summary_path, json.dumps(summary, indent=2, ensure_ascii=False).encode("utf-8"))
    written.append(summary_path)
    for path in written:
        print(path)
    return EXIT_OK


def collect_reports(config: SceneConfig, flags: RunFlags) -> Dict[str, Any]:
    """
    設定が宣言する仮定に応じたチェックをすべて実行する

    Returns:
        {"reports": [VerificationReport...], "extra": {...}}
    """
    t = config.thresholds
    gens = config.generators
    escape_field = _field_for(config, flags)
    escaping = mask_escaping(escape_field)
    reports: List[VerificationReport] = []

    for index in range(len(gens)):
        if len(gens) == 1:
            # 生成元が1つなら S = ⟨f⟩ で I(S) そのもの
            single = Mask(config.grid, escaping.bits.copy(), label=f"I({gens[0].name})")
        else:
            single = _single_generator_mask(config, flags, index)
        reports.append(check_containment(
            escaping, single, t.containment, check_name=f"containment[I(S),I({gens[index].name})]",
        ))

    reports.extend(check_forward_invariance(escape_field, gens, config.params, t.invariance,
                                            flags.threads, config.word_cap))
    reports.extend(check_backward_invariance(escape_field, gens, config.params, t.invariance,
                                             abelian=config.abelian, threads=flags.threads,
                                             word_cap=config.word_cap))
    reports.append(check_emptiness(escape_field, t.emptiness, informational=not config.expect_empty))

    pair = tuple(flags.pair) if flags.pair else config.compare
    if pair:
        left = _single_generator_mask(config, flags, config.generator_index(pair[0]))
        right = _single_generator_mask(config, flags, config.generator_index(pair[1]))
        reports.append(check_equality(left, right, t.jaccard))

    tower_args = dict(threads=flags.threads, word_cap=config.word_cap, tile_rows=config.tile_rows)
    e_tower = construct_E(gens, config.grid, config.depth, config.n_max, config.params, **tower_args)
    f_tower = construct_F(gens, config.grid, config.depth, config.n_max, config.params, **tower_args)
    e_mask, f_mask = e_tower.final, f_tower.final
    reports.append(check_containment(e_mask, e_tower.levels[0], 0.0, check_name="tower[E⊆E_0]"))
    reports.append(check_containment(f_mask, f_tower.levels[0], 0.0, check_name="tower[F⊆F_0]"))
    reports.append(check_containment(f_mask, e_mask, 0.0, check_name="tower[F⊆E]"))
    reports.append(check_containment(e_mask, f_mask, t.tower_subset, check_name="tower[E⊆F]"))
    tower_equality = check_equality(f_mask, escaping, t.tower_jaccard)
    tower_equality.informational = not config.tower_equality
    reports.append(tower_equality)
    reports.extend(check_mask_invariance(e_mask, gens, "forward", t.invariance, informational=True))
    reports.extend(check_mask_invariance(e_mask, gens, "backward", t.invariance, informational=True))

    if all(g.bounded_type for g in gens):
        thinness = check_thinness(escaping, t.thinness)
        thinness.informational = not config.thin_escaping
        reports.append(thinness)

    boundary = extract_boundary(escaping)
    extra = {
        "sample_checks": [dataclasses.asdict(r) for r in config.sample_checks],
        "diagnostics": {
            "escaping_pixels": escaping.count(),
            "boundary_pixels": boundary.count(),
            "E_levels": [m.count() for m in e_tower.levels],
            "F_levels": [m.count() for m in f_tower.levels],
            "E_vs_F": compare_masks(e_mask, f_mask).to_dict(),
        },
    }
    return {"reports": reports, "extra": extra}


def _write_reports(config: SceneConfig, flags: RunFlags, reports: List[VerificationReport],
                   extra: Optional[Dict[str, Any]] = None) -> None:
    exporter = ReportExporter(config.name, config.summary())
    documents = [r.to_dict() for r in reports]
    json_path = flags.report or os.path.join(flags.output_dir(config), f"{config.name}-reports.json")
    csv_path = os.path.splitext(json_path)[0] + ".csv"
    for path in exporter.write(documents, json_path, csv_path, extra):
        print(path)
    sys.stdout.write(exporter.create_summary_report(documents))


def _run_verify(config: SceneConfig, flags: RunFlags) -> int:
    collected = collect_reports(config, flags)
    reports = collected["reports"]
    _write_reports(config, flags, reports, collected["extra"])
    return EXIT_OK if summarize(reports)["passed"] else EXIT_CHECK_FAILED


def _run_compare(config: SceneConfig, flags: RunFlags) -> int:
    pair = tuple(flags.pair) if flags.pair else config.compare
    if not pair:
        raise ConfigValidationError("compare", "比較する2つの生成元が設定されていません（--pair で指定可能）")
    left = _single_generator_mask(config, flags, config.generator_index(pair[0]))
    right = _single_generator_mask(config, flags, config.generator_index(pair[1]))
    report = check_equality(left, right, config.thresholds.jaccard)
    _write_reports(config, flags, [report], {"comparison": compare_masks(left, right).to_dict()})
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _run_render(config: SceneConfig, flags: RunFlags) -> int:
    source = flags.input or _path(config, flags, "field", "escf")
    try:
        escape_field = read_escape_field(source, config.grid, config.params, config.depth,
                                         tuple(g.name for g in config.generators))
    except OSError as e:
        raise ImageIOError(source, e) from e
    image_path = _path(config, flags, "field", flags.format)
    write_image(render_field(escape_field, get_palette(flags.palette)), image_path, flags.format)
    print(image_path)
    return EXIT_OK


def run_subcommand(name: str, config: Optional[SceneConfig], flags: RunFlags) -> int:
    """
    サブコマンドを実行して終了ステータスを返す

    Args:
        name: サブコマンド名
        config: 検証済みの設定（preset-list では None）
        flags: 共通オプション

    Returns:
        0 はすべてのチェックに合格、1 はチェック失敗
    """
    if name == "preset-list":
        for preset in list_presets():
            print(preset)
        return EXIT_OK
    if config is None:
        raise ValueError(f"{name} には設定が必要です")
    log_action(name, {"scene": config.name, **config.summary(), "threads": flags.threads})
    if name == "classify":
        return _run_classify(config, flags)
    if name == "construct-e":
        return _run_construct(config, flags, "E")
    if name == "construct-f":
        return _run_construct(config, flags, "F")
    if name == "verify":
        return _run_verify(config, flags)
    if name == "compare":
        return _run_compare(config, flags)
    if name == "render":
        return _run_render(config, flags)
    raise ValueError(f"不明なサブコマンドです: {name}")


# ---------------------------------------------------------------------------
# 引数処理
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--preset", help="組み込みプリセット名")
    source.add_argument("--config", help="シーン設定 JSON のパス")
    common.add_argument("--threads", type=int, default=None,
                        help="ワーカー数（省略時は ESCAPE_LAB_THREADS、0 以下は CPU 数）")
    common.add_argument("--out", help="出力ディレクトリ（省略時は設定の output_dir）")
    common.add_argument("--format", choices=SUPPORTED_FORMATS, default="ppm", help="画像形式")
    common.add_argument("--report", help="レポート JSON の出力先")
    common.add_argument("--palette", default="escape-time", help="配色（escape-time / gray）")
    common.add_argument("--render", action="store_true", help="画像も出力する")
    common.add_argument("--input", help="render で読むフィールドファイル")
    common.add_argument("--pair", nargs=2, metavar="NAME", help="compare する生成元の名前")
    common.add_argument("--width", type=int, help="グリッド幅の上書き")
    common.add_argument("--height", type=int, help="グリッド高さの上書き")
    common.add_argument("--depth", type=int, help="ワード長の上限 L の上書き")
    common.add_argument("--max-iter", type=int, help="反復回数 N の上書き")
    common.add_argument("--n-max", type=int, help="塔の段数の上書き")
    common.add_argument("--log-file", help="JSON 行ログの出力先")
    common.add_argument("--verbose", "-v", action="store_true", help="デバッグログを表示")

    parser = argparse.ArgumentParser(
        prog="escape-lab",
        description="超越的半群の脱出集合をピクセル単位で近似・検証する",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def _apply_overrides(config: SceneConfig, args: argparse.Namespace) -> SceneConfig:
    changes: Dict[str, Any] = {}
    for key in ("width", "height", "depth", "n_max"):
        value = getattr(args, key)
        if value is not None:
            if value < (0 if key == "n_max" else 1):
                raise ConfigValidationError(key, f"不正な値です: {value}")
            changes[key] = value
    if args.max_iter is not None:
        try:
            changes["params"] = dataclasses.replace(config.params, max_iter=args.max_iter)
        except ValueError as e:
            raise ConfigValidationError("max_iter", str(e)) from e
    return config.with_overrides(**changes) if changes else config


def _load(args: argparse.Namespace) -> Optional[SceneConfig]:
    if args.command == "preset-list":
        return None
    if args.preset:
        config = load_preset(args.preset)
    elif args.config:
        try:
            config = load_config(args.config)
        except OSError as e:
            raise ImageIOError(args.config, e) from e
    else:
        raise ConfigValidationError("--preset/--config", "どちらかの指定が必要です")
    return _apply_overrides(config, args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI エントリーポイント"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    if args.log_file:
        get_monitoring().set_log_file(args.log_file)

    flags = RunFlags(
        threads=args.threads,
        out=args.out,
        format=args.format,
        report=args.report,
        palette=args.palette,
        render=args.render,
        input=args.input,
        pair=args.pair,
    )
    try:
        config = _load(args)
        return run_subcommand(args.command, config, flags)
    except (ImageIOError, OSError) as e:
        log_error(e, args.command)
        print(f"エラー: {e}", file=sys.stderr)
        return EXIT_IO_ERROR
    except (EscapeLabError, ValueError, KeyError) as e:
        log_error(e, args.command)
        print(f"エラー: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
