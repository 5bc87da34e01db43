"""シーン設定・プリセット・CLI サブコマンドのテスト"""

import json
import math

import pandas as pd
import pytest

from src.cli import EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_IO_ERROR, EXIT_OK, main
from src.errors import ConfigParseError, ConfigValidationError
from src.presets import PRESET_DIR_ENV, list_presets, load_preset, preset_path
from src.utils.config import DEFAULT_THRESHOLDS, config_from_dict, load_config, parse_constant
from src.utils.export_utils import CSV_COLUMNS
from src.utils.monitoring import get_monitoring

CONTRACTION = {
    "name": "contraction",
    "generators": [{"name": "h", "expression": "0.5*z"}],
    "width": 4,
    "height": 4,
    "depth": 1,
    "max_iter": 10,
    "n_max": 1,
    "expect_empty": True,
}

EXPANSION = {
    "name": "expansion",
    "generators": [
        {"name": "a", "expression": "2*z"},
        {"name": "b", "expression": "2*z+0"},
        {"name": "c", "expression": "0.5*z"},
    ],
    "region": [1.0, 2.0, 1.0, 2.0],
    "width": 4,
    "height": 4,
    "depth": 1,
    "escape_radius": 100,
    "max_iter": 20,
    "n_max": 1,
}


def _write(tmp_path, data, name="scene.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _run(*args):
    return main(list(args))


# ---------------------------------------------------------------------------
# 設定の読み込み
# ---------------------------------------------------------------------------

def test_minimal_config_gets_defaults(tmp_path):
    config = load_config(_write(tmp_path, {"generators": [{"name": "f", "expression": "exp(z)"}]}, "minimal.json"))
    assert config.name == "minimal"
    assert (config.width, config.height, config.depth, config.n_max) == (512, 512, 4, 3)
    assert config.params.escape_radius == 1e10
    assert config.params.max_iter == 100
    assert config.params.overflow_is_escape
    assert config.word_cap == 10_000
    assert config.region.as_list() == [-2.0, 2.0, -2.0, 2.0]
    assert config.thresholds.jaccard == DEFAULT_THRESHOLDS["jaccard"]
    assert config.grid.shape == (512, 512)


def test_partial_thresholds_merge_with_defaults():
    config = config_from_dict({"name": "t", "generators": [{"name": "f", "expression": "z"}],
                               "thresholds": {"jaccard": 0.9}})
    assert config.thresholds.jaccard == 0.9
    assert config.thresholds.invariance == 0.01
    assert config.thresholds.period_tol == 1e-9


@pytest.mark.parametrize("value, expected", [
    (3, 3 + 0j),
    (-1.5, -1.5 + 0j),
    ([1, 2], 1 + 2j),
    ("2*pi*i/0.3", 2j * math.pi / 0.3),
    ("2*pi", 2 * math.pi + 0j),
])
def test_parse_constant(value, expected):
    assert parse_constant(value, "period") == pytest.approx(expected)


@pytest.mark.parametrize("value", ["z+1", "exp(", True, [1, 2, 3], None])
def test_parse_constant_rejects_non_constants(value):
    with pytest.raises(ConfigValidationError) as info:
        parse_constant(value, "generators[0].period")
    assert info.value.field == "generators[0].period"


def test_shifted_iterate_inherits_verified_period():
    config = load_preset("exp-shift-pair")
    f, g = config.generators
    assert g.period == f.period
    assert abs(f.period - 2j * math.pi / 0.3) < 1e-12
    assert len(config.sample_checks) == 2
    assert all(config.sample_checks)


@pytest.mark.parametrize("data, field", [
    ({"generators": [{"name": "f", "expression": "exp("}]}, "generators[0].expression"),
    ({"generators": []}, "generators"),
    ({}, "generators"),
    ({"generators": [{"name": "f", "expression": "z"}, {"name": "f", "expression": "z"}]}, "generators[1].name"),
    ({"generators": [{"name": "f"}]}, "generators[0]"),
    ({"generators": [{"name": "g", "shifted_iterate": {"of": "f", "k": 1}}]}, "generators[0].shifted_iterate.of"),
    ({"generators": [{"name": "f", "expression": "exp(z)", "period": "pi*i"}]}, "generators[0].period"),
    ({"generators": [{"name": "f", "expression": "exp(z)"}, {"name": "g", "expression": "exp(-z)"}],
      "abelian": True}, "abelian"),
    ({"generators": [{"name": "f", "expression": "z"}], "thresholds": {"jaccard": 1.5}}, "thresholds.jaccard"),
    ({"generators": [{"name": "f", "expression": "z"}], "thresholds": {"bogus": 0.1}}, "thresholds.bogus"),
    ({"generators": [{"name": "f", "expression": "z"}], "region": [1, 0, 0, 1]}, "region"),
    ({"generators": [{"name": "f", "expression": "z"}], "width": 0}, "width"),
    ({"generators": [{"name": "f", "expression": "z"}], "compare": ["f", "x"]}, "compare"),
])
def test_validation_errors_name_the_field(data, field):
    with pytest.raises(ConfigValidationError) as info:
        config_from_dict(data, name="broken")
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_json_syntax_error_reports_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "generators": [,]\n}', encoding="utf-8")
    with pytest.raises(ConfigParseError) as info:
        load_config(str(path))
    assert info.value.location == f"{path}:2:18"


def test_abelian_claim_is_checked_and_recorded():
    config = load_preset("abelian-sine")
    assert config.abelian
    assert [r.check_name for r in config.sample_checks] == ["commutation[f,g]"]


def test_with_overrides_returns_an_independent_copy():
    config = load_preset("exp-single")
    small = config.with_overrides(width=8, height=4)
    assert (small.width, small.height) == (8, 4)
    assert config.width == 256
    with pytest.raises(AttributeError):
        config.with_overrides(colour="red")


# ---------------------------------------------------------------------------
# プリセット
# ---------------------------------------------------------------------------

def test_builtin_presets_are_listed():
    names = list_presets()
    assert names == sorted(names)
    assert {"empty-pair", "kumar-empty-family", "exp-shift-pair", "sine-shift-pair", "abelian-sine",
            "exp-single"} <= set(names)


@pytest.mark.parametrize("name", list_presets())
def test_every_preset_loads(name):
    config = load_preset(name)
    assert config.name == name
    assert config.generators


def test_preset_directory_override(tmp_path, monkeypatch):
    _write(tmp_path, {"generators": [{"name": "f", "expression": "z"}]}, "only.json")
    monkeypatch.setenv(PRESET_DIR_ENV, str(tmp_path))
    assert list_presets() == ["only"]
    assert load_preset("only").name == "only"
    with pytest.raises(ConfigValidationError) as info:
        preset_path("empty-pair")
    assert info.value.field == "preset"


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_preset_list_prints_names(capsys):
    assert _run("preset-list") == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert printed == list_presets()


def test_classify_writes_field_and_render(tmp_path):
    out = tmp_path / "out"
    status = _run("classify", "--preset", "exp-single", "--width", "8", "--height", "6",
                  "--out", str(out), "--render", "--threads", "1")
    assert status == EXIT_OK
    field_bytes = (out / "exp-single-field-8x6.escf").read_bytes()
    assert field_bytes[:4] == b"ESCF"
    assert len(field_bytes) == 12 + 3 * 48
    assert (out / "exp-single-field-8x6.ppm").read_bytes().startswith(b"P6\n8 6\n255\n")


def test_classify_is_deterministic_across_thread_counts(tmp_path):
    for threads in ("1", "2"):
        assert _run("classify", "--preset", "empty-pair", "--width", "16", "--height", "16", "--render",
                    "--out", str(tmp_path / threads), "--threads", threads) == EXIT_OK
    for name in ("empty-pair-field-16x16.escf", "empty-pair-field-16x16.ppm"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


def test_render_reads_saved_field(tmp_path):
    out = str(tmp_path)
    args = ("--preset", "exp-single", "--width", "8", "--height", "8", "--out", out)
    assert _run("classify", *args) == EXIT_OK
    assert _run("render", *args, "--format", "png", "--palette", "gray") == EXIT_OK
    assert (tmp_path / "exp-single-field-8x8.png").read_bytes().startswith(b"\x89PNG")


def test_render_without_field_is_an_io_error(tmp_path, capsys):
    status = _run("render", "--preset", "exp-single", "--width", "8", "--height", "8", "--out", str(tmp_path))
    assert status == EXIT_IO_ERROR
    assert "エラー" in capsys.readouterr().err


def test_construct_writes_every_level(tmp_path):
    out = tmp_path / "towers"
    status = _run("construct-e", "--preset", "exp-single", "--width", "8", "--height", "8",
                  "--n-max", "2", "--out", str(out), "--render")
    assert status == EXIT_OK
    for kind in ("E0", "E1", "E2", "E"):
        assert (out / f"exp-single-{kind}-8x8.pbm").read_bytes().startswith(b"P4\n8 8\n")
    assert (out / "exp-single-E-8x8.ppm").exists()
    summary = json.loads((out / "exp-single-E-tower-8x8.json").read_text(encoding="utf-8"))
    assert len(summary["level_counts"]) == 3
    assert summary["final_count"] <= min(summary["level_counts"])

    assert _run("construct-f", "--preset", "exp-single", "--width", "8", "--height", "8",
                "--n-max", "1", "--out", str(out)) == EXIT_OK
    assert (out / "exp-single-F-8x8.pbm").exists()


def test_verify_passes_for_contraction(tmp_path, capsys):
    config = _write(tmp_path, CONTRACTION)
    report = tmp_path / "reports" / "contraction.json"
    status = _run("verify", "--config", config, "--out", str(tmp_path), "--report", str(report))
    assert status == EXIT_OK
    document = json.loads(report.read_text(encoding="utf-8"))
    assert document["scene"] == "contraction"
    by_name = {r["check_name"]: r for r in document["reports"]}
    assert by_name["emptiness"]["passed"]
    assert by_name["emptiness"]["parameters"]["informational"] is False
    assert by_name["containment[I(S),I(h)]"]["passed"]
    assert by_name["containment[I(S),I(h)]"]["parameters"]["informational"] is False
    assert "tower[F⊆E]" in by_name and "tower[E⊆F]" in by_name
    table = pd.read_csv(report.with_suffix(".csv"))
    assert list(table.columns) == CSV_COLUMNS
    assert len(table) == len(document["reports"])
    assert "検証結果サマリー: contraction" in capsys.readouterr().out


def test_verify_fails_when_expected_empty_set_is_not_empty(tmp_path):
    data = dict(EXPANSION, generators=EXPANSION["generators"][:1], expect_empty=True)
    status = _run("verify", "--config", _write(tmp_path, data), "--out", str(tmp_path))
    assert status == EXIT_CHECK_FAILED
    document = json.loads((tmp_path / "expansion-reports.json").read_text(encoding="utf-8"))
    failed = [r["check_name"] for r in document["reports"]
              if not r["passed"] and not r["parameters"]["informational"]]
    assert failed == ["emptiness"]


def test_tower_equality_claim_gates_the_report(tmp_path):
    data = {
        "name": "doubling",
        "generators": [{"name": "d", "expression": "2*z"}],
        "region": [-4, 4, -4, 4],
        "width": 4,
        "height": 4,
        "depth": 1,
        "escape_radius": 100,
        "max_iter": 20,
        "n_max": 2,
        "tower_equality": True,
    }
    report = tmp_path / "doubling.json"
    _run("verify", "--config", _write(tmp_path, data), "--out", str(tmp_path), "--report", str(report))
    document = json.loads(report.read_text(encoding="utf-8"))
    equality = [r for r in document["reports"] if r["check_name"].startswith("equality[F,")]
    assert len(equality) == 1
    assert equality[0]["passed"]
    assert equality[0]["parameters"]["informational"] is False
    assert equality[0]["parameters"]["jaccard_threshold"] == DEFAULT_THRESHOLDS["tower_jaccard"]
    assert load_preset("exp-single").tower_equality
    assert not config_from_dict(dict(data, tower_equality=False)).tower_equality


def test_compare_subcommand(tmp_path):
    config = _write(tmp_path, EXPANSION)
    assert _run("compare", "--config", config, "--pair", "a", "b", "--out", str(tmp_path)) == EXIT_OK
    document = json.loads((tmp_path / "expansion-reports.json").read_text(encoding="utf-8"))
    assert document["comparison"]["jaccard"] == 1.0
    assert _run("compare", "--config", config, "--pair", "a", "c", "--out", str(tmp_path)) == EXIT_CHECK_FAILED
    assert _run("compare", "--config", config, "--out", str(tmp_path)) == EXIT_CONFIG_ERROR
    assert _run("compare", "--config", config, "--pair", "a", "zz", "--out", str(tmp_path)) == EXIT_CONFIG_ERROR


@pytest.mark.parametrize("data", [
    {"generators": [{"name": "f", "expression": "exp("}]},
    {"generators": [{"name": "f", "expression": "exp(z)", "period": "pi*i"}]},
    {"generators": [{"name": "f", "expression": "exp(z)"}, {"name": "g", "expression": "exp(-z)"}], "abelian": True},
    {"generators": [{"name": "f", "expression": "z"}, {"name": "g", "expression": "z"}], "depth": 4, "word_cap": 10,
     "width": 2, "height": 2},
])
def test_configuration_errors_exit_with_status_two(tmp_path, capsys, data):
    assert _run("classify", "--config", _write(tmp_path, data), "--out", str(tmp_path)) == EXIT_CONFIG_ERROR
    assert "エラー:" in capsys.readouterr().err


def test_invalid_json_and_missing_files(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    assert _run("classify", "--config", str(path)) == EXIT_CONFIG_ERROR
    assert f"{path}:1:2" in capsys.readouterr().err
    assert _run("classify", "--config", str(tmp_path / "missing.json")) == EXIT_IO_ERROR
    assert _run("classify", "--preset", "no-such-preset") == EXIT_CONFIG_ERROR
    assert _run("classify", "--preset", "exp-single", "--width", "0") == EXIT_CONFIG_ERROR
    assert _run("classify") == EXIT_CONFIG_ERROR


def test_log_file_receives_json_lines(tmp_path):
    log_path = tmp_path / "run.log"
    try:
        assert _run("classify", "--config", _write(tmp_path, CONTRACTION), "--out", str(tmp_path),
                    "--log-file", str(log_path)) == EXIT_OK
    finally:
        get_monitoring().set_log_file(None)
    lines = log_path.read_text(encoding="utf-8").splitlines()
    assert any(line.startswith("ACTION: ") for line in lines)
    performance = [json.loads(line.split(": ", 1)[1]) for line in lines if line.startswith("PERFORMANCE: ")]
    assert "compute_escape_field" in {p["operation"] for p in performance}
