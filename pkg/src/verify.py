"""
検証レポートモジュール
エスケープフィールドとマスクに対する不変性・包含・一致・空性のチェック
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import GridMismatch
from .expr import Generator, evaluate_array
from .field import EscapeField, Mask, classify_points, forward_image_mask, preimage_mask
from .orbit import CODE_BOUNDED, CODE_ESCAPING, DEFAULT_WORD_CAP, OrbitParams, enumerate_words
from .utils.monitoring import performance_monitor

logger = logging.getLogger(__name__)

MAX_EXAMPLES = 10

DEFAULT_INVARIANCE_THRESHOLD = 0.01
DEFAULT_EMPTINESS_THRESHOLD = 0.01
DEFAULT_THINNESS_CEILING = 0.5


@dataclass
class VerificationReport:
    """
    1つのチェックの結果

    population が 0 のときは空虚に合格とする。
    informational なレポートは CLI の終了ステータスに影響しない。
    """
    check_name: str
    population: int
    violations: int
    threshold: float
    violation_examples: List[Dict[str, Any]] = field(default_factory=list)
    parameters: Dict[str, Any] = field(default_factory=dict)
    informational: bool = False

    @property
    def fraction(self) -> float:
        if self.population == 0:
            return 0.0
        return self.violations / self.population

    @property
    def passed(self) -> bool:
        if self.population == 0:
            return True
        return self.fraction <= self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {
            "check_name": self.check_name,
            "population": self.population,
            "violations": self.violations,
            "fraction": self.fraction,
            "threshold": self.threshold,
            "passed": self.passed,
            "parameters": {**self.parameters, "informational": self.informational},
            "examples": list(self.violation_examples),
        }


@dataclass(frozen=True)
class MaskComparison:
    only_left: int
    only_right: int
    both: int
    total: int

    @property
    def jaccard(self) -> float:
        union = self.both + self.only_left + self.only_right
        if union == 0:
            return 1.0
        return self.both / union

    @property
    def sym_diff_fraction(self) -> float:
        return (self.only_left + self.only_right) / self.total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "jaccard": self.jaccard,
            "sym_diff_fraction": self.sym_diff_fraction,
            "only_left": self.only_left,
            "only_right": self.only_right,
            "both": self.both,
        }


def _examples(grid, selector: np.ndarray, detail: str) -> List[Dict[str, Any]]:
    """行優先順で最初の MAX_EXAMPLES 個の違反ピクセルを記録"""
    rows, cols = np.nonzero(selector)
    records = []
    for j, i in zip(rows[:MAX_EXAMPLES], cols[:MAX_EXAMPLES]):
        z = grid.center(int(i), int(j))
        records.append({"pixel": [int(i), int(j)], "point": [z.real, z.imag], "detail": detail})
    return records


def _check_grids(a: Mask, b: Mask) -> None:
    if a.grid != b.grid:
        raise GridMismatch("異なるグリッドのマスクは比較できません")


def check_containment(inner: Mask, outer: Mask, threshold: float = 0.0,
                      check_name: str = "containment") -> VerificationReport:
    """
    inner ⊆ outer をピクセル単位で確認する

    population は inner のセットピクセル数、違反は outer でセットされていないもの
    """
    _check_grids(inner, outer)
    violating = inner.bits & ~outer.bits
    return VerificationReport(
        check_name=check_name,
        population=inner.count(),
        violations=int(np.count_nonzero(violating)),
        threshold=threshold,
        violation_examples=_examples(inner.grid, violating, f"{inner.label or 'inner'} にあり {outer.label or 'outer'} にない"),
        parameters={"grid": inner.grid.label(), "region": inner.grid.region.as_list(),
                    "inner": inner.label, "outer": outer.label},
    )


def _image_codes(escape_field: EscapeField, g: Generator, source: np.ndarray, params: OrbitParams,
                 gens: Sequence[Generator], threads: Optional[int], word_cap: int):
    """source ピクセル中心の g による像を直接再判定する"""
    words = enumerate_words(len(gens), escape_field.depth, word_cap)
    centers = escape_field.grid.points()[source]
    images, bad = evaluate_array(g.expr, centers)
    codes = np.full(centers.shape, CODE_BOUNDED, dtype=np.uint8)
    finite = ~bad
    if finite.any():
        codes[finite], _ = classify_points(images[finite], gens, words, params, threads)
    return codes, finite


@performance_monitor("check_forward_invariance")
def check_forward_invariance(escape_field: EscapeField, gens: Sequence[Generator], params: OrbitParams,
                             threshold: float = DEFAULT_INVARIANCE_THRESHOLD, threads: Optional[int] = None,
                             word_cap: int = DEFAULT_WORD_CAP) -> List[VerificationReport]:
    """
    前方不変性 g(I(S)) ⊆ I(S) を生成元ごとに確認する

    EscapingAll のピクセル中心 z について g(z) を classify_point と同じ規則で再判定し、
    BoundedWitness になれば違反とする。像がオーバーフローした点は対象外。

    Returns:
        生成元ごとの VerificationReport
    """
    grid = escape_field.grid
    source = escape_field.verdicts == CODE_ESCAPING
    reports = []
    for index, g in enumerate(gens):
        codes, finite = _image_codes(escape_field, g, source, params, gens, threads, word_cap)
        violating_flat = finite & (codes == CODE_BOUNDED)
        violating = np.zeros(grid.shape, dtype=bool)
        violating[source] = violating_flat
        reports.append(VerificationReport(
            check_name=f"forward_invariance[{g.name}]",
            population=int(np.count_nonzero(finite)),
            violations=int(np.count_nonzero(violating_flat)),
            threshold=threshold,
            violation_examples=_examples(grid, violating, f"{g.name}(z) が有界な軌道を持つ"),
            parameters={**escape_field.parameters(), "generator": index,
                        "skipped_overflow": int(np.count_nonzero(~finite))},
        ))
    return reports


@performance_monitor("check_backward_invariance")
def check_backward_invariance(escape_field: EscapeField, gens: Sequence[Generator], params: OrbitParams,
                              threshold: float = DEFAULT_INVARIANCE_THRESHOLD, abelian: bool = False,
                              threads: Optional[int] = None,
                              word_cap: int = DEFAULT_WORD_CAP) -> List[VerificationReport]:
    """
    後方不変性 g^{-1}(I(S)) ⊆ I(S) を所属判定の形で確認する

    g(中心) が EscapingAll に再判定されるピクセルを母集団とし、
    そのピクセル自身が Bounded なら違反。abelian でなければ informational。
    """
    grid = escape_field.grid
    everything = np.ones(grid.shape, dtype=bool)
    reports = []
    for index, g in enumerate(gens):
        codes, finite = _image_codes(escape_field, g, everything, params, gens, threads, word_cap)
        population = (finite & (codes == CODE_ESCAPING)).reshape(grid.shape)
        violating = population & (escape_field.verdicts == CODE_BOUNDED)
        reports.append(VerificationReport(
            check_name=f"backward_invariance[{g.name}]",
            population=int(np.count_nonzero(population)),
            violations=int(np.count_nonzero(violating)),
            threshold=threshold,
            violation_examples=_examples(grid, violating, f"{g.name}(z) は脱出するが z は有界"),
            parameters={**escape_field.parameters(), "generator": index, "abelian": abelian,
                        "skipped_overflow": int(np.count_nonzero(~finite))},
            informational=not abelian,
        ))
    return reports


def check_mask_invariance(mask: Mask, gens: Sequence[Generator], direction: str = "forward",
                          threshold: float = DEFAULT_INVARIANCE_THRESHOLD,
                          informational: bool = False) -> List[VerificationReport]:
    """
    マスクの不変性をピクセル参照で確認する

    forward: g(m) のうち m にないピクセルが違反（母集団は g(m) のセット数）
    backward: g^{-1}(m) のうち m にないピクセルが違反
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction は forward か backward です: {direction}")
    reports = []
    for index, g in enumerate(gens):
        moved = forward_image_mask(mask, g) if direction == "forward" else preimage_mask(mask, g)
        violating = moved.bits & ~mask.bits
        reports.append(VerificationReport(
            check_name=f"mask_{direction}_invariance[{mask.label or 'mask'},{g.name}]",
            population=moved.count(),
            violations=int(np.count_nonzero(violating)),
            threshold=threshold,
            violation_examples=_examples(mask.grid, violating, f"{direction} 像がマスク外"),
            parameters={"grid": mask.grid.label(), "region": mask.grid.region.as_list(),
                        "generator": index, "spill": moved.spill},
            informational=informational,
        ))
    return reports


def compare_masks(a: Mask, b: Mask) -> MaskComparison:
    _check_grids(a, b)
    return MaskComparison(
        only_left=int(np.count_nonzero(a.bits & ~b.bits)),
        only_right=int(np.count_nonzero(b.bits & ~a.bits)),
        both=int(np.count_nonzero(a.bits & b.bits)),
        total=a.grid.size,
    )


def check_equality(a: Mask, b: Mask, threshold: float) -> VerificationReport:
    """
    compare_masks を VerificationReport にする

    jaccard >= threshold で合格。違反数は対称差のピクセル数、母集団は和集合
    """
    comparison = compare_masks(a, b)
    union = comparison.both + comparison.only_left + comparison.only_right
    violating = a.bits ^ b.bits
    # 合格条件 1 - jaccard <= 1 - threshold
    return VerificationReport(
        check_name=f"equality[{a.label or 'a'},{b.label or 'b'}]",
        population=union,
        violations=comparison.only_left + comparison.only_right,
        threshold=1.0 - threshold,
        violation_examples=_examples(a.grid, violating, "片方のマスクにのみ含まれる"),
        parameters={"grid": a.grid.label(), "region": a.grid.region.as_list(),
                    "jaccard_threshold": threshold, **comparison.to_dict()},
    )


def check_emptiness(escape_field: EscapeField, threshold: float = DEFAULT_EMPTINESS_THRESHOLD,
                    informational: bool = False) -> VerificationReport:
    """違反率 = EscapingAll ピクセルの密度"""
    escaping = escape_field.verdicts == CODE_ESCAPING
    return VerificationReport(
        check_name="emptiness",
        population=escape_field.grid.size,
        violations=int(np.count_nonzero(escaping)),
        threshold=threshold,
        violation_examples=_examples(escape_field.grid, escaping, "EscapingAll"),
        parameters=escape_field.parameters(),
        informational=informational,
    )


def extract_boundary(m: Mask) -> Mask:
    """
    セットされていて 4近傍に未セットのピクセルを持つピクセル

    窓外は未セットとみなすので、全セットのマスクでは窓の縁が境界になる
    """
    padded = np.pad(m.bits, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return Mask(m.grid, m.bits & ~interior, label=f"boundary({m.label})" if m.label else "boundary")


def _full_neighborhood(bits: np.ndarray) -> np.ndarray:
    height, width = bits.shape
    padded = np.pad(bits, 1, constant_values=False)
    full = np.ones(bits.shape, dtype=bool)
    for dy in range(3):
        for dx in range(3):
            full &= padded[dy:dy + height, dx:dx + width]
    return full


def thinness_statistic(m: Mask) -> float:
    """3×3 近傍がすべてセットされているセットピクセルの割合。空なら 0"""
    total = m.count()
    if total == 0:
        return 0.0
    full = _full_neighborhood(m.bits)
    return int(np.count_nonzero(full)) / total


def check_thinness(m: Mask, ceiling: float = DEFAULT_THINNESS_CEILING) -> VerificationReport:
    """有界型の生成元では脱出ピクセルに太い内部がないことを確認する"""
    full = _full_neighborhood(m.bits)
    return VerificationReport(
        check_name=f"thinness[{m.label or 'mask'}]",
        population=m.count(),
        violations=int(np.count_nonzero(full)),
        threshold=ceiling,
        violation_examples=_examples(m.grid, full, "3x3 近傍がすべてセット"),
        parameters={"grid": m.grid.label(), "region": m.grid.region.as_list(),
                    "interior_fraction": thinness_statistic(m)},
    )


def summarize(reports: Sequence[VerificationReport]) -> Dict[str, Any]:
    """判定対象のレポートがすべて合格かどうか"""
    gating = [r for r in reports if not r.informational]
    failed = [r.check_name for r in gating if not r.passed]
    if failed:
        logger.warning("failed checks: %s", ", ".join(failed))
    return {"total": len(reports), "gating": len(gating), "failed": failed, "passed": not failed}
