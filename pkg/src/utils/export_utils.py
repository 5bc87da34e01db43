"""
エクスポート機能モジュール
検証レポートの JSON / CSV 出力とサマリーテキストを担当
"""

import json
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .image_io import atomic_write_bytes

CSV_COLUMNS = ["check_name", "population", "violations", "fraction", "threshold", "passed", "informational"]


class ReportExporter:
    """レポートのエクスポート管理クラス"""

    def __init__(self, scene: str, summary: Optional[Dict[str, Any]] = None):
        self.scene = scene
        self.summary = summary or {}

    def to_json_bytes(self, reports: Sequence[Dict[str, Any]], extra: Optional[Dict[str, Any]] = None) -> bytes:
        """
        固定キーのレポート辞書を JSON にする

        Args:
            reports: VerificationReport.to_dict() のリスト
            extra: mask 比較などの追加セクション

        Returns:
            UTF-8 の JSON バイト列
        """
        document = {
            "scene": self.scene,
            "config": self.summary,
            "reports": list(reports),
        }
        if extra:
            document.update(extra)
        return json.dumps(document, indent=2, ensure_ascii=False, sort_keys=False).encode("utf-8")

    def to_dataframe(self, reports: Sequence[Dict[str, Any]]) -> pd.DataFrame:
        """1レポート1行の表。informational は parameters から取り出す"""
        rows = []
        for report in reports:
            row = {key: report.get(key) for key in CSV_COLUMNS if key != "informational"}
            row["informational"] = bool(report.get("parameters", {}).get("informational", False))
            rows.append(row)
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def to_csv_bytes(self, reports: Sequence[Dict[str, Any]]) -> bytes:
        return self.to_dataframe(reports).to_csv(index=False).encode("utf-8")

    def write(self, reports: Sequence[Dict[str, Any]], json_path: str, csv_path: Optional[str] = None,
              extra: Optional[Dict[str, Any]] = None) -> List[str]:
        """JSON（と CSV）をアトミックに書き出し、書いたパスを返す"""
        atomic_write_bytes(json_path, self.to_json_bytes(reports, extra))
        written = [json_path]
        if csv_path:
            atomic_write_bytes(csv_path, self.to_csv_bytes(reports))
            written.append(csv_path)
        return written

    def create_summary_report(self, reports: Sequence[Dict[str, Any]]) -> str:
        """
        標準出力向けのサマリーテキスト

        Args:
            reports: VerificationReport.to_dict() のリスト

        Returns:
            サマリーレポートのテキスト
        """
        if not reports:
            return f"{self.scene}: 実行されたチェックはありません"

        gating = [r for r in reports if not r.get("parameters", {}).get("informational")]
        failed = [r for r in gating if not r["passed"]]
        lines = [
            f"検証結果サマリー: {self.scene}",
            "=" * 50,
            f"- チェック数: {len(reports)}（判定対象 {len(gating)}）",
            f"- 合格: {len(gating) - len(failed)} / {len(gating)}",
            "",
        ]
        for r in reports:
            informational = r.get("parameters", {}).get("informational")
            status = "INFO" if informational else ("PASS" if r["passed"] else "FAIL")
            lines.append(
                f"[{status}] {r['check_name']}: {r['violations']}/{r['population']}"
                f" ({r['fraction']:.4f}, 閾値 {r['threshold']:g})"
            )
        if failed:
            lines.append("")
            lines.append("失敗したチェック:")
            for r in failed:
                examples = r.get("examples") or []
                first = f" 例: {examples[0]['point']}" if examples else ""
                lines.append(f"- {r['check_name']}{first}")
        return "\n".join(lines) + "\n"
