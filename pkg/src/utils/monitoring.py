"""
監視システム
エンジン処理のパフォーマンスとエラーを追跡
"""

import functools
import json
import logging
import os
import time
import traceback
from datetime import datetime
from typing import Any, Dict, List, Optional

LOG_FILE_ENV = "ESCAPE_LAB_LOG_FILE"

logger = logging.getLogger("escape_lab")


def configure_logging(verbose: bool = False) -> None:
    """ルートロガーを設定"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class MonitoringSystem:
    """エンジン処理の計測と例外を保持し、JSON 行ログへ追記する"""

    def __init__(self, log_file: Optional[str] = None, performance_threshold: float = 30.0):
        self.log_file = log_file if log_file is not None else os.getenv(LOG_FILE_ENV)
        self.performance_threshold = performance_threshold  # 秒。超えたらアラート
        self.records: Dict[str, List[Dict[str, Any]]] = {
            'errors': [],
            'performance': [],
            'actions': [],
        }

    def set_log_file(self, log_file: Optional[str]):
        self.log_file = log_file

    def log_error(self, error: BaseException, context: str = ""):
        """エンジン例外を記録（CLI の終了コード変換前に呼ばれる）"""
        error_data = {
            'timestamp': datetime.now().isoformat(),
            'error_type': type(error).__name__,
            'error_message': str(error),
            'context': context,
            'traceback': traceback.format_exc(),
        }
        self.records['errors'].append(error_data)
        logger.error("%s: %s", context or error_data['error_type'], error)
        self._write_to_log(f"ERROR: {json.dumps(error_data, ensure_ascii=False)}")

    def log_performance(self, operation: str, duration: float, context: str = ""):
        """フィールド計算や塔構成の所要時間を記録"""
        perf_data = {
            'timestamp': datetime.now().isoformat(),
            'operation': operation,
            'duration': duration,
            'context': context,
        }
        self.records['performance'].append(perf_data)
        logger.debug("%s: %.3f秒 %s", operation, duration, context)
        self._write_to_log(f"PERFORMANCE: {json.dumps(perf_data, ensure_ascii=False)}")

        if duration > self.performance_threshold:
            self._log_alert(
                "SLOW_OPERATION",
                f"{operation}が{duration:.2f}秒で完了（閾値: {self.performance_threshold}秒）",
            )

    def log_action(self, action: str, details: Optional[Dict[str, Any]] = None):
        """サブコマンド実行などの操作を記録"""
        action_data = {
            'timestamp': datetime.now().isoformat(),
            'action': action,
            'details': details or {},
        }
        self.records['actions'].append(action_data)
        logger.info("%s %s", action, json.dumps(details or {}, ensure_ascii=False, default=str))
        self._write_to_log(f"ACTION: {json.dumps(action_data, ensure_ascii=False, default=str)}")

    def _write_to_log(self, message: str):
        """ログファイル未設定なら何もしない"""
        if not self.log_file:
            return
        try:
            with open(self.log_file, 'a', encoding='utf-8') as f:
                f.write(f"{message}\n")
        except OSError as e:
            logger.warning("Log write failed: %s", e)

    def _log_alert(self, alert_type: str, message: str):
        alert_data = {
            'timestamp': datetime.now().isoformat(),
            'alert_type': alert_type,
            'message': message,
        }
        logger.warning(message)
        self._write_to_log(f"ALERT: {json.dumps(alert_data, ensure_ascii=False)}")

    def get_performance_summary(self) -> Dict[str, Any]:
        """操作ごとの処理時間サマリーを取得"""
        by_operation: Dict[str, List[float]] = {}
        for perf in self.records['performance']:
            by_operation.setdefault(perf['operation'], []).append(perf['duration'])
        return {
            name: {
                'count': len(durations),
                'total': sum(durations),
                'max': max(durations),
            }
            for name, durations in by_operation.items()
        }


# プロセス内で 1 つ
_monitoring_instance = None


def get_monitoring() -> MonitoringSystem:
    """プロセス内で共有する MonitoringSystem（初回呼び出しで生成）"""
    global _monitoring_instance
    if _monitoring_instance is None:
        _monitoring_instance = MonitoringSystem()
    return _monitoring_instance


def log_error(error: BaseException, context: str = ""):
    """例外を記録。監視側の失敗は呼び出し元に伝えない"""
    try:
        get_monitoring().log_error(error, context)
    except Exception:
        # ログ出力の失敗で計算を止めない
        pass


def log_performance(operation: str, duration: float, context: str = ""):
    """所要時間を記録"""
    try:
        get_monitoring().log_performance(operation, duration, context)
    except Exception:
        pass


def log_action(action: str, details: Optional[Dict[str, Any]] = None):
    """操作をログに記録（簡易関数）"""
    try:
        get_monitoring().log_action(action, details)
    except Exception:
        pass


def performance_monitor(operation: str, context: str = ""):
    """
    エンジンの入口関数の所要時間を計測するデコレータ

    Args:
        operation: 記録する操作名（例: "compute_escape_field"）
        context: 補足情報
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                log_performance(operation, time.perf_counter() - start_time, context)
                return result
            except Exception as e:
                log_performance(operation, time.perf_counter() - start_time, context)
                log_error(e, f"{operation} - {context}" if context else operation)
                raise
        return wrapper
    return decorator
