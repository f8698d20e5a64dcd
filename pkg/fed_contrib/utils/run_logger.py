"""JSON-lines event log for experiment runs with time-based rotation"""

import glob
import json
import os
import time
from datetime import datetime
from typing import Any, Dict, Optional


class RunLogger:
    """Appends run events and errors to rolling JSON-lines files"""

    def __init__(self, log_directory: str = "./logs",
                 rolling: str = "daily",
                 max_age_days: int = 7):
        self.log_directory = log_directory
        self.rolling = rolling.lower()
        self.max_age_days = max_age_days
        if self.rolling not in ("hourly", "daily"):
            raise ValueError(f"Unsupported rolling type: {self.rolling}")
        self._ensure_directory_exists()

    def _ensure_directory_exists(self) -> None:
        if not os.path.exists(self.log_directory):
            os.makedirs(self.log_directory, exist_ok=True)

    def _get_log_filename(self) -> str:
        """Get current log filename based on rolling configuration"""
        now = datetime.now()
        if self.rolling == "hourly":
            timestamp = now.strftime("%Y%m%d_%H")
        else:
            timestamp = now.strftime("%Y%m%d")
        return os.path.join(self.log_directory, f"events_{timestamp}.json")

    def _append(self, record: Dict[str, Any]) -> bool:
        try:
            with open(self._get_log_filename(), "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
            return True
        except OSError as e:
            print(f"Error writing run log: {e}")
            return False

    def log_event(self, run_name: str, event: str,
                  details: Optional[Dict[str, Any]] = None) -> bool:
        """
        Log a run event such as run_started or round_completed.
        Returns True if successful, False otherwise.
        """
        return self._append({
            "timestamp": datetime.now().isoformat(),
            "run": run_name,
            "event": event,
            "details": details or {},
        })

    def log_error(self, run_name: str, error_message: str,
                  error_details: Optional[Dict[str, Any]] = None) -> bool:
        """
        Log a failed run or command.
        Returns True if successful, False otherwise.
        """
        return self._append({
            "timestamp": datetime.now().isoformat(),
            "run": run_name,
            "error": error_message,
            "details": error_details or {},
        })

    def cleanup_old_logs(self) -> int:
        """Delete event files older than max_age_days; returns how many were removed"""
        cutoff = time.time() - self.max_age_days * 86400
        removed = 0
        for path in glob.glob(os.path.join(self.log_directory, "events_*.json")):
            try:
                if os.path.getmtime(path) < cutoff:
                    os.remove(path)
                    removed += 1
            except OSError:
                continue
        return removed


class RunTracker:
    """Tracks per-run progress and failures for the console summary"""

    def __init__(self):
        self._rounds: Dict[str, int] = {}
        self._error_counts: Dict[str, int] = {}
        self._last_errors: Dict[str, str] = {}

    def record_round(self, run_name: str) -> None:
        self._rounds[run_name] = self._rounds.get(run_name, 0) + 1

    def increment_error_count(self, run_name: str) -> None:
        self._error_counts[run_name] = self._error_counts.get(run_name, 0) + 1

    def set_last_error(self, run_name: str, error_message: str) -> None:
        self._last_errors[run_name] = error_message

    def get_stats(self, run_name: str) -> Dict[str, Any]:
        return {
            "rounds_completed": self._rounds.get(run_name, 0),
            "error_count": self._error_counts.get(run_name, 0),
            "last_error": self._last_errors.get(run_name),
        }

    def reset(self, run_name: str) -> None:
        self._rounds[run_name] = 0
        self._error_counts[run_name] = 0
        self._last_errors.pop(run_name, None)
