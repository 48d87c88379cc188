"""Structured event log -- JSONL append-only record of experiment runs."""

from __future__ import annotations

import json
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any


class ExperimentLog:
    """Append-only JSONL event log for run provenance.

    Four event types:
      run_start -- experiment name, version, config echo
      table     -- a CSV artifact was written (path, row count)
      check     -- a named invariant / inequality check and its outcome
      run_end   -- exit status and wall time
    """

    def __init__(self, path: Path, enabled: bool = True) -> None:
        self._path = path
        self._enabled = enabled
        self._started = time.monotonic()

    @property
    def path(self) -> Path:
        return self._path

    def log_run_start(self, experiment: str, version: str, config: dict[str, Any]) -> None:
        self._started = time.monotonic()
        self._append("run_start", {"experiment": experiment, "version": version, "config": config})

    def log_table(self, name: str, path: Path, rows: int) -> None:
        self._append("table", {"name": name, "path": str(path), "rows": rows})

    def log_check(self, name: str, passed: bool, detail: dict[str, Any] | None = None) -> None:
        data: dict[str, Any] = {"name": name, "passed": passed}
        if detail:
            data["detail"] = detail
        self._append("check", data)

    def log_run_end(self, experiment: str, status: int, error: str = "") -> None:
        data: dict[str, Any] = {
            "experiment": experiment,
            "status": status,
            "elapsed_s": round(time.monotonic() - self._started, 3),
        }
        if error:
            data["error"] = error
        self._append("run_end", data)

    def _append(self, event_type: str, data: dict[str, Any]) -> None:
        if not self._enabled:
            return
        record = {
            "ts": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "type": event_type,
            **data,
        }
        try:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with self._path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False, default=str) + "\n")
        except OSError:
            pass  # a failed log write never fails the run
