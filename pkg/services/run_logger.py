"""
Run logging service for recording CLI invocations in JSONL format.
"""
import json
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Dict, Optional, Any
import logging
from dataclasses import dataclass, asdict

from config.settings import get_settings

logger = logging.getLogger(__name__)


@dataclass
class RunLogEntry:
    """One command invocation with its resolved configuration and outcome."""
    timestamp: str
    session_id: str
    command: str
    seed: Optional[int]
    config: Dict[str, Any]
    exit_code: int
    duration_ms: int
    summary: Dict[str, Any]
    error: Optional[str] = None
    outputs: Optional[List[str]] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert the log entry to a dictionary."""
        return asdict(self)


class RunLogger:
    """Appends one line per run to runs.jsonl under the logs directory."""

    def __init__(self, logs_directory: Optional[str] = None):
        self.log_dir = Path(logs_directory or get_settings().logs_directory)
        self.log_file_path = self.log_dir / "runs.jsonl"
        self._session_id = str(uuid.uuid4())

    def _ensure_log_directory(self):
        self.log_dir.mkdir(parents=True, exist_ok=True)

    def _get_timestamp(self) -> str:
        return datetime.now(timezone.utc).isoformat()

    def _write_log_entry(self, entry: RunLogEntry):
        try:
            self._ensure_log_directory()
            with open(self.log_file_path, 'a', encoding='utf-8') as f:
                json.dump(entry.to_dict(), f, ensure_ascii=False, default=str)
                f.write('\n')
        except OSError as e:
            logger.error(f"Failed to write run log entry: {e}")

    def log_run(
        self,
        command: str,
        config: Dict[str, Any],
        exit_code: int,
        duration_ms: int,
        summary: Optional[Dict[str, Any]] = None,
        error: Optional[str] = None,
        outputs: Optional[List[str]] = None,
    ) -> RunLogEntry:
        """
        Record one run.

        Args:
            command: Subcommand name
            config: Resolved configuration (flags merged with settings)
            exit_code: Process exit code
            duration_ms: Wall-clock time of the run
            summary: Headline numbers of the result
            error: Error message if the run failed
            outputs: Files written by the run
        """
        entry = RunLogEntry(
            timestamp=self._get_timestamp(),
            session_id=self._session_id,
            command=command,
            seed=config.get("seed"),
            config=config,
            exit_code=exit_code,
            duration_ms=duration_ms,
            summary=summary or {},
            error=error,
            outputs=outputs,
        )
        self._write_log_entry(entry)
        logger.debug(f"Logged {command} run with exit code {exit_code}")
        return entry

    def read_runs(self) -> List[Dict[str, Any]]:
        """All entries written so far, oldest first."""
        if not self.log_file_path.exists():
            return []
        with open(self.log_file_path, encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]

    def get_session_id(self) -> str:
        return self._session_id


_run_logger: Optional[RunLogger] = None


def get_run_logger() -> RunLogger:
    """Get the global run logger, created on first use from the current settings."""
    global _run_logger
    if _run_logger is None or _run_logger.log_dir != Path(get_settings().logs_directory):
        _run_logger = RunLogger()
    return _run_logger
