import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

EVENT_FIELDS = ('tags', 'stage', 'iteration', 'sample_id', 'payload')


class JSONLFileHandler(logging.Handler):
    def __init__(self, log_dir: str = 'logs', max_bytes: int = 10_000_000, backup_count: int = 5):
        super().__init__()
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.max_bytes = max_bytes
        self.backup_count = backup_count
        self.current_file = self.log_dir / 'events.jsonl'
        self._rotate_if_needed()

    def _rotate_if_needed(self):
        if not self.current_file.exists() or self.current_file.stat().st_size < self.max_bytes:
            return
        for i in range(self.backup_count - 1, 0, -1):
            old_file = self.log_dir / f'events.jsonl.{i}'
            new_file = self.log_dir / f'events.jsonl.{i + 1}'
            if old_file.exists():
                old_file.replace(new_file)
        self.current_file.replace(self.log_dir / 'events.jsonl.1')

    def emit(self, record: logging.LogRecord):
        try:
            self._rotate_if_needed()
            entry = {
                'ts': datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z'),
                'level': record.levelname,
                'logger': record.name,
                'message': record.getMessage(),
                'module': record.module,
                'function': record.funcName,
                'line': record.lineno,
            }
            for key in EVENT_FIELDS:
                if hasattr(record, key):
                    entry[key] = getattr(record, key)
            with open(self.current_file, 'a') as f:
                f.write(json.dumps(entry, default=str) + '\n')
        except Exception:
            self.handleError(record)


def configure_logging(level: str = 'INFO', log_dir: Optional[str] = None, max_bytes: int = 10_000_000,
                      backup_count: int = 5) -> None:
    """Console on stderr plus an optional JSONL event file, attached to the root logger"""
    root = logging.getLogger()
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    for handler in list(root.handlers):
        if getattr(handler, '_vinet', False):
            root.removeHandler(handler)

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    console._vinet = True
    root.addHandler(console)

    if log_dir:
        jsonl = JSONLFileHandler(log_dir, max_bytes=max_bytes, backup_count=backup_count)
        jsonl._vinet = True
        root.addHandler(jsonl)


class ExperimentLogger:
    """Structured events for training and evaluation runs"""

    def __init__(self, name: str = 'vinet'):
        self.logger = logging.getLogger(name)

    def log_event(self, level: str, message: str, tags: List[str] = None, stage: str = None,
                  iteration: int = None, sample_id: int = None, payload: Dict[str, Any] = None):
        log_level = getattr(logging, level.upper(), logging.INFO)
        extra = {}
        if tags:
            extra['tags'] = tags
        if stage:
            extra['stage'] = stage
        if iteration is not None:
            extra['iteration'] = iteration
        if sample_id is not None:
            extra['sample_id'] = sample_id
        if payload:
            extra['payload'] = payload
        self.logger.log(log_level, message, extra=extra)

    def info(self, message: str, **kwargs):
        self.log_event('INFO', message, **kwargs)

    def warning(self, message: str, **kwargs):
        self.log_event('WARNING', message, **kwargs)

    def error(self, message: str, **kwargs):
        self.log_event('ERROR', message, **kwargs)
