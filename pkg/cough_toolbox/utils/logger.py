"""Logging utilities for pipeline runs."""

import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

PACKAGE_LOGGER = "cough_toolbox"


class Logger:
    """Package logger with structured context and optional JSON output.

    Library modules log through ``logging.getLogger(__name__)``; this class
    only attaches handlers to the package root so their records are shown.
    """

    def __init__(self, name: str = PACKAGE_LOGGER,
                 level: str = "INFO",
                 log_file: Optional[Union[str, Path]] = None,
                 console_output: bool = True,
                 json_format: bool = False):
        """Initialize logger with configuration."""
        self.name = name
        self.logger = logging.getLogger(name)
        self.logger.setLevel(self._parse_level(level))
        self.json_format = json_format

        self.logger.handlers.clear()
        formatter = self._get_formatter()

        # stdout is reserved for command output
        if console_output:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

        if log_file:
            self.add_file_handler(log_file)

    @staticmethod
    def _parse_level(level: str) -> int:
        value = getattr(logging, level.upper(), None)
        if not isinstance(value, int):
            raise ValueError(f"Unknown log level: {level}")
        return value

    def _get_formatter(self) -> logging.Formatter:
        if self.json_format:
            return JsonFormatter()
        return logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

    def debug(self, message: str, **kwargs: Any) -> None:
        """Log debug message."""
        self._log(logging.DEBUG, message, **kwargs)

    def info(self, message: str, **kwargs: Any) -> None:
        """Log info message."""
        self._log(logging.INFO, message, **kwargs)

    def warning(self, message: str, **kwargs: Any) -> None:
        """Log warning message."""
        self._log(logging.WARNING, message, **kwargs)

    def error(self, message: str, exception: Optional[BaseException] = None,
              **kwargs: Any) -> None:
        """Log error message, attaching exception type and text when given."""
        if exception is not None:
            kwargs['exception_type'] = type(exception).__name__
            kwargs['exception_message'] = str(exception)
        self._log(logging.ERROR, message, **kwargs)

    def _log(self, level: int, message: str, **kwargs: Any) -> None:
        if self.json_format and kwargs:
            self.logger.log(level, message, extra={'context': kwargs})
            return
        if kwargs:
            context_str = " | ".join(f"{k}={v}" for k, v in kwargs.items())
            message = f"{message} | {context_str}"
        self.logger.log(level, message)

    def log_timing(self, stage: str, duration: float, **context: Any) -> None:
        """Log the wall time of a pipeline stage."""
        self.info(f"Stage finished: {stage}",
                  duration_ms=round(duration * 1000, 2), **context)

    def log_cell(self, experiment: str, cell: str, accuracy: float,
                 sigma: float, **context: Any) -> None:
        """Log the outcome of one evaluation grid cell."""
        self.info(f"Cell done: {experiment} {cell}",
                  accuracy=round(accuracy, 6), sigma_acc=round(sigma, 6), **context)

    def add_file_handler(self, log_file: Union[str, Path]) -> None:
        """Add additional file handler."""
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path, encoding="utf-8")
        file_handler.setFormatter(self._get_formatter())
        self.logger.addHandler(file_handler)


class JsonFormatter(logging.Formatter):
    """One JSON object per record: UTC time, level, logger, thread, message, context."""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            "time": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(timespec="milliseconds"),
            "level": record.levelname,
            "logger": record.name,
            "thread": record.threadName,
            "message": record.getMessage(),
        }
        context = getattr(record, "context", None)
        if context:
            entry["context"] = context
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)
