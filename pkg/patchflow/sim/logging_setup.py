"""Run logging: console plus an optional log file in the output directory."""

from __future__ import annotations

import contextlib
import logging
import logging.config
from pathlib import Path

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

# third-party loggers that are chatty at DEBUG (PNG chunk dumps)
QUIET_LIBRARIES = ("PIL",)


def parse_level(raw_level: str | None) -> tuple[int, bool]:
    """Map a level name to its number; returns (level, recognised)."""
    name = (raw_level or "").strip().upper() or "INFO"
    level = logging.getLevelName(name)
    if isinstance(level, int):
        return level, True
    return logging.INFO, False


def _open_log_dir(log_path: Path) -> str | None:
    try:
        log_path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return str(exc)
    return None


def build_logging_config(level: int, console_level: int, log_path: Path | None = None) -> dict:
    """Return the dictConfig mapping for a run."""
    handlers: dict[str, dict] = {
        "console": {"class": "logging.StreamHandler", "formatter": "run", "level": console_level},
    }
    if log_path is not None:
        handlers["run_file"] = {
            "class": "logging.FileHandler",
            "filename": str(log_path),
            "mode": "a",
            "encoding": "utf-8",
            "formatter": "run",
        }
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"run": {"format": LOG_FORMAT}},
        "handlers": handlers,
        "loggers": {name: {"level": max(level, logging.INFO)} for name in QUIET_LIBRARIES},
        "root": {"level": level, "handlers": list(handlers)},
    }


def configure_logging(raw_level: str = "INFO", log_path: Path | None = None, quiet: bool = False) -> None:
    """Install console and file logging for a run.

    ``quiet`` lifts only the console to WARNING; the file still records at
    ``raw_level``. A bad level or an unusable log directory is reported as a
    warning once logging is up.
    """
    level, recognised = parse_level(raw_level)
    file_problem = None
    if log_path:
        log_path = Path(log_path)
        file_problem = _open_log_dir(log_path)
        if file_problem:
            log_path = None
    else:
        log_path = None

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        with contextlib.suppress(Exception):
            handler.close()

    logging.captureWarnings(True)
    logging.config.dictConfig(build_logging_config(level, logging.WARNING if quiet else level, log_path))

    log = logging.getLogger(__name__)
    if not recognised:
        log.warning("Unknown log level '%s', using INFO", raw_level)
    if file_problem:
        log.warning("Run log disabled, cannot create its directory: %s", file_problem)
