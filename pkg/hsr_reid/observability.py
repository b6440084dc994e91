"""
Centralized Observability Module
Structured logging and stage timing for the HSR pipeline
"""

import logging
import os
import time
from functools import wraps
from typing import Optional

from pythonjsonlogger import jsonlogger

from . import __version__
from .metrics import stage_duration_seconds

SERVICE_NAME = "hsr-reid"

_record_factory_installed = False


def configure_logging(
    level: Optional[str] = None,
    fmt: Optional[str] = None,
) -> logging.Logger:
    """Configure structured JSON (or plain text) logging for the package

    Args:
        level: Log level name, defaults to HSR_LOG_LEVEL or INFO
        fmt: "json" or "text", defaults to HSR_LOG_FORMAT or json

    Returns:
        The package root logger
    """
    global _record_factory_installed

    level = (level or os.getenv("HSR_LOG_LEVEL", "INFO")).upper()
    fmt = (fmt or os.getenv("HSR_LOG_FORMAT", "json")).lower()

    logger = logging.getLogger("hsr_reid")
    logger.setLevel(level)

    # Remove existing handlers
    logger.handlers = []

    log_handler = logging.StreamHandler()
    if fmt == "json":
        formatter = jsonlogger.JsonFormatter(
            fmt='%(asctime)s %(levelname)s %(name)s %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S',
            json_default=str,
        )
    else:
        formatter = logging.Formatter(
            '%(asctime)s %(levelname)s %(name)s %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S',
        )
    log_handler.setFormatter(formatter)
    logger.addHandler(log_handler)
    logger.propagate = False

    # Add service context to all logs
    if not _record_factory_installed:
        old_factory = logging.getLogRecordFactory()

        def record_factory(*args, **kwargs):
            record = old_factory(*args, **kwargs)
            record.service = SERVICE_NAME
            record.version = __version__
            return record

        logging.setLogRecordFactory(record_factory)
        _record_factory_installed = True

    return logger


def timed_stage(stage: str):
    """Decorator to time a pipeline stage, log it and observe the histogram"""

    def decorator(func):
        stage_logger = logging.getLogger(func.__module__)

        @wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration = time.perf_counter() - start
                stage_logger.debug(
                    f"Stage {stage} failed",
                    extra={"stage": stage, "duration_ms": duration * 1000, "error": str(e)},
                )
                raise
            duration = time.perf_counter() - start
            stage_duration_seconds.labels(stage=stage).observe(duration)
            stage_logger.debug(
                f"Stage {stage} completed",
                extra={"stage": stage, "duration_ms": duration * 1000},
            )
            return result

        return wrapper

    return decorator


__all__ = [
    'configure_logging',
    'timed_stage',
]
