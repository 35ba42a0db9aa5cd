import logging
from typing import Optional

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class StructuredFormatter(jsonlogger.JsonFormatter):
    """JSON lines with level, logger and call site next to the ``extra`` fields."""

    def add_fields(self, log_record, record, message_dict):
        super().add_fields(log_record, record, message_dict)
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["module"] = record.module
        log_record["function"] = record.funcName
        log_record["line"] = record.lineno


def _formatter(log_format: str) -> logging.Formatter:
    if log_format == "text":
        return logging.Formatter(TEXT_FORMAT)
    return StructuredFormatter("%(timestamp)s %(message)s", timestamp=True)


def setup_logging(name: str, level: Optional[str] = None, log_format: Optional[str] = None,
                  log_file: Optional[str] = None) -> logging.Logger:
    """
    Logger for a module, writing to stderr and, when configured, to a log file.

    Args:
        name: Logger name (usually __name__)
        level: Logging level; defaults to the configured ``log_level``
        log_format: "json" or "text"; defaults to the configured ``log_format``
        log_file: Extra file destination; defaults to the configured ``log_file``
    """
    from config import get_settings

    settings = get_settings()
    level = level or settings.log_level
    log_format = log_format or settings.log_format
    log_file = log_file or settings.log_file

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper()))
    logger.handlers = []

    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(_formatter(log_format))
        logger.addHandler(handler)

    logger.propagate = False
    return logger
