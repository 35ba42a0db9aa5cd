"""
Error reporting shared by the CLI and the HTTP service.

A failure is logged once under a short correlation id and then mapped to a
process exit code or to an HTTP status with a JSON body.
"""

import uuid
from typing import Any, Dict, Optional, Tuple

from fastapi.responses import JSONResponse

from exceptions import AuditFailure, DataError, TariffSimError, ValidationError
from logging_config import setup_logging

logger = setup_logging(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_AUDIT = 2

# set on exceptions once they have been logged
LOGGED_ID_ATTR = "error_id"


def _jsonable(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


class ErrorHandler:

    @staticmethod
    def generate_error_id() -> str:
        return uuid.uuid4().hex[:8]

    @staticmethod
    def log_error(error: Exception, error_id: str, context: Optional[Dict[str, Any]] = None) -> None:
        record = {
            "error_id": error_id,
            "error_type": type(error).__name__,
            "error_message": str(error),
            "context": context or {},
        }
        if isinstance(error, TariffSimError):
            record["error_details"] = error.details
        logger.error(f"{type(error).__name__} [{error_id}]: {error}", extra=record)

    @staticmethod
    def status_code_for(error: Exception) -> int:
        """400 for bad input or data, 409 for a failed revenue audit, 500 for the rest."""
        if isinstance(error, (ValidationError, DataError)):
            return 400
        if isinstance(error, AuditFailure):
            return 409
        return 500

    @staticmethod
    def exit_code_for(error: Exception) -> int:
        return EXIT_AUDIT if isinstance(error, AuditFailure) else EXIT_VALIDATION

    @staticmethod
    def create_error_response(error: Exception, error_id: str,
                              context: Optional[Dict[str, Any]] = None) -> Tuple[int, Dict[str, Any]]:
        """HTTP status and JSON body for ``error``."""
        body: Dict[str, Any] = {
            "error": True,
            "error_id": error_id,
            "message": getattr(error, "message", str(error)),
            "type": type(error).__name__,
        }
        if context:
            body["context"] = context
        if isinstance(error, TariffSimError):
            body["details"] = _jsonable(error.details)
        return ErrorHandler.status_code_for(error), body

    @staticmethod
    def handle_error_response(error: Exception, context: Optional[Dict[str, Any]] = None) -> JSONResponse:
        """Errors already logged by an ``ErrorContext`` keep its id and are not logged again."""
        error_id = getattr(error, LOGGED_ID_ATTR, None)
        if error_id is None:
            error_id = ErrorHandler.generate_error_id()
            ErrorHandler.log_error(error, error_id, context)
        status_code, body = ErrorHandler.create_error_response(error, error_id, context)
        return JSONResponse(status_code=status_code, content=body)


class ErrorContext:
    """Log the start and end of a pipeline stage; a failure is logged with the stage's context and re-raised."""

    def __init__(self, operation: str, context: Optional[Dict[str, Any]] = None):
        self.operation = operation
        self.context = context or {}
        self.error_id = ErrorHandler.generate_error_id()

    def _extra(self) -> Dict[str, Any]:
        return {"operation": self.operation, "context": self.context, "error_id": self.error_id}

    def __enter__(self):
        logger.info(f"{self.operation} started", extra=self._extra())
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            logger.info(f"{self.operation} finished", extra=self._extra())
        elif getattr(exc_val, LOGGED_ID_ATTR, None) is None:
            ErrorHandler.log_error(exc_val, self.error_id, {**self.context, "operation": self.operation})
            try:
                setattr(exc_val, LOGGED_ID_ATTR, self.error_id)
            except AttributeError:
                pass
        return False
