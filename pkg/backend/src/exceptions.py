"""
Custom exception classes for the grid tariff simulator.

This module provides a hierarchy of domain-specific exceptions that carry
structured context, so failures deep inside the pipeline can be reported with
the offending household, group, file line or audit cell.
"""

from typing import Dict, Any, Optional


class TariffSimError(Exception):
    """Base exception for all simulator errors.

    All custom exceptions in the application should inherit from this base class.
    """

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        if self.details:
            return f"{self.message} (Details: {self.details})"
        return self.message


class ValidationError(TariffSimError):
    """Raised when an input value or file fails validation."""

    def __init__(self, message: str, field: Optional[str] = None,
                 value: Optional[Any] = None, constraint: Optional[str] = None,
                 details: Optional[Dict[str, Any]] = None):
        self.field = field
        self.value = value
        self.constraint = constraint

        validation_details = {
            "field": field,
            "value": value,
            "constraint": constraint,
            **(details or {})
        }

        super().__init__(message, validation_details)


class UnmappedCombination(ValidationError):
    """Raised when a household attribute tuple matches no classification rule."""

    def __init__(self, attrs: Any, household_id: Optional[str] = None):
        self.attrs = attrs
        self.household_id = household_id
        super().__init__(
            f"Attribute combination {attrs} is not admitted by the rule table",
            field="attributes",
            value=str(attrs),
            constraint="admitted_key_space",
            details={"household_id": household_id},
        )


class FormatError(ValidationError):
    """Raised when an input file cannot be read at all (e.g. a bad header)."""

    def __init__(self, message: str, file_path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[str] = None):
        self.file_path = file_path
        self.line = line
        self.column = column
        super().__init__(
            message,
            field=column,
            constraint="format",
            details={"file_path": file_path, "line": line},
        )


class DataError(TariffSimError):
    """Raised when data is well-formed but cannot support the requested computation."""

    def __init__(self, message: str, operation: Optional[str] = None,
                 parameters: Optional[Dict[str, Any]] = None,
                 details: Optional[Dict[str, Any]] = None):
        self.operation = operation
        self.parameters = parameters

        data_details = {
            "operation": operation,
            "parameters": parameters,
            **(details or {})
        }

        super().__init__(message, data_details)


class EmptyGroup(DataError):
    """A group average is needed but no clean donor covers the hour."""

    def __init__(self, group: Any, hour: Optional[int] = None):
        self.group = group
        self.hour = hour
        super().__init__(
            f"Group {group} has no clean donor profile"
            + (f" at hour {hour}" if hour is not None else ""),
            operation="category_average_profile",
            parameters={"group": str(group), "hour": hour},
        )


class MixedYearLength(DataError):
    """Profiles with different hour counts were combined."""

    def __init__(self, expected: int, found: int, household_id: Optional[str] = None):
        self.expected = expected
        self.found = found
        super().__init__(
            f"Profile length {found} differs from year length {expected}",
            operation="system_load",
            parameters={"expected": expected, "found": found, "household_id": household_id},
        )


class InfeasibleShares(DataError):
    """A nonzero population share rounds to zero households in strict mode."""

    def __init__(self, category: str, share: float, households: int):
        self.category = category
        super().__init__(
            f"Category '{category}' with share {share:.6g} gets no household out of {households}",
            operation="generate_population",
            parameters={"category": category, "share": share, "households": households},
        )


class EmptyCategory(DataError):
    """A calibration target names a category with no energy to scale."""

    def __init__(self, category: str):
        self.category = category
        super().__init__(
            f"Category '{category}' has no consumption to calibrate",
            operation="calibrate_to_shares",
            parameters={"category": category},
        )


class DegenerateWindow(DataError):
    """The peak fraction selects zero hours."""

    def __init__(self, hours: int, fraction: Any):
        super().__init__(
            f"Peak fraction {fraction} of {hours} hours selects no hour",
            operation="detect_peak_hours",
            parameters={"hours": hours, "fraction": str(fraction)},
        )


class ZeroPeakEnergy(DataError):
    """ToU calibration needs strictly positive energy in both blocks."""

    def __init__(self, q_peak: int, q_base: int):
        super().__init__(
            "Peak and off-peak energy must both be positive to calibrate the ToU blocks",
            operation="calibrate_tou",
            parameters={"q_peak": q_peak, "q_base": q_base},
        )


class NoSubsidizers(DataError):
    """Redistribution requested but there is nobody to carry the shortfall."""

    def __init__(self, factor: Any, n_low: int):
        super().__init__(
            "No medium or high status household available to carry the redistributed subscription",
            operation="redistribution_multiplier",
            parameters={"factor": str(factor), "n_low": n_low},
        )


class ZeroBaseBill(DataError):
    """An equity delta was requested against a zero base-case bill."""

    def __init__(self, context: Optional[Dict[str, Any]] = None):
        super().__init__(
            "Base-case bill is zero; relative change is undefined",
            operation="equity_delta",
            parameters=context,
        )


class AuditFailure(TariffSimError):
    """Revenue neutrality audit residual exceeds its tolerance."""

    def __init__(self, cell: str, residual: int, tolerance: int):
        self.cell = cell
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"Revenue audit failed for {cell}: residual {residual} quanta exceeds {tolerance}",
            {"cell": cell, "residual": residual, "tolerance": tolerance},
        )


class ConfigurationError(TariffSimError):
    """A run, population or rule-table file is missing a value or holds an invalid one."""

    def __init__(self, message: str, config_key: Optional[str] = None, config_value: Optional[Any] = None,
                 details: Optional[Dict[str, Any]] = None):
        self.config_key = config_key
        self.config_value = config_value
        super().__init__(message, {"config_key": config_key, "config_value": config_value, **(details or {})})


class FileOperationError(TariffSimError):
    """An input could not be read or an output could not be written."""

    def __init__(self, message: str, file_path: Optional[str] = None, operation: Optional[str] = None):
        self.file_path = file_path
        self.operation = operation
        super().__init__(message, {"file_path": file_path, "operation": operation})


def file_operation_error(message: str, file_path: str, operation: str) -> FileOperationError:
    return FileOperationError(f"{operation} failed on {file_path}: {message}", file_path=file_path,
                              operation=operation)
