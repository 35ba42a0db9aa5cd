"""
Reusable input validation helpers shared by the configuration models and the
CSV parsers.
"""

import re
from fractions import Fraction
from typing import Any, Iterable, List, Sequence

from exceptions import ValidationError
from money import to_fraction

MAX_GRID_LENGTH = 1001
HOUSEHOLD_ID_PATTERN = re.compile(r"^[A-Za-z0-9._:-]{1,64}$")


def validate_numeric_range(value: Any,
                           min_val: Any,
                           max_val: Any,
                           field_name: str = "value",
                           min_inclusive: bool = True,
                           max_inclusive: bool = True) -> Fraction:
    """
    Validate a numeric value is within an allowed range.

    Args:
        value: Numeric value to validate (int, float, str or Decimal)
        min_val: Minimum allowed value
        max_val: Maximum allowed value
        field_name: Name of field for error messages
        min_inclusive: Whether ``min_val`` itself is allowed
        max_inclusive: Whether ``max_val`` itself is allowed

    Returns:
        The value as an exact Fraction

    Raises:
        ValidationError: If value is not numeric or out of range
    """
    try:
        exact = to_fraction(value)
    except ValueError:
        raise ValidationError(f"{field_name} must be a number", field=field_name, value=value)

    lo, hi = to_fraction(min_val), to_fraction(max_val)
    below = exact < lo if min_inclusive else exact <= lo
    above = exact > hi if max_inclusive else exact >= hi
    if below or above:
        left = "[" if min_inclusive else "("
        right = "]" if max_inclusive else ")"
        raise ValidationError(
            f"{field_name} must be in {left}{min_val}, {max_val}{right}",
            field=field_name,
            value=str(value),
            constraint="range",
        )
    return exact


def validate_enum_value(value: str,
                        allowed_values: Iterable[str],
                        field_name: str = "value") -> str:
    """
    Validate an enum value against its allowed list.

    Raises:
        ValidationError: If value is not in allowed list
    """
    allowed = list(allowed_values)
    if not isinstance(value, str):
        raise ValidationError(f"{field_name} must be a string", field=field_name, value=value)
    cleaned = value.strip()
    if cleaned not in allowed:
        raise ValidationError(
            f"{field_name} must be one of: {allowed}",
            field=field_name,
            value=value,
            constraint="enum",
        )
    return cleaned


def validate_factor_grid(values: Sequence[Any], field_name: str = "factor_grid") -> List[Fraction]:
    """Validate a redistribution factor grid: non-empty, each value in [0, 1], no duplicates."""
    if not values:
        raise ValidationError(f"{field_name} must not be empty", field=field_name)
    if len(values) > MAX_GRID_LENGTH:
        raise ValidationError(
            f"{field_name} too long: {len(values)} > {MAX_GRID_LENGTH}",
            field=field_name,
        )
    grid = [validate_numeric_range(v, 0, 1, field_name) for v in values]
    if len(set(grid)) != len(grid):
        raise ValidationError(f"{field_name} contains duplicates", field=field_name, value=list(map(str, values)))
    return grid


def validate_household_id(value: str) -> str:
    """Household ids are opaque but must be printable tokens safe to echo into CSV."""
    if not isinstance(value, str) or not HOUSEHOLD_ID_PATTERN.match(value):
        raise ValidationError("Invalid household id", field="household_id", value=value)
    return value
