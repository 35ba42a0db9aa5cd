"""
Exact money, rate and energy arithmetic.

Energy is carried as integer watt-hours, money as integer quanta of 10^-4 DKK
and effective rates as integer micro-øre per kWh. Anything in between is an
exact ``Fraction``; rounding happens only where a value becomes one of those
integers, and always half-to-even.
"""

from decimal import Decimal, ROUND_HALF_EVEN
from fractions import Fraction
from typing import Any, Union

import numpy as np

# 1 DKK = 10_000 quanta
QUANTA_PER_DKK = 10_000
# 1 øre = 0.01 DKK = 100 quanta
QUANTA_PER_ORE = 100
# effective rates are carried at 10^-6 øre/kWh
MICRO_ORE_PER_ORE = 1_000_000
WH_PER_KWH = 1_000

# quanta = Wh * micro-øre/kWh / RATE_LINE_DIVISOR
RATE_LINE_DIVISOR = WH_PER_KWH * MICRO_ORE_PER_ORE // QUANTA_PER_ORE

CENTS = Decimal("0.01")
DECI = Decimal("0.1")

Number = Union[int, float, str, Decimal, Fraction]


def to_fraction(value: Any) -> Fraction:
    """
    Convert numeric input to an exact Fraction.

    Floats go through their shortest decimal representation so that a YAML
    ``0.8`` means exactly 8/10 rather than the nearest binary double.
    """
    if value is None:
        raise ValueError("Cannot convert None to a number")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"Cannot convert boolean {value!r} to a number")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        value = repr(float(value))
    try:
        return Fraction(Decimal(str(value).strip()))
    except Exception as e:
        raise ValueError(f"Cannot convert {value!r} to an exact number: {e}")


def round_half_even(value: Fraction) -> int:
    """Round an exact rational to the nearest integer, ties to even."""
    return round(Fraction(value))


def dkk_to_quanta(amount_dkk: Number) -> int:
    return round_half_even(to_fraction(amount_dkk) * QUANTA_PER_DKK)


def ore_to_micro(rate_ore_per_kwh: Fraction) -> int:
    """Quantize an exact øre/kWh rate to integer micro-øre/kWh."""
    return round_half_even(rate_ore_per_kwh * MICRO_ORE_PER_ORE)


def micro_to_ore(rate_micro: int) -> Fraction:
    return Fraction(rate_micro, MICRO_ORE_PER_ORE)


def kwh_to_wh(kwh: Number) -> int:
    wh = to_fraction(kwh) * WH_PER_KWH
    if wh.denominator != 1:
        raise ValueError(f"{kwh} kWh is not a whole number of Wh")
    return int(wh)


def energy_charge_quanta(energy_wh: int, rate_micro: int) -> int:
    """Charge for ``energy_wh`` at ``rate_micro`` micro-øre/kWh, rounded to a quantum."""
    return round_half_even(Fraction(int(energy_wh) * int(rate_micro), RATE_LINE_DIVISOR))


def exact_energy_charge_quanta(energy_wh: int, rate_ore: Fraction) -> Fraction:
    """Unrounded charge in quanta for an exact øre/kWh rate."""
    return Fraction(int(energy_wh), WH_PER_KWH) * rate_ore * QUANTA_PER_ORE


def div_round_half_even(numerator: np.ndarray, denominator) -> np.ndarray:
    """
    Element-wise ``round(numerator / denominator)`` with ties to even.

    Works on non-negative int64 arrays without leaving integer arithmetic;
    ``denominator`` is a positive int or an array broadcastable to ``numerator``.
    """
    num = np.asarray(numerator, dtype=np.int64)
    den = np.asarray(denominator, dtype=np.int64)
    if np.any(den <= 0):
        raise ValueError("denominator must be positive")
    if np.any(num < 0):
        raise ValueError("numerator must be non-negative")
    q, r = np.divmod(num, den)
    twice = 2 * r
    up = (twice > den) | ((twice == den) & (q % 2 == 1))
    return q + up.astype(np.int64)


def format_dkk(quanta: Union[int, Fraction], places: Decimal = CENTS) -> str:
    """Render quanta as DKK with dot decimals, rounded half-even at render time."""
    value = Fraction(quanta) / QUANTA_PER_DKK
    dec = Decimal(value.numerator) / Decimal(value.denominator)
    return str(dec.quantize(places, rounding=ROUND_HALF_EVEN))


def format_fraction(value: Fraction, places: int = 6) -> str:
    """Render an exact rational with a fixed number of decimals, half-even."""
    quantum = Decimal(1).scaleb(-places)
    dec = Decimal(value.numerator) / Decimal(value.denominator)
    return str(dec.quantize(quantum, rounding=ROUND_HALF_EVEN))


def format_percent(value: Fraction, places: int = 2) -> str:
    """Render a fraction (0.074) as a percentage string ("7.40")."""
    return format_fraction(value * 100, places)
