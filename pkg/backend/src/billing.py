"""
Household bills, equity deltas and the revenue-neutrality audit.

Every bill line is rounded half-even to a money quantum on its own and the
lines are then summed, so totals are exact integer sums and independent of
how households are batched.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import ValidationError, ZeroBaseBill
from logging_config import setup_logging
from money import (
    QUANTA_PER_DKK,
    QUANTA_PER_ORE,
    RATE_LINE_DIVISOR,
    WH_PER_KWH,
    div_round_half_even,
    dkk_to_quanta,
    energy_charge_quanta,
    exact_energy_charge_quanta,
    round_half_even,
    to_fraction,
)
from tariff import BaseCaseInputs, TariffRates

logger = setup_logging(__name__)

BASE_CASE_ID = "base"


@dataclass(frozen=True)
class BillBreakdown:
    """One bill in money quanta; ``total`` is the exact sum of the three lines."""
    subscription: int
    offpeak: int
    peak: int
    context: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if min(self.subscription, self.offpeak, self.peak) < 0:
            raise ValidationError("Bill components must be non-negative", field="bill",
                                  value=(self.subscription, self.offpeak, self.peak))

    @property
    def total(self) -> int:
        return self.subscription + self.offpeak + self.peak

    @property
    def exact_total(self) -> Fraction:
        return Fraction(self.total)


@dataclass
class BillTotals:
    """Component sums over a set of households; averages stay exact."""
    households: int = 0
    subscription: int = 0
    offpeak: int = 0
    peak: int = 0

    @property
    def total(self) -> int:
        return self.subscription + self.offpeak + self.peak

    @property
    def exact_total(self) -> Fraction:
        """Average total per household."""
        if not self.households:
            return Fraction(0)
        return Fraction(self.total, self.households)

    def add(self, bill: BillBreakdown, households: int = 1) -> "BillTotals":
        self.households += households
        self.subscription += bill.subscription * households
        self.offpeak += bill.offpeak * households
        self.peak += bill.peak * households
        return self

    def merge(self, other: "BillTotals") -> "BillTotals":
        self.households += other.households
        self.subscription += other.subscription
        self.offpeak += other.offpeak
        self.peak += other.peak
        return self

    def average(self, context: Optional[Dict[str, Any]] = None) -> BillBreakdown:
        """Per-household average, each line rounded half-even to a quantum."""
        if not self.households:
            return BillBreakdown(0, 0, 0, context or {})
        n = self.households
        return BillBreakdown(
            round_half_even(Fraction(self.subscription, n)),
            round_half_even(Fraction(self.offpeak, n)),
            round_half_even(Fraction(self.peak, n)),
            context or {},
        )


@dataclass(frozen=True)
class BillArrays:
    """Vectorised bills, one entry per household, in money quanta."""
    subscription: np.ndarray
    offpeak: np.ndarray
    peak: np.ndarray

    def __len__(self) -> int:
        return len(self.offpeak)

    @property
    def total(self) -> np.ndarray:
        return self.subscription + self.offpeak + self.peak

    def bill(self, index: int, context: Optional[Dict[str, Any]] = None) -> BillBreakdown:
        return BillBreakdown(int(self.subscription[index]), int(self.offpeak[index]),
                             int(self.peak[index]), context or {})

    def totals(self, rows=None) -> BillTotals:
        sub, off, peak = self.subscription, self.offpeak, self.peak
        if rows is not None:
            sub, off, peak = sub[rows], off[rows], peak[rows]
        return BillTotals(len(off), int(sub.sum()), int(off.sum()), int(peak.sum()))


@dataclass(frozen=True)
class EquityDelta:
    delta: Fraction
    base_total: Fraction
    new_total: Fraction

    @property
    def percent(self) -> Fraction:
        return self.delta * 100


def subscription_line(fee_exact: Fraction, multiplier: Union[Fraction, int] = 1) -> int:
    """``m * fee`` in quanta, rounded half-even."""
    multiplier = to_fraction(multiplier)
    if multiplier < 0:
        raise ValidationError("Subscription multiplier must be non-negative", field="multiplier",
                              value=str(multiplier))
    return round_half_even(multiplier * fee_exact * QUANTA_PER_DKK)


def compute_bill(q_peak_wh: int, q_base_wh: int, rates: TariffRates,
                 multiplier: Union[Fraction, int] = 1,
                 context: Optional[Dict[str, Any]] = None) -> BillBreakdown:
    """Subscription ``m * fee`` plus off-peak and peak energy at the effective rates."""
    if q_peak_wh < 0 or q_base_wh < 0:
        raise ValidationError("Consumption must be non-negative", field="consumption",
                              value=(q_peak_wh, q_base_wh))
    return BillBreakdown(
        subscription=subscription_line(rates.fee_exact, multiplier),
        offpeak=energy_charge_quanta(q_base_wh, rates.gt_base_micro),
        peak=energy_charge_quanta(q_peak_wh, rates.gt_peak_micro),
        context=context or {"scenario": rates.scenario_id},
    )


def energy_lines(q_peak_wh: np.ndarray, q_base_wh: np.ndarray,
                 rates: TariffRates) -> Tuple[np.ndarray, np.ndarray]:
    """Off-peak and peak lines per household, in quanta."""
    q_peak = np.asarray(q_peak_wh, dtype=np.int64)
    q_base = np.asarray(q_base_wh, dtype=np.int64)
    offpeak = div_round_half_even(q_base * rates.gt_base_micro, RATE_LINE_DIVISOR)
    peak = div_round_half_even(q_peak * rates.gt_peak_micro, RATE_LINE_DIVISOR)
    return offpeak, peak


def compute_bills(q_peak_wh: np.ndarray, q_base_wh: np.ndarray, rates: TariffRates,
                  multipliers: Union[Fraction, int, Sequence[Fraction]] = 1) -> BillArrays:
    """
    Vectorised ``compute_bill`` over households.

    ``multipliers`` is one value for everybody or one per household.
    """
    offpeak, peak = energy_lines(q_peak_wh, q_base_wh, rates)
    if isinstance(multipliers, (int, Fraction)):
        subscription = np.full(len(offpeak), subscription_line(rates.fee_exact, multipliers), dtype=np.int64)
    else:
        if len(multipliers) != len(offpeak):
            raise ValidationError("One multiplier per household is required", field="multipliers",
                                  value=len(multipliers))
        lines = {m: subscription_line(rates.fee_exact, m) for m in set(multipliers)}
        subscription = np.fromiter((lines[m] for m in multipliers), dtype=np.int64, count=len(offpeak))
    return BillArrays(subscription, offpeak, peak)


def bill_base_case(q_total_wh: int, inputs: BaseCaseInputs,
                   context: Optional[Dict[str, Any]] = None) -> BillBreakdown:
    """Flat base case: subscription plus all energy at the flat rate, booked as off-peak."""
    if q_total_wh < 0:
        raise ValidationError("Consumption must be non-negative", field="consumption", value=q_total_wh)
    return BillBreakdown(
        subscription=dkk_to_quanta(inputs.base_fee),
        offpeak=round_half_even(exact_energy_charge_quanta(q_total_wh, inputs.flat_rate)),
        peak=0,
        context=context or {"scenario": BASE_CASE_ID},
    )


def base_case_bills(q_total_wh: np.ndarray, inputs: BaseCaseInputs) -> BillArrays:
    """Vectorised ``bill_base_case``."""
    q_total = np.asarray(q_total_wh, dtype=np.int64)
    rate = inputs.flat_rate
    # Wh * øre/kWh -> quanta: q * num * QUANTA_PER_ORE / (den * WH_PER_KWH)
    offpeak = div_round_half_even(q_total * (rate.numerator * QUANTA_PER_ORE), rate.denominator * WH_PER_KWH)
    subscription = np.full(len(q_total), dkk_to_quanta(inputs.base_fee), dtype=np.int64)
    return BillArrays(subscription, offpeak, np.zeros(len(q_total), dtype=np.int64))


def equity_delta(bill: Union[BillBreakdown, BillTotals],
                 base: Union[BillBreakdown, BillTotals]) -> EquityDelta:
    """
    Relative change of a bill against its base-case bill.

    Raises:
        ZeroBaseBill: the base bill is zero
    """
    base_total = base.exact_total
    new_total = bill.exact_total
    if base_total <= 0:
        raise ZeroBaseBill(getattr(base, "context", None))
    return EquityDelta((new_total - base_total) / base_total, base_total, new_total)


def component_shares(bill: Union[BillBreakdown, BillTotals]) -> Tuple[Fraction, Fraction, Fraction]:
    """Subscription, off-peak and peak share of the total; all zero for a zero bill."""
    total = bill.total
    if total == 0:
        return Fraction(0), Fraction(0), Fraction(0)
    return (Fraction(bill.subscription, total), Fraction(bill.offpeak, total),
            Fraction(bill.peak, total))


@dataclass(frozen=True)
class AuditResult:
    cell: str
    collected: int
    target: int
    tolerance: int

    @property
    def residual(self) -> int:
        return self.collected - self.target

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= self.tolerance


def rate_quantization_bound(energy_wh: int) -> int:
    """
    Largest revenue shift, in quanta, from carrying rates at whole micro-øre/kWh.

    Each effective rate is at most half a micro-øre/kWh away from its exact
    value, so the bound depends on the billed energy alone.
    """
    return ceil(Fraction(int(energy_wh), 2 * RATE_LINE_DIVISOR))


def revenue_tolerance(households: int, groups: int, energy_wh: int = 0) -> int:
    """
    Half a quantum per household and one quantum per group line.

    ``energy_wh`` is the energy billed at quantized effective rates; pass 0
    when the rates are exact.
    """
    return (households + 1) // 2 + groups + rate_quantization_bound(energy_wh)


def audit_revenue(totals: Union[np.ndarray, Iterable[int], int],
                  target: Union[Fraction, int],
                  tolerance: int,
                  cell: str = "") -> AuditResult:
    """
    Compare collected revenue with the cost target, both in quanta.

    ``totals`` is a sequence of per-household bill totals or their sum.
    """
    if isinstance(totals, (int, np.integer)):
        collected = int(totals)
    else:
        values = totals if isinstance(totals, np.ndarray) else list(totals)
        collected = int(np.asarray(values, dtype=np.int64).sum())
    result = AuditResult(cell, collected, round_half_even(to_fraction(target)), int(tolerance))
    log = logger.info if result.passed else logger.error
    log("Revenue audit", extra={
        "cell": cell,
        "residual_quanta": result.residual,
        "tolerance_quanta": result.tolerance,
        "passed": result.passed,
    })
    return result
