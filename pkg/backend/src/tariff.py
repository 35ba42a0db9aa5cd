"""
Peak-hour detection, ToU calibration at the base case and the revenue-neutral
scenario solver.

A scenario recovers the share ``s`` of the total network cost ``T`` through
per-kWh charges and the rest through a flat subscription. The ToU block rates
are calibrated once against the flat base case and then scaled by
``f(s) = s / s_base``, so the fee is affine in ``s`` and the block rates are
linear in it.
"""

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import floor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import DegenerateWindow, ValidationError, ZeroPeakEnergy
from logging_config import setup_logging
from money import QUANTA_PER_DKK, WH_PER_KWH, micro_to_ore, ore_to_micro, round_half_even, to_fraction

logger = setup_logging(__name__)

ORE_PER_DKK = 100
DEFAULT_RECOVERY_FACTOR = Fraction(4, 5)
DEFAULT_PEAK_FRACTION = Fraction(1, 20)


class CalibrationMode(str, Enum):
    OFFPEAK_SCALED = "OffpeakScaled"
    PEAK_SHARE = "PeakShare"


@dataclass(frozen=True)
class BaseCaseInputs:
    """
    The flat base-case tariff and the population it recovers costs from.

    Attributes:
        flat_rate: volumetric rate r_flat in øre/kWh
        base_fee: annual subscription F_base in DKK
        total_energy_wh: annual consumption Q_total in Wh
        households: household count N
        volumetric_revenue_override: V_base in DKK, when pinned instead of derived
    """
    flat_rate: Fraction
    base_fee: Fraction
    total_energy_wh: int
    households: int
    volumetric_revenue_override: Optional[Fraction] = None

    def __post_init__(self):
        if self.households < 1:
            raise ValidationError("Household count must be positive", field="households",
                                  value=self.households)
        if self.flat_rate <= 0:
            raise ValidationError("Flat rate must be positive", field="flat_rate", value=str(self.flat_rate))
        if self.base_fee < 0 or self.total_energy_wh < 0:
            raise ValidationError("Base-case fee and energy must be non-negative", field="base_case")
        share = self.base_share if self.total_cost > 0 else Fraction(0)
        if not 0 < share < 1:
            raise ValidationError(
                "Base case must recover costs through both subscription and volumetric charges",
                field="base_share",
                value=str(share),
                constraint="0 < s_base < 1",
            )

    @property
    def volumetric_revenue(self) -> Fraction:
        """V_base in DKK."""
        if self.volumetric_revenue_override is not None:
            return self.volumetric_revenue_override
        return Fraction(self.total_energy_wh, WH_PER_KWH) * self.flat_rate / ORE_PER_DKK

    @property
    def subscription_revenue(self) -> Fraction:
        return self.households * self.base_fee

    @property
    def total_cost(self) -> Fraction:
        return self.volumetric_revenue + self.subscription_revenue

    @property
    def base_share(self) -> Fraction:
        return self.volumetric_revenue / self.total_cost

    @property
    def total_cost_quanta(self) -> Fraction:
        return self.total_cost * QUANTA_PER_DKK


@dataclass(frozen=True)
class TariffScenario:
    """A tariff design; ``volumetric_share=None`` pins the share to the base case's own."""
    id: str
    volumetric_share: Optional[Fraction]
    recovery_factor: Fraction = DEFAULT_RECOVERY_FACTOR
    peak_fraction: Fraction = DEFAULT_PEAK_FRACTION
    calibration_mode: CalibrationMode = CalibrationMode.OFFPEAK_SCALED

    def __post_init__(self):
        if self.volumetric_share is not None and not 0 <= self.volumetric_share <= 1:
            raise ValidationError("Volumetric share must be in [0, 1]", field="volumetric_share",
                                  value=str(self.volumetric_share))
        if not 0 < self.recovery_factor <= 1:
            raise ValidationError("Recovery factor must be in (0, 1]", field="recovery_factor",
                                  value=str(self.recovery_factor))
        if not 0 < self.peak_fraction < 1:
            raise ValidationError("Peak fraction must be in (0, 1)", field="peak_fraction",
                                  value=str(self.peak_fraction))

    def share_for(self, inputs: BaseCaseInputs) -> Fraction:
        if self.volumetric_share is None:
            return inputs.base_share
        return self.volumetric_share


def canonical_scenarios(recovery_factor: Fraction = DEFAULT_RECOVERY_FACTOR,
                        peak_fraction: Fraction = DEFAULT_PEAK_FRACTION,
                        mode: CalibrationMode = CalibrationMode.OFFPEAK_SCALED) -> List[TariffScenario]:
    """The five designs: full subscription, 25%, the base share, 75% and full volumetric."""
    shares = [("subs_100", Fraction(0)), ("vol_25", Fraction(1, 4)), ("vol_base", None),
              ("vol_75", Fraction(3, 4)), ("vol_100", Fraction(1))]
    return [TariffScenario(sid, share, recovery_factor, peak_fraction, mode) for sid, share in shares]


@dataclass(frozen=True)
class PeakWindow:
    hours: Tuple[int, ...]
    year_length: int

    def __post_init__(self):
        if any(h < 0 or h >= self.year_length for h in self.hours):
            raise ValidationError("Peak window hour out of range", field="hours")
        if list(self.hours) != sorted(set(self.hours)):
            raise ValidationError("Peak window hours must be sorted and unique", field="hours")

    def __len__(self) -> int:
        return len(self.hours)

    @property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.year_length, dtype=bool)
        mask[list(self.hours)] = True
        return mask


def _load_array(load) -> np.ndarray:
    values = getattr(load, "energy", load)
    return np.asarray(values, dtype=np.int64)


def detect_peak_hours(load, fraction: Union[Fraction, float, str]) -> PeakWindow:
    """
    Select the floor(fraction * H) hours with the highest system load.

    Ties are broken by ascending hour index, so the result is unique.

    Raises:
        DegenerateWindow: the fraction selects no hour
    """
    values = _load_array(load)
    fraction = to_fraction(fraction)
    hours = len(values)
    if not 0 < fraction < 1:
        raise ValidationError("Peak fraction must be in (0, 1)", field="peak_fraction", value=str(fraction))
    count = floor(fraction * hours)
    if hours < 1 or count == 0:
        raise DegenerateWindow(hours, fraction)

    # stable sort on negated load keeps ascending hour order within ties
    order = np.argsort(-values, kind="stable")
    selected = np.sort(order[:count])
    window = PeakWindow(tuple(int(h) for h in selected), hours)
    logger.debug("Detected peak window", extra={"hours": hours, "selected": count})
    return window


def split_consumption(energy, window: PeakWindow):
    """
    Partition energy into (peak, off-peak) Wh for a window.

    ``energy`` is one profile (length H) or a households x H block; the return
    values are ints or per-household int64 arrays accordingly.
    """
    values = _load_array(energy)
    if values.shape[-1] != window.year_length:
        raise ValidationError(
            f"Energy has {values.shape[-1]} hours, window expects {window.year_length}",
            field="hours",
        )
    total = values.sum(axis=-1)
    peak = values[..., list(window.hours)].sum(axis=-1)
    if values.ndim == 1:
        return int(peak), int(total - peak)
    return peak, total - peak


@dataclass(frozen=True)
class ToUCalibration:
    """Base-case ToU block rates in øre/kWh and the block energies they were fitted on."""
    gt_base: Fraction
    gt_peak: Fraction
    q_peak_wh: int
    q_base_wh: int
    recovery_factor: Fraction
    mode: CalibrationMode

    @property
    def peak_ratio(self) -> Fraction:
        return self.gt_peak / self.gt_base if self.gt_base else Fraction(0)

    @property
    def peak_energy_share(self) -> Fraction:
        return Fraction(self.q_peak_wh, self.q_peak_wh + self.q_base_wh)


def calibrate_tou(inputs: BaseCaseInputs,
                  recovery_factor: Union[Fraction, str, float],
                  q_peak_wh: int,
                  q_base_wh: int,
                  mode: CalibrationMode = CalibrationMode.OFFPEAK_SCALED) -> ToUCalibration:
    """
    Fit the two ToU blocks so that they recover V_base on the given block energies.

    OffpeakScaled ties the off-peak rate to ``recovery_factor * r_flat`` and
    solves the peak rate; PeakShare lets the off-peak block recover
    ``recovery_factor`` of V_base and the peak block the rest.

    Raises:
        ZeroPeakEnergy: either block has no energy
    """
    rho = to_fraction(recovery_factor)
    if not 0 < rho <= 1:
        raise ValidationError("Recovery factor must be in (0, 1]", field="recovery_factor", value=str(rho))
    if q_peak_wh <= 0 or q_base_wh <= 0:
        raise ZeroPeakEnergy(int(q_peak_wh), int(q_base_wh))
    if q_peak_wh + q_base_wh != inputs.total_energy_wh:
        logger.warning("Block energies differ from the base-case total", extra={
            "q_peak_wh": int(q_peak_wh),
            "q_base_wh": int(q_base_wh),
            "total_energy_wh": inputs.total_energy_wh,
        })

    revenue_ore = inputs.volumetric_revenue * ORE_PER_DKK
    q_peak_kwh = Fraction(int(q_peak_wh), WH_PER_KWH)
    q_base_kwh = Fraction(int(q_base_wh), WH_PER_KWH)

    mode = CalibrationMode(mode)
    if mode is CalibrationMode.OFFPEAK_SCALED:
        gt_base = rho * inputs.flat_rate
        gt_peak = (revenue_ore - q_base_kwh * gt_base) / q_peak_kwh
    else:
        gt_peak = (1 - rho) * revenue_ore / q_peak_kwh
        gt_base = rho * revenue_ore / q_base_kwh

    if gt_peak < 0:
        raise ValidationError(
            "Calibrated peak rate is negative; the off-peak block alone over-recovers V_base",
            field="recovery_factor",
            value=str(rho),
        )

    calibration = ToUCalibration(gt_base, gt_peak, int(q_peak_wh), int(q_base_wh), rho, mode)
    logger.info("Calibrated ToU blocks", extra={
        "mode": mode.value,
        "recovery_factor": str(rho),
        "gt_base_ore": float(gt_base),
        "gt_peak_ore": float(gt_peak),
        "peak_energy_share": float(calibration.peak_energy_share),
    })
    return calibration


@dataclass(frozen=True)
class TariffRates:
    """
    A solved scenario.

    The fee is kept exact (``fee_exact``, DKK) and quantized (``fee_quanta``);
    effective block rates are carried as integer micro-øre/kWh.
    """
    scenario_id: str
    volumetric_share: Fraction
    scale: Fraction
    fee_exact: Fraction
    fee_quanta: int
    gt_base_micro: int
    gt_peak_micro: int
    calibration: ToUCalibration

    @property
    def fee(self) -> Fraction:
        return Fraction(self.fee_quanta, QUANTA_PER_DKK)

    @property
    def fee_exact_quanta(self) -> Fraction:
        return self.fee_exact * QUANTA_PER_DKK

    @property
    def gt_base_eff(self) -> Fraction:
        return micro_to_ore(self.gt_base_micro)

    @property
    def gt_peak_eff(self) -> Fraction:
        return micro_to_ore(self.gt_peak_micro)

    @property
    def gt_base_exact(self) -> Fraction:
        return self.scale * self.calibration.gt_base

    @property
    def gt_peak_exact(self) -> Fraction:
        return self.scale * self.calibration.gt_peak


def solve_scenario(inputs: BaseCaseInputs,
                   scenario: TariffScenario,
                   calibration: ToUCalibration) -> TariffRates:
    """Revenue-neutral fee and effective ToU rates for one scenario."""
    share = scenario.share_for(inputs)
    fee_exact = (1 - share) * inputs.total_cost / inputs.households
    scale = share / inputs.base_share

    rates = TariffRates(
        scenario_id=scenario.id,
        volumetric_share=share,
        scale=scale,
        fee_exact=fee_exact,
        fee_quanta=round_half_even(fee_exact * QUANTA_PER_DKK),
        gt_base_micro=ore_to_micro(scale * calibration.gt_base),
        gt_peak_micro=ore_to_micro(scale * calibration.gt_peak),
        calibration=calibration,
    )
    logger.info("Solved scenario", extra={
        "scenario": scenario.id,
        "volumetric_share": float(share),
        "scale": float(scale),
        "fee_dkk": float(rates.fee),
        "gt_base_eff": float(rates.gt_base_eff),
        "gt_peak_eff": float(rates.gt_peak_eff),
    })
    return rates


def solve_all(inputs: BaseCaseInputs,
              scenarios: Sequence[TariffScenario],
              q_peak_for,
              ) -> List[TariffRates]:
    """
    Calibrate and solve a scenario list.

    ``q_peak_for(peak_fraction)`` returns the (q_peak, q_base) Wh totals for a
    peak fraction; calibrations are shared between scenarios with equal settings.
    """
    calibrations = {}
    solved = []
    for scenario in scenarios:
        key = (scenario.peak_fraction, scenario.recovery_factor, scenario.calibration_mode)
        if key not in calibrations:
            q_peak, q_base = q_peak_for(scenario.peak_fraction)
            calibrations[key] = calibrate_tou(inputs, scenario.recovery_factor, q_peak, q_base,
                                              scenario.calibration_mode)
        solved.append(solve_scenario(inputs, scenario, calibrations[key]))
    return solved
