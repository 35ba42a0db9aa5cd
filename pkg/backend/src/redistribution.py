"""
Redistribution of the subscription: low-status households pay a fraction ``r``
of the fee and every other household pays ``x_incr`` times the fee, with

    x_incr = 1 + (1 - r) * N_low / N_other

so that N_low * r + N_other * x_incr = N and subscription revenue is unchanged.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Mapping, Union

from domain import StatusTechGroup, Status
from exceptions import NoSubsidizers, ValidationError
from logging_config import setup_logging
from money import QUANTA_PER_DKK, round_half_even, to_fraction

logger = setup_logging(__name__)


def _factor(value) -> Fraction:
    factor = to_fraction(value)
    if not 0 <= factor <= 1:
        raise ValidationError("Redistribution factor must be in [0, 1]", field="factor", value=str(value))
    return factor


@dataclass(frozen=True)
class RedistributionPolicy:
    factor: Fraction
    eligible_status: Status = Status.LOW

    def __post_init__(self):
        object.__setattr__(self, "factor", _factor(self.factor))

    def is_eligible(self, group: StatusTechGroup) -> bool:
        return group.status is self.eligible_status


def redistribution_multiplier(factor: Union[Fraction, str, float], n_low: int, n_other: int) -> Fraction:
    """
    Multiplier on the fee paid by non-eligible households.

    Raises:
        NoSubsidizers: nobody outside the eligible class while r < 1
    """
    r = _factor(factor)
    if n_low < 0 or n_other < 0:
        raise ValidationError("Household counts must be non-negative", field="households")
    if n_other == 0:
        if r < 1 and n_low > 0:
            raise NoSubsidizers(r, n_low)
        return Fraction(1)
    return 1 + (1 - r) * Fraction(n_low, n_other)


@dataclass(frozen=True)
class SubscriptionMultipliers:
    factor: Fraction
    x_incr: Fraction
    n_low: int
    n_other: int
    multipliers: Mapping[StatusTechGroup, Fraction]

    @property
    def households(self) -> int:
        return self.n_low + self.n_other

    def for_group(self, group: StatusTechGroup) -> Fraction:
        return self.multipliers[group]

    def conservation_residual(self) -> Fraction:
        """N_low * r + N_other * x_incr - N; zero by construction."""
        return self.n_low * self.factor + self.n_other * self.x_incr - self.households

    def subscription_quanta(self, fee_exact: Fraction) -> Dict[StatusTechGroup, int]:
        """Per-household subscription line for each group, quantized half-even."""
        return {g: round_half_even(m * fee_exact * QUANTA_PER_DKK) for g, m in self.multipliers.items()}


def subscription_vector(policy: RedistributionPolicy,
                        census: Mapping[StatusTechGroup, int]) -> SubscriptionMultipliers:
    """
    Multiplier per populated group: ``r`` for eligible groups, ``x_incr`` for the rest.

    Raises:
        NoSubsidizers: propagated from the multiplier
    """
    n_low = sum(n for g, n in census.items() if policy.is_eligible(g))
    n_other = sum(n for g, n in census.items() if not policy.is_eligible(g))
    x_incr = redistribution_multiplier(policy.factor, n_low, n_other)
    multipliers = {g: (policy.factor if policy.is_eligible(g) else x_incr) for g in census}
    vector = SubscriptionMultipliers(policy.factor, x_incr, n_low, n_other, multipliers)
    if vector.conservation_residual() != 0:
        raise ValidationError("Subscription multipliers do not conserve revenue", field="multipliers")
    logger.debug("Built subscription vector", extra={
        "factor": str(policy.factor),
        "x_incr": float(x_incr),
        "n_low": n_low,
        "n_other": n_other,
    })
    return vector


@dataclass(frozen=True)
class RedistributionTransfer:
    """Per-household amounts moved by the redistribution, in DKK."""
    avoided: Fraction
    surcharge: Fraction
    n_low: int
    n_other: int

    @property
    def ratio(self) -> Fraction:
        """Avoided payment per low-status household over the surcharge per other household."""
        return self.avoided / self.surcharge if self.surcharge else Fraction(0)


def redistribution_transfer(fee: Union[Fraction, str, float],
                            multipliers: SubscriptionMultipliers) -> RedistributionTransfer:
    fee = to_fraction(fee)
    return RedistributionTransfer(
        avoided=fee * (1 - multipliers.factor),
        surcharge=fee * (multipliers.x_incr - 1),
        n_low=multipliers.n_low,
        n_other=multipliers.n_other,
    )

