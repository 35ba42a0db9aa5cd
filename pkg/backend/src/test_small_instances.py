"""
Pipeline bills against a plain per-household loop on small random instances.
"""

from fractions import Fraction
from math import floor

import numpy as np
import pytest

from billing import compute_bills
from domain import STATUS_TECH_GROUPS, Status
from redistribution import RedistributionPolicy, subscription_vector
from tariff import BaseCaseInputs, TariffScenario, calibrate_tou, detect_peak_hours, solve_scenario, \
    split_consumption

HOURS = 24
FLAT_RATE = Fraction(73, 4)
BASE_FEE = Fraction(2144, 5)
RHO = Fraction(4, 5)
SHARES = [Fraction(0), Fraction(1, 4), None, Fraction(3, 4), Fraction(1)]
FRACTIONS = [Fraction(1, 24), Fraction(1, 12), Fraction(1, 6), Fraction(1, 4)]


def random_instance(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 11))
    energy = rng.integers(1, 5000, size=(n, HOURS))
    groups = [STATUS_TECH_GROUPS[int(i)] for i in rng.integers(0, len(STATUS_TECH_GROUPS), size=n)]
    if all(g.status is Status.LOW for g in groups):
        groups[0] = next(g for g in STATUS_TECH_GROUPS if g.status is not Status.LOW)
    share = SHARES[int(rng.integers(0, len(SHARES)))]
    fraction = FRACTIONS[int(rng.integers(0, len(FRACTIONS)))]
    factor = Fraction(int(rng.integers(0, 11)), 10)
    return energy, groups, share, fraction, factor


def pipeline_bills(energy, groups, share, fraction, factor):
    inputs = BaseCaseInputs(FLAT_RATE, BASE_FEE, int(energy.sum()), len(groups))
    window = detect_peak_hours(energy.sum(axis=0), fraction)
    q_peak, q_base = split_consumption(energy, window)
    calibration = calibrate_tou(inputs, RHO, int(q_peak.sum()), int(q_base.sum()))
    rates = solve_scenario(inputs, TariffScenario("s", share, RHO, fraction), calibration)
    census = {}
    for group in groups:
        census[group] = census.get(group, 0) + 1
    multipliers = subscription_vector(RedistributionPolicy(factor), census)
    bills = compute_bills(q_peak, q_base, rates, [multipliers.for_group(g) for g in groups])
    return bills.subscription.tolist(), bills.offpeak.tolist(), bills.peak.tolist()


def looped_bills(energy, groups, share, fraction, factor):
    rows = energy.tolist()
    n = len(rows)
    load = [sum(row[h] for row in rows) for h in range(HOURS)]
    peak_hours = sorted(range(HOURS), key=lambda h: (-load[h], h))[:floor(fraction * HOURS)]

    q_total = sum(load)
    volumetric = Fraction(q_total, 1000) * FLAT_RATE / 100
    total_cost = volumetric + n * BASE_FEE
    base_share = volumetric / total_cost
    s = base_share if share is None else share
    fee = (1 - s) * total_cost / n

    q_peak_sys = sum(load[h] for h in peak_hours)
    q_base_sys = q_total - q_peak_sys
    gt_base = RHO * FLAT_RATE
    gt_peak = (volumetric * 100 - Fraction(q_base_sys, 1000) * gt_base) / Fraction(q_peak_sys, 1000)
    scale = s / base_share
    base_micro = round(scale * gt_base * 1_000_000)
    peak_micro = round(scale * gt_peak * 1_000_000)

    n_low = sum(1 for g in groups if g.status is Status.LOW)
    x_incr = 1 + (1 - factor) * Fraction(n_low, n - n_low)

    subscription, offpeak, peak = [], [], []
    for row, group in zip(rows, groups):
        q_peak = sum(row[h] for h in peak_hours)
        q_base = sum(row) - q_peak
        m = factor if group.status is Status.LOW else x_incr
        subscription.append(round(m * fee * 10_000))
        offpeak.append(round(Fraction(q_base * base_micro, 10_000_000)))
        peak.append(round(Fraction(q_peak * peak_micro, 10_000_000)))
    return subscription, offpeak, peak


@pytest.mark.parametrize("seed", range(200))
def test_pipeline_matches_household_loop(seed):
    instance = random_instance(seed)
    assert pipeline_bills(*instance) == looped_bills(*instance)
