from fractions import Fraction

import numpy as np
import pytest

from billing import (
    AuditResult,
    BillArrays,
    BillBreakdown,
    BillTotals,
    audit_revenue,
    base_case_bills,
    bill_base_case,
    component_shares,
    compute_bill,
    compute_bills,
    equity_delta,
    rate_quantization_bound,
    revenue_tolerance,
    subscription_line,
)
from exceptions import ValidationError, ZeroBaseBill
from money import dkk_to_quanta, format_dkk, format_percent
from tariff import BaseCaseInputs, TariffRates, TariffScenario, calibrate_tou, solve_scenario

FLAT_RATE = Fraction(73, 4)
BASE_FEE = Fraction(2144, 5)


def base_inputs():
    return BaseCaseInputs(FLAT_RATE, BASE_FEE, 51_920_000, 20)


def quoted_rates(fee=Fraction(4219, 10)):
    """Fee with the 14.6 / 66.52 øre/kWh blocks."""
    calibration = calibrate_tou(base_inputs(), Fraction(4, 5), 3_650_000, 48_270_000)
    return TariffRates(
        scenario_id="quoted",
        volumetric_share=Fraction(11, 20),
        scale=Fraction(1),
        fee_exact=fee,
        fee_quanta=dkk_to_quanta(fee),
        gt_base_micro=14_600_000,
        gt_peak_micro=66_520_000,
        calibration=calibration,
    )


class TestComputeBill:
    def test_quoted_example(self):
        bill = compute_bill(150_000, 2_000_000, quoted_rates())
        assert bill.subscription == 4_219_000
        assert bill.offpeak == 2_920_000
        assert bill.peak == 997_800
        assert format_dkk(bill.total) == "813.68"

    def test_zero_consumption_pays_subscription(self):
        bill = compute_bill(0, 0, quoted_rates())
        assert bill.total == bill.subscription == 4_219_000

    def test_multiplier_scales_subscription_only(self):
        bill = compute_bill(150_000, 2_000_000, quoted_rates(), multiplier=Fraction(1, 2))
        assert bill.subscription == 2_109_500
        assert bill.offpeak == 2_920_000

    def test_exempt_household(self):
        assert compute_bill(10, 10, quoted_rates(), multiplier=0).subscription == 0

    def test_rejects_negative_input(self):
        with pytest.raises(ValidationError, match="non-negative"):
            compute_bill(-1, 0, quoted_rates())
        with pytest.raises(ValidationError, match="multiplier must be non-negative"):
            subscription_line(Fraction(100), Fraction(-1))

    def test_components_must_be_non_negative(self):
        with pytest.raises(ValidationError, match="non-negative"):
            BillBreakdown(-1, 0, 0)

    def test_affine_in_volumetric_share(self):
        calibration = calibrate_tou(base_inputs(), Fraction(4, 5), 3_650_000, 48_270_000)
        bills = {}
        for share in (Fraction(0), Fraction(1, 4), Fraction(1)):
            rates = solve_scenario(base_inputs(), TariffScenario("s", share), calibration)
            bills[share] = compute_bill(412_345, 2_021_855, rates).total
        interpolated = Fraction(3, 4) * bills[Fraction(0)] + Fraction(1, 4) * bills[Fraction(1)]
        # each energy line and its micro-øre rate round once per share
        assert abs(bills[Fraction(1, 4)] - interpolated) <= 2


class TestVectorisedBills:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.q_peak = rng.integers(0, 2_000_000, size=200)
        self.q_base = rng.integers(0, 20_000_000, size=200)
        self.rates = quoted_rates()

    def test_matches_scalar_form(self):
        multipliers = [Fraction(i % 3, 2) for i in range(200)]
        arrays = compute_bills(self.q_peak, self.q_base, self.rates, multipliers)
        for i in range(0, 200, 17):
            scalar = compute_bill(int(self.q_peak[i]), int(self.q_base[i]), self.rates, multipliers[i])
            assert arrays.bill(i) == scalar
        assert len(arrays) == 200

    def test_scalar_multiplier(self):
        arrays = compute_bills(self.q_peak, self.q_base, self.rates, 1)
        assert set(arrays.subscription.tolist()) == {4_219_000}

    def test_multiplier_count_must_match(self):
        with pytest.raises(ValidationError, match="One multiplier per household"):
            compute_bills(self.q_peak, self.q_base, self.rates, [Fraction(1)] * 3)

    def test_totals(self):
        arrays = compute_bills(self.q_peak, self.q_base, self.rates)
        totals = arrays.totals()
        assert totals.households == 200
        assert totals.total == int(arrays.total.sum())
        subset = arrays.totals(np.arange(10))
        assert subset.households == 10
        assert subset.offpeak == int(arrays.offpeak[:10].sum())


class TestBaseCase:
    @pytest.mark.parametrize("kwh_wh,expected", [
        (2_434_200, "873.04"),
        (4_000_000, "1158.80"),
        (0, "428.80"),
    ])
    def test_flat_bill(self, kwh_wh, expected):
        bill = bill_base_case(kwh_wh, base_inputs())
        assert bill.peak == 0
        assert format_dkk(bill.total) == expected

    def test_vectorised_matches_scalar(self):
        totals = np.array([2_434_200, 4_000_000, 0, 1, 3_333_333])
        arrays = base_case_bills(totals, base_inputs())
        for i, q in enumerate(totals):
            assert arrays.bill(i) == bill_base_case(int(q), base_inputs())
        assert arrays.total.tolist()[:3] == [8_730_415, 11_588_000, 4_288_000]


class TestEquityAndShares:
    def test_delta(self):
        delta = equity_delta(BillBreakdown(9_376_000, 0, 0), BillBreakdown(8_730_000, 0, 0))
        assert format_percent(delta.delta) == "7.40"
        assert delta.percent == delta.delta * 100

    def test_delta_against_totals(self):
        bill = BillTotals(households=2, subscription=10, offpeak=10, peak=0)
        base = BillTotals(households=1, subscription=5, offpeak=0, peak=0)
        assert equity_delta(bill, base).delta == 1

    def test_zero_base_bill(self):
        with pytest.raises(ZeroBaseBill, match="undefined"):
            equity_delta(BillBreakdown(1, 0, 0), BillBreakdown(0, 0, 0))

    def test_component_shares(self):
        shares = component_shares(BillBreakdown(50, 30, 20))
        assert shares == (Fraction(1, 2), Fraction(3, 10), Fraction(1, 5))
        assert sum(shares) == 1

    def test_zero_bill_shares(self):
        assert component_shares(BillBreakdown(0, 0, 0)) == (0, 0, 0)


class TestBillTotals:
    def test_add_merge_average(self):
        totals = BillTotals().add(BillBreakdown(10, 5, 1), households=3)
        totals.merge(BillTotals(1, 11, 4, 0))
        assert (totals.households, totals.subscription, totals.offpeak, totals.peak) == (4, 41, 19, 3)
        assert totals.exact_total == Fraction(63, 4)
        average = totals.average()
        assert (average.subscription, average.offpeak, average.peak) == (10, 5, 1)

    def test_empty(self):
        assert BillTotals().exact_total == 0
        assert BillTotals().average().total == 0


class TestRevenueAudit:
    def test_tolerance(self):
        assert revenue_tolerance(240, 40) == 160
        # 30 MWh at rates off by half a micro-øre/kWh shifts revenue by 1.5 quanta
        assert revenue_tolerance(7, 2, 30_000_000) == 4 + 2 + 2

    def test_rate_quantization_bound(self):
        assert rate_quantization_bound(0) == 0
        assert rate_quantization_bound(1000) == 1
        assert rate_quantization_bound(515_680_000_000) == 25_784

    def test_pass_and_fail(self):
        passed = audit_revenue(np.array([100, 200, 300]), Fraction(1199, 2), 1, cell="x@1.0")
        assert passed.passed and passed.residual == 0
        failed = audit_revenue(700, 600, 50, cell="x@0.0")
        assert not failed.passed
        assert failed.residual == 100
        assert audit_revenue([1, 2], 3, 0).passed

    def test_one_krone_error_is_caught(self):
        bills = compute_bills(np.full(240, 150_000), np.full(240, 2_000_000), quoted_rates())
        target = int(bills.total.sum())
        tolerance = revenue_tolerance(240, 1)
        assert audit_revenue(bills.total, target, tolerance).passed
        corrupted = bills.total.copy()
        corrupted[17] += dkk_to_quanta(1)
        assert not audit_revenue(corrupted, target, tolerance).passed

    def test_wrong_fee_is_caught(self):
        q_peak, q_base = np.full(240, 150_000), np.full(240, 2_000_000)
        target = int(compute_bills(q_peak, q_base, quoted_rates()).total.sum())
        tolerance = revenue_tolerance(240, 1, int(q_peak.sum() + q_base.sum()))
        wrong = compute_bills(q_peak, q_base, quoted_rates(Fraction(4219, 10) + 10))
        result = audit_revenue(wrong.total, target, tolerance)
        assert result.residual == 240 * dkk_to_quanta(10)
        assert not result.passed

    def test_audit_result(self):
        result = AuditResult("c", collected=95, target=100, tolerance=5)
        assert result.residual == -5
        assert result.passed
