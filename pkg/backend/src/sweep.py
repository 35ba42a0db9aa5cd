"""
End-to-end sweep: households in, audited bills for every scenario x
redistribution factor out.

Households are processed in blocks of ``chunk_households``. A first pass sums
the system load, peak windows are detected on it, and a second pass splits
each household's energy into peak and off-peak. Blocks are mapped over a
thread pool and merged in submission order with integer sums, so the result
does not depend on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from billing import (
    AuditResult,
    BASE_CASE_ID,
    BillTotals,
    EquityDelta,
    audit_revenue,
    base_case_bills,
    energy_lines,
    equity_delta,
    revenue_tolerance,
)
from config import get_settings
from domain import (
    STATUS_TECH_GROUPS,
    STATUS_TECH_INDEX,
    ClassificationRuleTable,
    HouseholdAttributes,
    StatusTechGroup,
    enumerate_groups,
    load_default_rules,
    read_attributes_csv,
)
from error_handler import ErrorContext
from exceptions import DataError
from logging_config import setup_logging
from metering import (
    DonorTally,
    Exclusion,
    MeteringIssue,
    ProfileBlock,
    SystemLoad,
    classify_block,
    clean_profiles,
    parse_metering,
)
from models import BaseCaseConfig, RunConfig
from money import dkk_to_quanta, format_fraction, round_half_even
from redistribution import RedistributionPolicy, SubscriptionMultipliers, subscription_vector
from synthpop import ShapeLibrary, SyntheticPopulation, annual_energy, generate_population, generate_profiles, \
    load_population_spec
from tariff import BaseCaseInputs, PeakWindow, TariffRates, TariffScenario, detect_peak_hours, solve_all, \
    split_consumption

logger = setup_logging(__name__)


def factor_label(factor: Fraction) -> str:
    """Shortest decimal rendering with at least one fractional digit: 1 -> "1.0", 1/4 -> "0.25"."""
    factor = Fraction(factor)
    places = 1
    while (factor * 10 ** places).denominator != 1 and places < 6:
        places += 1
    return format_fraction(factor, places)


def cell_label(scenario_id: str, factor: Fraction) -> str:
    return f"{scenario_id}@{factor_label(factor)}"


class SyntheticSource:
    """Profile blocks regenerated on demand from a synthetic population."""

    def __init__(self, population: SyntheticPopulation, shapes: ShapeLibrary, annual_wh: np.ndarray,
                 rules: ClassificationRuleTable, block_size: int):
        self.population = population
        self.shapes = shapes
        self.annual_wh = annual_wh
        self.rules = rules
        self.ranges = [(start, min(start + block_size, len(population)))
                       for start in range(0, len(population), block_size)]
        self.exclusions: List[Exclusion] = []
        self.issues: List[MeteringIssue] = []

    @property
    def attributes(self) -> Dict[str, HouseholdAttributes]:
        return self.population.attributes

    @property
    def hours(self) -> int:
        return self.population.spec.hours

    def __len__(self) -> int:
        return len(self.ranges)

    def block(self, index: int) -> Tuple[ProfileBlock, np.ndarray]:
        start, stop = self.ranges[index]
        block = generate_profiles(self.population, self.shapes, self.annual_wh, start, stop)
        key_ids, _ = classify_block(block, self.attributes, self.rules, strict=True)
        return block, key_ids


class MeteringSource:
    """Cleaned blocks of a parsed metering file."""

    def __init__(self, blocks: List[ProfileBlock], key_ids: List[np.ndarray], hours: int,
                 exclusions: List[Exclusion], issues: List[MeteringIssue]):
        self.blocks = blocks
        self.key_ids = key_ids
        self.hours = hours
        self.exclusions = exclusions
        self.issues = issues

    def __len__(self) -> int:
        return len(self.blocks)

    def block(self, index: int) -> Tuple[ProfileBlock, np.ndarray]:
        return self.blocks[index], self.key_ids[index]


def synthetic_source(config: RunConfig, rules: ClassificationRuleTable, block_size: int) -> SyntheticSource:
    spec = load_population_spec(config.population, households=config.households, seed=config.seed,
                                strict=config.strict)
    population = generate_population(spec, rules)
    annual_wh = annual_energy(population)
    shapes = ShapeLibrary.default(spec.hours, spec.shape_parameters)
    return SyntheticSource(population, shapes, annual_wh, rules, block_size)


def metering_source(config: RunConfig, rules: ClassificationRuleTable, block_size: int,
                    pool: ThreadPoolExecutor) -> MeteringSource:
    """Parse, classify and clean a metering file; donor averages span the whole file."""
    hours = get_settings().hours_per_year
    attributes = read_attributes_csv(config.attributes)
    parsed, issues = parse_metering(config.metering, hours=hours)
    pieces = parsed.split(block_size)

    def tally_piece(piece: ProfileBlock) -> DonorTally:
        key_ids, _ = classify_block(piece, attributes, rules, strict=config.strict)
        return DonorTally(len(rules.keys), hours).add(piece, key_ids)

    tally = DonorTally(len(rules.keys), hours)
    for partial in pool.map(tally_piece, pieces):
        tally.merge(partial)

    cleaned = list(pool.map(
        lambda piece: clean_profiles(piece, attributes, rules, on_empty_group=config.on_empty_group,
                                     strict=config.strict, tally=tally),
        pieces,
    ))
    exclusions = [e for result in cleaned for e in result.exclusions]
    return MeteringSource([r.block for r in cleaned], [r.key_ids for r in cleaned], hours, exclusions, issues)


@dataclass
class HouseholdEnergy:
    """Per household: group key, status x tech index, annual energy and its peak splits."""
    key_ids: np.ndarray
    group_index: np.ndarray
    total_wh: np.ndarray
    splits: Dict[Fraction, Tuple[np.ndarray, np.ndarray]]
    windows: Dict[Fraction, PeakWindow]
    load: SystemLoad
    exclusions: List[Exclusion] = field(default_factory=list)
    issues: List[MeteringIssue] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.key_ids)

    def census(self) -> Dict[StatusTechGroup, int]:
        counts = np.bincount(self.group_index, minlength=len(STATUS_TECH_GROUPS))
        return {g: int(counts[i]) for i, g in enumerate(STATUS_TECH_GROUPS) if counts[i] > 0}

    def q_totals(self, fraction: Fraction) -> Tuple[int, int]:
        q_peak, q_base = self.splits[fraction]
        return int(q_peak.sum()), int(q_base.sum())


def key_group_index(rules: ClassificationRuleTable) -> np.ndarray:
    """Status x tech index per group key id."""
    index = np.full(len(rules.keys), -1, dtype=np.int64)
    for key, group in enumerate_groups(rules):
        index[key.id] = STATUS_TECH_INDEX[group]
    return index


def load_households(config: RunConfig,
                    rules: ClassificationRuleTable,
                    fractions: Sequence[Fraction],
                    pool: ThreadPoolExecutor,
                    block_size: int) -> HouseholdEnergy:
    """Run ingestion (or synthesis), system load, peak detection and the per-household split."""
    if config.uses_metering:
        source = metering_source(config, rules, block_size, pool)
    else:
        source = synthetic_source(config, rules, block_size)

    def block_load(index: int) -> np.ndarray:
        block, _ = source.block(index)
        return block.energy.sum(axis=0)

    load = np.zeros(source.hours, dtype=np.int64)
    for partial in pool.map(block_load, range(len(source))):
        load += partial
    system = SystemLoad(load)
    windows = {f: detect_peak_hours(system, f) for f in fractions}

    def block_split(index: int):
        block, key_ids = source.block(index)
        total = block.energy.sum(axis=1)
        return key_ids, total, {f: split_consumption(block.energy, w) for f, w in windows.items()}

    parts = list(pool.map(block_split, range(len(source))))
    if not parts or not sum(len(p[0]) for p in parts):
        raise DataError("No households left to bill", operation="load_households")

    key_ids = np.concatenate([p[0] for p in parts])
    splits = {f: (np.concatenate([p[2][f][0] for p in parts]), np.concatenate([p[2][f][1] for p in parts]))
              for f in fractions}
    group_index = key_group_index(rules)[key_ids]
    return HouseholdEnergy(
        key_ids=key_ids,
        group_index=group_index,
        total_wh=np.concatenate([p[1] for p in parts]),
        splits=splits,
        windows=windows,
        load=system,
        exclusions=list(source.exclusions),
        issues=list(source.issues),
    )


@dataclass
class CellResult:
    """One (scenario, factor) pair: bill sums per status x tech group and per group key."""
    scenario_id: str
    factor: Fraction
    rates: TariffRates
    multipliers: SubscriptionMultipliers
    groups: Dict[StatusTechGroup, BillTotals]
    keys: Dict[int, BillTotals]
    audit: Optional[AuditResult] = None

    @property
    def label(self) -> str:
        return cell_label(self.scenario_id, self.factor)


@dataclass
class SweepResult:
    inputs: BaseCaseInputs
    scenarios: List[TariffScenario]
    factors: List[Fraction]
    rates: Dict[str, TariffRates]
    rules: ClassificationRuleTable
    households: HouseholdEnergy
    base_groups: Dict[StatusTechGroup, BillTotals]
    base_keys: Dict[int, BillTotals]
    cells: Dict[Tuple[str, Fraction], CellResult]
    base_audit: Optional[AuditResult] = None
    target_quanta: int = 0

    @property
    def census(self) -> Dict[StatusTechGroup, int]:
        return self.households.census()

    @property
    def groups(self) -> List[StatusTechGroup]:
        """Populated groups in report order."""
        census = self.census
        return [g for g in STATUS_TECH_GROUPS if g in census]

    @property
    def audited(self) -> bool:
        return self.base_audit is not None

    def cell(self, scenario_id: str, factor) -> CellResult:
        return self.cells[(scenario_id, Fraction(factor))]

    def delta(self, scenario_id: str, factor, group: StatusTechGroup) -> EquityDelta:
        return equity_delta(self.cell(scenario_id, factor).groups[group], self.base_groups[group])

    def audits(self) -> List[AuditResult]:
        results = [self.base_audit] if self.base_audit else []
        results += [c.audit for c in self.cells.values() if c.audit is not None]
        return results

    def failed_audits(self) -> List[AuditResult]:
        return [a for a in self.audits() if not a.passed]

    @property
    def passed(self) -> bool:
        return not self.failed_audits()


def audit_applies(base_case: BaseCaseConfig, inputs: BaseCaseInputs, households: HouseholdEnergy) -> bool:
    """Revenue can only be audited when T was derived from the billed population itself."""
    return (inputs.households == len(households)
            and inputs.total_energy_wh == int(households.total_wh.sum())
            and base_case.volumetric_revenue_dkk is None)


def _key_sums(key_ids: np.ndarray, values: np.ndarray, keys: int) -> np.ndarray:
    sums = np.zeros(keys, dtype=np.int64)
    np.add.at(sums, key_ids, values)
    return sums


def _totals_by_key(counts: np.ndarray, subscription: np.ndarray, offpeak: np.ndarray,
                   peak: np.ndarray) -> Dict[int, BillTotals]:
    return {int(k): BillTotals(int(counts[k]), int(subscription[k]), int(offpeak[k]), int(peak[k]))
            for k in np.flatnonzero(counts)}


def _totals_by_group(keys: Dict[int, BillTotals], group_of_key: np.ndarray) -> Dict[StatusTechGroup, BillTotals]:
    groups: Dict[StatusTechGroup, BillTotals] = {}
    for key_id, totals in keys.items():
        group = STATUS_TECH_GROUPS[int(group_of_key[key_id])]
        groups.setdefault(group, BillTotals()).merge(totals)
    return {g: groups[g] for g in STATUS_TECH_GROUPS if g in groups}


def _collected(keys: Dict[int, BillTotals]) -> int:
    return sum(t.total for t in keys.values())


def resolve_rules(config: RunConfig) -> ClassificationRuleTable:
    return ClassificationRuleTable.from_yaml(config.rules) if config.rules else load_default_rules()


@dataclass
class SolvedRun:
    """Households, base case and solved scenario rates, before any billing."""
    rules: ClassificationRuleTable
    scenarios: List[TariffScenario]
    households: HouseholdEnergy
    inputs: BaseCaseInputs
    rates: List[TariffRates]


def _solve(config: RunConfig, rules: ClassificationRuleTable, pool: ThreadPoolExecutor,
           threads: int) -> SolvedRun:
    scenarios = config.tariff_scenarios()
    fractions = sorted({s.peak_fraction for s in scenarios})
    with ErrorContext("load_households", {"threads": threads, "metering": config.uses_metering}):
        households = load_households(config, rules, fractions, pool, get_settings().chunk_households)
    inputs = config.base_case.to_inputs(int(households.total_wh.sum()), len(households))
    rates = solve_all(inputs, scenarios, households.q_totals)
    return SolvedRun(rules, scenarios, households, inputs, rates)


def solve_run(config: RunConfig,
              threads: Optional[int] = None,
              rules: Optional[ClassificationRuleTable] = None) -> SolvedRun:
    """Load households and solve every scenario without billing."""
    threads = threads or config.threads or get_settings().default_threads
    rules = rules if rules is not None else resolve_rules(config)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return _solve(config, rules, pool, threads)


def run_sweep(config: RunConfig,
              threads: Optional[int] = None,
              rules: Optional[ClassificationRuleTable] = None) -> SweepResult:
    """
    Bill every household under every scenario and redistribution factor.

    When the base case is derived from the billed population, every cell is
    audited for revenue neutrality; failed audits are recorded on the result.
    """
    threads = threads or config.threads or get_settings().default_threads
    rules = rules if rules is not None else resolve_rules(config)
    factors = config.factors()
    key_count = len(rules.keys)
    group_of_key = key_group_index(rules)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        solved = _solve(config, rules, pool, threads)
        households, inputs, rates, scenarios = solved.households, solved.inputs, solved.rates, solved.scenarios
        census = households.census()
        counts = np.bincount(households.key_ids, minlength=key_count)
        populated = int(np.count_nonzero(counts))
        target = round_half_even(inputs.total_cost_quanta)
        audited = audit_applies(config.base_case, inputs, households)
        if not audited:
            logger.warning("Base case is pinned independently of the population; skipping revenue audits",
                           extra={"households": len(households), "pinned_households": inputs.households})

        base = base_case_bills(households.total_wh, inputs)
        base_keys = _totals_by_key(counts,
                                   counts * dkk_to_quanta(inputs.base_fee),
                                   _key_sums(households.key_ids, base.offpeak, key_count),
                                   np.zeros(key_count, dtype=np.int64))
        base_audit = None
        if audited:
            base_audit = audit_revenue(_collected(base_keys), target, revenue_tolerance(len(households), populated),
                                       cell=cell_label(BASE_CASE_ID, Fraction(1)))

        def scenario_lines(rate: TariffRates):
            scenario = next(s for s in scenarios if s.id == rate.scenario_id)
            q_peak, q_base = households.splits[scenario.peak_fraction]
            offpeak, peak = energy_lines(q_peak, q_base, rate)
            return _key_sums(households.key_ids, offpeak, key_count), _key_sums(households.key_ids, peak, key_count)

        tolerance = revenue_tolerance(len(households), populated, int(households.total_wh.sum()))

        with ErrorContext("bill_scenarios", {"scenarios": len(scenarios), "factors": len(factors)}):
            lines = dict(zip((r.scenario_id for r in rates), pool.map(scenario_lines, rates)))

            def bill_cell(task: Tuple[TariffRates, Fraction]) -> CellResult:
                rate, factor = task
                offpeak, peak = lines[rate.scenario_id]
                multipliers = subscription_vector(RedistributionPolicy(factor), census)
                per_group = multipliers.subscription_quanta(rate.fee_exact)
                line_of_key = np.array([per_group.get(STATUS_TECH_GROUPS[g], 0) if g >= 0 else 0
                                        for g in group_of_key], dtype=np.int64)
                keys = _totals_by_key(counts, counts * line_of_key, offpeak, peak)
                cell = CellResult(rate.scenario_id, factor, rate, multipliers,
                                  _totals_by_group(keys, group_of_key), keys)
                if audited:
                    cell.audit = audit_revenue(_collected(keys), target, tolerance, cell=cell.label)
                return cell

            tasks = [(rate, factor) for rate in rates for factor in factors]
            cells = {(c.scenario_id, c.factor): c for c in pool.map(bill_cell, tasks)}

    result = SweepResult(
        inputs=inputs,
        scenarios=scenarios,
        factors=factors,
        rates={r.scenario_id: r for r in rates},
        rules=rules,
        households=households,
        base_groups=_totals_by_group(base_keys, group_of_key),
        base_keys=base_keys,
        cells=cells,
        base_audit=base_audit,
        target_quanta=target,
    )
    logger.info("Sweep complete", extra={
        "households": len(households),
        "cells": len(cells),
        "audited": audited,
        "failed_audits": len(result.failed_audits()),
    })
    return result
