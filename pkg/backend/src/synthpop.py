"""
Deterministic synthetic households and hourly load profiles.

Populations are apportioned to the category shares of the population table,
annual energies are jittered and then calibrated to the table's consumption
shares, and hourly profiles are cut from per-technology shapes. Every random
draw comes from a stream keyed by (seed, stream, household block), so a
household's values never depend on how generation is batched or threaded.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from domain import (
    ClassificationRuleTable,
    GroupKey,
    HouseholdAttributes,
    Predicate,
    Status,
    StatusTechGroup,
    Tech,
    enumerate_groups,
)
from exceptions import ConfigurationError, EmptyCategory, InfeasibleShares, ValidationError
from logging_config import setup_logging
from metering import ProfileBlock
from models import PopulationConfig, ShapeConfig, load_population_config
from money import WH_PER_KWH, to_fraction

logger = setup_logging(__name__)

# Households per random block; fixed so draws do not depend on batch size
RNG_BLOCK = 4096
STREAM_KEY = 1
STREAM_JITTER = 2
SHARE_TOLERANCE = Fraction(1, 10 ** 9)


@dataclass(frozen=True)
class PopulationCategory:
    name: str
    group: StatusTechGroup
    predicate: Predicate
    population_share: Fraction
    consumption_share: Fraction


@dataclass(frozen=True)
class ShapeParameters:
    morning_peak: float = 0.6
    evening_peak: float = 1.0
    base_winter_amplitude: float = 0.15
    hp_daily_amplitude: float = 0.1
    ev_start_hour: int = 18
    ev_end_hour: int = 23

    @classmethod
    def from_config(cls, config: ShapeConfig) -> "ShapeParameters":
        return cls(
            morning_peak=float(config.morning_peak),
            evening_peak=float(config.evening_peak),
            base_winter_amplitude=float(config.base_winter_amplitude),
            hp_daily_amplitude=float(config.hp_daily_amplitude),
            ev_start_hour=config.ev_start_hour,
            ev_end_hour=config.ev_end_hour,
        )


@dataclass(frozen=True)
class PopulationSpec:
    households: int
    categories: Tuple[PopulationCategory, ...]
    seed: int = 0
    hours: int = 8760
    mean_annual_kwh: Fraction = Fraction(28256, 10)
    jitter_sigma: float = 0.25
    tech_fraction: Mapping[Tech, Fraction] = field(default_factory=dict)
    shape_parameters: ShapeParameters = field(default_factory=ShapeParameters)
    strict: bool = False

    def __post_init__(self):
        if self.households < 1:
            raise ValidationError("Population needs at least one household", field="households")
        if not self.categories:
            raise ValidationError("Population needs at least one category", field="categories")
        for name, total in (("population", sum(c.population_share for c in self.categories)),
                            ("consumption", sum(c.consumption_share for c in self.categories))):
            if abs(total - 1) > SHARE_TOLERANCE:
                raise ValidationError(f"Category {name} shares sum to {float(total)}, not 1",
                                      field=f"{name}_share", value=str(total))
        if any(c.population_share < 0 or c.consumption_share < 0 for c in self.categories):
            raise ValidationError("Shares must be non-negative", field="categories")
        if self.jitter_sigma < 0:
            raise ValidationError("Jitter sigma must be non-negative", field="jitter_sigma")

    @classmethod
    def from_config(cls, config: PopulationConfig,
                    households: Optional[int] = None,
                    seed: Optional[int] = None,
                    strict: Optional[bool] = None) -> "PopulationSpec":
        """Build a spec, renormalizing rows within their status when status totals are given."""
        rows = config.categories
        pop = [to_fraction(c.population) for c in rows]
        cons = [to_fraction(c.consumption) for c in rows]

        if config.status_totals:
            totals = {Status(k): v for k, v in config.status_totals.items()}
            pop = _within_status(rows, pop, {s: to_fraction(t.population) for s, t in totals.items()})
            cons = _within_status(rows, cons, {s: to_fraction(t.consumption) for s, t in totals.items()})

        pop = _normalize(pop, "population")
        cons = _normalize(cons, "consumption")
        categories = tuple(
            PopulationCategory(
                name=c.name,
                group=StatusTechGroup.parse(c.status, c.tech),
                predicate=Predicate.from_mapping(c.when),
                population_share=p,
                consumption_share=q,
            )
            for c, p, q in zip(rows, pop, cons)
        )
        return cls(
            households=households or config.households,
            categories=categories,
            seed=config.seed if seed is None else seed,
            hours=config.hours,
            mean_annual_kwh=to_fraction(config.mean_annual_kwh),
            jitter_sigma=float(config.jitter_sigma),
            tech_fraction={Tech(k): to_fraction(v) for k, v in config.tech_fraction.items()},
            shape_parameters=ShapeParameters.from_config(config.shapes),
            strict=config.strict if strict is None else strict,
        )

    def tech_share(self, tech: Tech) -> Fraction:
        if tech is Tech.NOTECH:
            return Fraction(0)
        return self.tech_fraction.get(tech, Fraction(0))


def _within_status(rows, shares: List[Fraction], totals: Dict[Status, Fraction]) -> List[Fraction]:
    row_sums: Dict[Status, Fraction] = {}
    for row, share in zip(rows, shares):
        status = Status(row.status)
        row_sums[status] = row_sums.get(status, Fraction(0)) + share
    result = []
    for row, share in zip(rows, shares):
        status = Status(row.status)
        total = totals.get(status)
        if total is None:
            raise ConfigurationError(f"status_totals has no entry for {status.value}",
                                     config_key="status_totals", config_value=status.value)
        result.append(total * share / row_sums[status] if row_sums[status] else Fraction(0))
    return result


def _normalize(shares: List[Fraction], name: str) -> List[Fraction]:
    total = sum(shares)
    if total <= 0:
        raise ConfigurationError(f"{name} shares sum to zero", config_key=name)
    return [s / total for s in shares]


@dataclass(frozen=True)
class ShapeLibrary:
    """Normalized per-hour weight vectors of length H."""
    base: np.ndarray
    heat_pump: np.ndarray
    electric_vehicle: np.ndarray

    def __post_init__(self):
        lengths = {len(self.base), len(self.heat_pump), len(self.electric_vehicle)}
        if len(lengths) != 1:
            raise ValidationError("Shapes must share one year length", field="shapes")
        for name in ("base", "heat_pump", "electric_vehicle"):
            shape = getattr(self, name)
            if np.any(shape < 0) or not math.isclose(float(shape.sum()), 1.0, abs_tol=1e-9):
                raise ValidationError(f"Shape {name} must be non-negative and sum to 1", field=name)

    @property
    def hours(self) -> int:
        return len(self.base)

    def for_tech(self, tech: Tech) -> np.ndarray:
        if tech is Tech.HP:
            return self.heat_pump
        if tech is Tech.EV:
            return self.electric_vehicle
        return self.base

    def mixed(self, tech: Tech, fraction: Fraction) -> np.ndarray:
        """Base shape with ``fraction`` of the energy moved to the technology shape."""
        if tech is Tech.NOTECH or fraction == 0:
            return self.base
        f = float(fraction)
        return (1.0 - f) * self.base + f * self.for_tech(tech)

    @classmethod
    def default(cls, hours: int = 8760, params: Optional[ShapeParameters] = None) -> "ShapeLibrary":
        """
        Double-peaked daily base load with mild winter uplift, a heating-degree
        HP shape peaking in January and an evening EV charging block.
        """
        params = params or ShapeParameters()
        h = np.arange(hours)
        hod = h % 24
        days_in_year = hours / 24.0
        season = np.cos(2.0 * np.pi * (h // 24) / days_in_year)

        daily = (0.5
                 + params.morning_peak * np.exp(-((hod - 7.5) ** 2) / (2 * 1.5 ** 2))
                 + params.evening_peak * np.exp(-((hod - 18.5) ** 2) / (2 * 2.0 ** 2)))
        base = daily * (1.0 + params.base_winter_amplitude * season)

        heating = (1.0 + season) * (1.0 + params.hp_daily_amplitude * np.cos(2.0 * np.pi * (hod - 6) / 24.0))
        ev = ((hod >= params.ev_start_hour) & (hod < params.ev_end_hour)).astype(np.float64)

        return cls(base / base.sum(), heating / heating.sum(), ev / ev.sum())


def largest_remainder(total: int, shares: Sequence[Fraction]) -> List[int]:
    """Apportion ``total`` by exact shares; ties in remainder go to the earlier entry."""
    weight = sum(shares)
    if total == 0 or weight == 0:
        return [0] * len(shares)
    quotas = [total * s / weight for s in shares]
    counts = [math.floor(q) for q in quotas]
    left = total - sum(counts)
    order = sorted(range(len(shares)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def apportion_categories(spec: PopulationSpec) -> List[int]:
    """Status counts first, then each status split over its rows, both by largest remainder."""
    statuses = list(dict.fromkeys(c.group.status for c in spec.categories))
    status_share = [sum(c.population_share for c in spec.categories if c.group.status is s) for s in statuses]
    status_counts = largest_remainder(spec.households, status_share)

    counts = [0] * len(spec.categories)
    for status, n_status in zip(statuses, status_counts):
        members = [i for i, c in enumerate(spec.categories) if c.group.status is status]
        for i, n in zip(members, largest_remainder(n_status, [spec.categories[i].population_share for i in members])):
            counts[i] = n

    for category, n in zip(spec.categories, counts):
        if category.population_share > 0 and n == 0:
            if spec.strict:
                raise InfeasibleShares(category.name, float(category.population_share), spec.households)
            logger.warning("Category receives no household", extra={
                "category": category.name, "households": spec.households,
            })
    return counts


def _block_draws(seed: int, stream: int, start: int, stop: int, method: str) -> np.ndarray:
    out = np.empty(max(stop - start, 0), dtype=np.float64)
    if stop <= start:
        return out
    for block in range(start // RNG_BLOCK, (stop - 1) // RNG_BLOCK + 1):
        lo = block * RNG_BLOCK
        values = getattr(np.random.default_rng([seed, stream, block]), method)(RNG_BLOCK)
        a, b = max(start, lo), min(stop, lo + RNG_BLOCK)
        out[a - start:b - start] = values[a - lo:b - lo]
    return out


def block_uniforms(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Uniform draws for households [start, stop), keyed by (seed, stream, household block)."""
    return _block_draws(seed, stream, start, stop, "random")


def block_normals(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    return _block_draws(seed, stream, start, stop, "standard_normal")


@dataclass
class SyntheticPopulation:
    household_ids: List[str]
    attributes: Dict[str, HouseholdAttributes]
    categories: np.ndarray
    spec: PopulationSpec

    def __len__(self) -> int:
        return len(self.household_ids)

    def counts(self) -> List[int]:
        return np.bincount(self.categories, minlength=len(self.spec.categories)).tolist()


def category_keys(spec: PopulationSpec, rules: ClassificationRuleTable) -> List[List[GroupKey]]:
    """Admitted keys each category draws from: same group, predicate satisfied."""
    groups = enumerate_groups(rules)
    keys = []
    for category in spec.categories:
        matched = [key for key, group in groups
                   if group == category.group and category.predicate.matches(key.attrs)]
        if not matched and category.population_share > 0:
            raise ConfigurationError(
                f"Category '{category.name}' matches no admitted key of group {category.group.label}",
                config_key="categories",
                config_value=category.name,
            )
        keys.append(matched)
    return keys


def generate_population(spec: PopulationSpec, rules: ClassificationRuleTable) -> SyntheticPopulation:
    """
    Exactly ``spec.households`` households, apportioned to the category shares.

    Households are laid out category by category; within a category each one
    draws its attribute tuple uniformly from the category's admitted keys.
    """
    counts = apportion_categories(spec)
    keys = category_keys(spec, rules)
    categories = np.repeat(np.arange(len(counts)), counts)
    draws = block_uniforms(spec.seed, STREAM_KEY, 0, spec.households)

    width = len(str(spec.households))
    household_ids = [f"hh{i:0{width}d}" for i in range(spec.households)]
    attributes: Dict[str, HouseholdAttributes] = {}
    for i, (household_id, category) in enumerate(zip(household_ids, categories)):
        options = keys[category]
        attributes[household_id] = options[int(draws[i] * len(options))].attrs

    logger.info("Generated population", extra={
        "households": spec.households,
        "categories": len(counts),
        "seed": spec.seed,
    })
    return SyntheticPopulation(household_ids, attributes, categories, spec)


def calibrate_to_shares(categories: np.ndarray,
                        annual_energy: np.ndarray,
                        targets: Sequence[Fraction]) -> Tuple[np.ndarray, List[Fraction]]:
    """
    Scale each category uniformly so its share of total energy equals its target.

    Total energy is preserved. Returns the scaled energies (integer Wh) and the
    per-category factors.

    Raises:
        EmptyCategory: a category with a positive target has no energy
    """
    categories = np.asarray(categories, dtype=np.int64)
    energy = np.asarray(annual_energy, dtype=np.float64)
    sums = np.bincount(categories, weights=energy, minlength=len(targets))
    total = float(sums.sum())
    weight = sum(targets)

    factors: List[Fraction] = []
    for index, target in enumerate(targets):
        if target > 0 and sums[index] <= 0:
            raise EmptyCategory(str(index))
        if sums[index] <= 0:
            factors.append(Fraction(0))
            continue
        factors.append(Fraction(target / weight) * Fraction(total) / Fraction(float(sums[index])))

    scale = np.array([float(f) for f in factors])
    scaled = np.rint(energy * scale[categories]).astype(np.int64)
    return scaled, factors


def annual_energy(population: SyntheticPopulation) -> np.ndarray:
    """Jittered annual Wh per household, calibrated to the consumption shares."""
    spec = population.spec
    counts = population.counts()
    means = []
    for category, n in zip(spec.categories, counts):
        if n == 0 or category.population_share == 0:
            means.append(0.0)
        else:
            ratio = category.consumption_share / category.population_share
            means.append(float(spec.mean_annual_kwh * ratio * WH_PER_KWH))
    sigma = spec.jitter_sigma
    z = block_normals(spec.seed, STREAM_JITTER, 0, len(population))
    jitter = np.exp(sigma * z - sigma ** 2 / 2.0)
    raw = np.asarray(means)[population.categories] * jitter

    # categories that received no household drop out of the targets
    targets = [c.consumption_share if n > 0 else Fraction(0) for c, n in zip(spec.categories, counts)]
    scaled, factors = calibrate_to_shares(population.categories, raw, targets)
    logger.info("Calibrated consumption shares", extra={
        "households": len(population),
        "total_kwh": float(scaled.sum()) / WH_PER_KWH,
        "max_factor": max(float(f) for f in factors),
    })
    return scaled


def generate_profiles(population: SyntheticPopulation,
                      shapes: ShapeLibrary,
                      annual_wh: np.ndarray,
                      start: int = 0,
                      stop: Optional[int] = None) -> ProfileBlock:
    """
    Hourly profiles for households [start, stop).

    Each household's annual energy is spread over its category's mixed shape by
    cumulative rounding, so hourly values are non-negative integers summing
    exactly to the annual energy.
    """
    spec = population.spec
    stop = len(population) if stop is None else stop
    if shapes.hours != spec.hours:
        raise ValidationError(f"Shapes have {shapes.hours} hours, population expects {spec.hours}",
                              field="hours")
    rows = np.arange(start, stop)
    energy = np.empty((len(rows), spec.hours), dtype=np.int64)

    cumulative: Dict[int, np.ndarray] = {}
    for index, category in enumerate(spec.categories):
        tech = category.group.tech
        cum = np.cumsum(shapes.mixed(tech, spec.tech_share(tech)))
        cum[-1] = 1.0
        cumulative[index] = cum

    cats = population.categories[rows]
    for index in np.unique(cats):
        local = np.flatnonzero(cats == index)
        totals = annual_wh[rows[local]].astype(np.float64)
        running = np.rint(totals[:, None] * cumulative[int(index)][None, :]).astype(np.int64)
        running[:, -1] = annual_wh[rows[local]]
        energy[local] = np.diff(running, axis=1, prepend=0)

    return ProfileBlock.clean([population.household_ids[i] for i in rows], energy)


def iter_profile_blocks(population: SyntheticPopulation, shapes: ShapeLibrary,
                        annual_wh: np.ndarray, block_size: int):
    for start in range(0, len(population), block_size):
        yield generate_profiles(population, shapes, annual_wh, start, min(start + block_size, len(population)))


def load_population_spec(path=None, households: Optional[int] = None, seed: Optional[int] = None,
                         strict: Optional[bool] = None) -> PopulationSpec:
    return PopulationSpec.from_config(load_population_config(path), households, seed, strict)
