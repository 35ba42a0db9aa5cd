"""
Household attributes, the admitted group-key space and the rule table that maps
attribute tuples onto the eight financial-status x technology groups.

The rule table is data: it is loaded from YAML (``data/default_rules.yaml`` by
default) so a different country's grouping can be plugged in without touching
code. Classification is a pure function of (attributes, table).
"""

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml

from config import get_settings
from exceptions import ConfigurationError, FileOperationError, FormatError, UnmappedCombination, ValidationError
from logging_config import setup_logging
from money import to_fraction
from streaming_csv import write_frame_csv
from validation import validate_household_id

logger = setup_logging(__name__)


class Dwelling(str, Enum):
    HOUSE = "House"
    APARTMENT = "Apartment"


class AreaBand(str, Enum):
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"


class Occupancy(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3PLUS = "P3plus"
    P5PLUS = "P5plus"


class IncomeBand(str, Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"


class Tech(str, Enum):
    NOTECH = "NoTech"
    HP = "HP"
    EV = "EV"


class Status(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


OCCUPANCY_ALIASES = {"P3+": Occupancy.P3PLUS, "P5+": Occupancy.P5PLUS}

# Upper bounds (exclusive) of A1 and A2 in square metres
AREA_THRESHOLDS = {
    Dwelling.HOUSE: (Fraction(110), Fraction(146)),
    Dwelling.APARTMENT: (Fraction(66), Fraction(85)),
}
# Upper bounds (exclusive) of E1 and E2 in DKK/year
INCOME_THRESHOLDS = (Fraction(240_260), Fraction(449_097))

DIMENSIONS = ("dwelling", "area_band", "occupancy", "income_band", "tech")
DIMENSION_TYPES = {
    "dwelling": Dwelling,
    "area_band": AreaBand,
    "occupancy": Occupancy,
    "income_band": IncomeBand,
    "tech": Tech,
}


def _parse_enum(enum_type, value: Any, field_name: str):
    if isinstance(value, enum_type):
        return value
    text = str(value).strip()
    if enum_type is Occupancy and text in OCCUPANCY_ALIASES:
        return OCCUPANCY_ALIASES[text]
    for member in enum_type:
        if text == member.value or text.lower() == member.value.lower():
            return member
    raise ValidationError(
        f"Invalid {field_name}: {value!r}",
        field=field_name,
        value=value,
        constraint=f"one of {[m.value for m in enum_type]}",
    )


def _parse_flag(value: Any, field_name: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes"):
        return True
    if text in ("0", "false", "no"):
        return False
    raise ValidationError(f"Invalid {field_name} flag: {value!r}", field=field_name, value=value)


def band_area(dwelling: Union[Dwelling, str], area_sqm: Any) -> AreaBand:
    """Band a raw floor area; intervals are half-open, so a boundary value lands in the upper band."""
    dwelling = _parse_enum(Dwelling, dwelling, "dwelling")
    area = to_fraction(area_sqm)
    if area < 0:
        raise ValidationError("Floor area must be non-negative", field="area_sqm", value=str(area_sqm))
    a1_upper, a2_upper = AREA_THRESHOLDS[dwelling]
    if area < a1_upper:
        return AreaBand.A1
    if area < a2_upper:
        return AreaBand.A2
    return AreaBand.A3


def band_income(income_dkk: Any) -> IncomeBand:
    """Band a gross annual household income, half-open like the area bands."""
    income = to_fraction(income_dkk)
    if income < INCOME_THRESHOLDS[0]:
        return IncomeBand.E1
    if income < INCOME_THRESHOLDS[1]:
        return IncomeBand.E2
    return IncomeBand.E3


@dataclass(frozen=True)
class HouseholdAttributes:
    dwelling: Dwelling
    area_band: AreaBand
    occupancy: Occupancy
    income_band: IncomeBand
    heat_pump: bool = False
    electric_vehicle: bool = False

    def __post_init__(self):
        if self.heat_pump and self.electric_vehicle:
            raise ValidationError(
                "Households owning both a heat pump and an electric vehicle are not modelled",
                field="tech",
                value="HP1;EV1",
                constraint="hp_ev_exclusive",
            )

    @classmethod
    def parse(cls, dwelling: Any, area_band: Any, occupancy: Any, income_band: Any,
              hp: Any = False, ev: Any = False) -> "HouseholdAttributes":
        return cls(
            dwelling=_parse_enum(Dwelling, dwelling, "dwelling"),
            area_band=_parse_enum(AreaBand, area_band, "area_band"),
            occupancy=_parse_enum(Occupancy, occupancy, "occupancy"),
            income_band=_parse_enum(IncomeBand, income_band, "income_band"),
            heat_pump=_parse_flag(hp, "hp"),
            electric_vehicle=_parse_flag(ev, "ev"),
        )

    @classmethod
    def from_tech(cls, dwelling: Dwelling, area_band: AreaBand, occupancy: Occupancy,
                  income_band: IncomeBand, tech: Tech) -> "HouseholdAttributes":
        return cls(dwelling, area_band, occupancy, income_band,
                   heat_pump=tech is Tech.HP, electric_vehicle=tech is Tech.EV)

    @property
    def tech(self) -> Tech:
        if self.heat_pump:
            return Tech.HP
        if self.electric_vehicle:
            return Tech.EV
        return Tech.NOTECH

    def value_of(self, dimension: str):
        if dimension == "tech":
            return self.tech
        return getattr(self, dimension)

    @property
    def label(self) -> str:
        return ";".join([
            self.dwelling.value,
            self.area_band.value,
            self.occupancy.value,
            self.income_band.value,
            f"HP{int(self.heat_pump)}",
            f"EV{int(self.electric_vehicle)}",
        ])

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True, order=True)
class StatusTechGroup:
    status: Status
    tech: Tech

    @property
    def label(self) -> str:
        return f"{self.status.value}/{self.tech.value}"

    @property
    def is_low(self) -> bool:
        return self.status is Status.LOW

    @classmethod
    def parse(cls, status: Any, tech: Any) -> "StatusTechGroup":
        return cls(_parse_enum(Status, status, "status"), _parse_enum(Tech, tech, "tech"))

    def __str__(self) -> str:
        return self.label


# Reporting order of the populated status x technology groups
STATUS_TECH_GROUPS: Tuple[StatusTechGroup, ...] = (
    StatusTechGroup(Status.LOW, Tech.NOTECH),
    StatusTechGroup(Status.LOW, Tech.HP),
    StatusTechGroup(Status.MEDIUM, Tech.NOTECH),
    StatusTechGroup(Status.MEDIUM, Tech.HP),
    StatusTechGroup(Status.MEDIUM, Tech.EV),
    StatusTechGroup(Status.HIGH, Tech.NOTECH),
    StatusTechGroup(Status.HIGH, Tech.HP),
    StatusTechGroup(Status.HIGH, Tech.EV),
)
STATUS_TECH_INDEX = {g: i for i, g in enumerate(STATUS_TECH_GROUPS)}


@dataclass(frozen=True)
class GroupKey:
    """An admitted attribute tuple interned as a dense integer id."""
    id: int
    attrs: HouseholdAttributes

    @property
    def label(self) -> str:
        return self.attrs.label


@dataclass(frozen=True)
class Predicate:
    """Attribute-value sets per dimension; a missing dimension matches anything."""
    allowed: Tuple[Tuple[str, FrozenSet[Enum]], ...] = ()

    @classmethod
    def from_mapping(cls, when: Optional[Mapping[str, Any]]) -> "Predicate":
        items = []
        for dimension, values in (when or {}).items():
            if dimension not in DIMENSION_TYPES:
                raise ConfigurationError(
                    f"Unknown rule attribute '{dimension}'",
                    config_key="when",
                    config_value=dimension,
                )
            if isinstance(values, (str, bool, int)):
                values = [values]
            enum_type = DIMENSION_TYPES[dimension]
            parsed = frozenset(_parse_enum(enum_type, v, dimension) for v in values)
            if not parsed:
                raise ConfigurationError(f"Empty value set for '{dimension}'", config_key=dimension)
            items.append((dimension, parsed))
        return cls(tuple(sorted(items, key=lambda item: DIMENSIONS.index(item[0]))))

    def matches(self, attrs: HouseholdAttributes) -> bool:
        return all(attrs.value_of(dimension) in values for dimension, values in self.allowed)

    def describe(self) -> str:
        if not self.allowed:
            return "*"
        return " & ".join(
            f"{dimension}∈{{{','.join(sorted(v.value for v in values))}}}"
            for dimension, values in self.allowed
        )


@dataclass(frozen=True)
class ClassificationRule:
    name: str
    predicate: Predicate
    group: StatusTechGroup


def all_attribute_tuples() -> List[HouseholdAttributes]:
    """Every well-formed attribute tuple, in canonical key order."""
    return [
        HouseholdAttributes.from_tech(d, a, o, e, t)
        for d, a, o, e, t in itertools.product(Dwelling, AreaBand, Occupancy, IncomeBand, Tech)
    ]


@dataclass(frozen=True)
class ClassificationRuleTable:
    rules: Tuple[ClassificationRule, ...]
    admitted: Tuple[Predicate, ...] = ()
    provenance: str = ""

    @cached_property
    def keys(self) -> Tuple[GroupKey, ...]:
        """Admitted key space with dense ids; an empty ``admitted`` admits every tuple."""
        if self.admitted:
            tuples = [a for a in all_attribute_tuples() if any(p.matches(a) for p in self.admitted)]
        else:
            tuples = all_attribute_tuples()
        return tuple(GroupKey(i, attrs) for i, attrs in enumerate(tuples))

    @cached_property
    def _key_index(self) -> Dict[HouseholdAttributes, GroupKey]:
        return {key.attrs: key for key in self.keys}

    def key_for(self, attrs: HouseholdAttributes, household_id: Optional[str] = None) -> GroupKey:
        key = self._key_index.get(attrs)
        if key is None:
            raise UnmappedCombination(attrs.label, household_id)
        return key

    def is_admitted(self, attrs: HouseholdAttributes) -> bool:
        return attrs in self._key_index

    def matching_rules(self, attrs: HouseholdAttributes) -> List[ClassificationRule]:
        return [rule for rule in self.rules if rule.predicate.matches(attrs)]

    def without_groups(self, groups: Iterable[StatusTechGroup]) -> "ClassificationRuleTable":
        """Copy of the table with the rules for ``groups`` removed; the admitted space is kept."""
        dropped = set(groups)
        return replace(self, rules=tuple(r for r in self.rules if r.group not in dropped))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClassificationRuleTable":
        if not isinstance(data, Mapping) or "rules" not in data:
            raise ConfigurationError("Rule table must be a mapping with a 'rules' list", config_key="rules")
        rules = []
        for i, entry in enumerate(data["rules"] or []):
            try:
                rules.append(ClassificationRule(
                    name=str(entry.get("name", f"rule_{i}")),
                    predicate=Predicate.from_mapping(entry.get("when")),
                    group=StatusTechGroup.parse(entry["status"], entry["tech"]),
                ))
            except KeyError as e:
                raise ConfigurationError(
                    f"Rule {i} is missing {e}", config_key=f"rules[{i}]", config_value=entry,
                )
            except ValidationError as e:
                raise ConfigurationError(
                    f"Rule {i} is invalid: {e.message}", config_key=f"rules[{i}]", config_value=entry,
                )
        if "admitted" in data and data["admitted"] is not None:
            admitted = tuple(Predicate.from_mapping(p) for p in data["admitted"])
        else:
            # The shipped tables admit exactly what their rules cover; the
            # admitted space is frozen here so later rule edits surface as gaps.
            admitted = tuple(rule.predicate for rule in rules)
        return cls(tuple(rules), admitted, str(data.get("provenance", "")))

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "ClassificationRuleTable":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise FileOperationError(str(e), file_path=str(path), operation="read_rule_table")
        table = cls.from_dict(data)
        logger.info("Loaded rule table", extra={
            "path": str(path),
            "rules": len(table.rules),
            "admitted_keys": len(table.keys),
            "provenance": table.provenance,
        })
        return table


def load_default_rules() -> ClassificationRuleTable:
    return ClassificationRuleTable.from_yaml(get_settings().default_rules_path)


def classify_financial_status(attrs: HouseholdAttributes,
                              rules: ClassificationRuleTable,
                              household_id: Optional[str] = None) -> StatusTechGroup:
    """
    Map a household's attributes to its status x technology group.

    Raises:
        UnmappedCombination: the tuple is outside the admitted key space or no rule claims it
    """
    if not rules.is_admitted(attrs):
        raise UnmappedCombination(attrs.label, household_id)
    for rule in rules.rules:
        if rule.predicate.matches(attrs):
            return rule.group
    raise UnmappedCombination(attrs.label, household_id)


def enumerate_groups(rules: ClassificationRuleTable) -> List[Tuple[GroupKey, StatusTechGroup]]:
    """All admitted keys with their group, sorted by key id. Keys no rule claims are skipped."""
    entries = []
    for key in rules.keys:
        matched = rules.matching_rules(key.attrs)
        if matched:
            entries.append((key, matched[0].group))
    return entries


@dataclass
class RuleTableReport:
    overlaps: List[Tuple[str, Tuple[str, ...]]] = field(default_factory=list)
    gaps: List[str] = field(default_factory=list)
    unreachable: List[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not (self.overlaps or self.gaps or self.unreachable)

    def __len__(self) -> int:
        return len(self.overlaps) + len(self.gaps) + len(self.unreachable)

    def entries(self) -> List[str]:
        lines = [f"overlap: {key} claimed by {', '.join(names)}" for key, names in self.overlaps]
        lines += [f"gap: {key}" for key in self.gaps]
        lines += [f"unreachable: {name}" for name in self.unreachable]
        return lines


def validate_rule_table(rules: ClassificationRuleTable) -> RuleTableReport:
    """List overlaps, gaps and unreachable rules over the admitted key space."""
    report = RuleTableReport()
    hits = {rule.name: 0 for rule in rules.rules}
    for key in rules.keys:
        matched = rules.matching_rules(key.attrs)
        for rule in matched:
            hits[rule.name] += 1
        if not matched:
            report.gaps.append(key.label)
        elif len(matched) > 1:
            report.overlaps.append((key.label, tuple(r.name for r in matched)))
    report.unreachable = [name for name, count in hits.items() if count == 0]

    if not report.is_valid:
        logger.warning("Rule table has problems", extra={
            "overlaps": len(report.overlaps),
            "gaps": len(report.gaps),
            "unreachable": len(report.unreachable),
        })
    return report


def status_counts(groups: Sequence[StatusTechGroup]) -> Dict[Status, int]:
    counts = {status: 0 for status in Status}
    for group in groups:
        counts[group.status] += 1
    return counts


ATTRIBUTE_COLUMNS = ["household_id", "dwelling", "area_band", "occupancy", "income_band", "hp", "ev"]


def _attribute_row(row: Mapping[str, str], line: int) -> HouseholdAttributes:
    try:
        area = row.get("area_band") or None
        if area is None:
            area = band_area(row["dwelling"], row["area_sqm"])
        income = row.get("income_band") or None
        if income is None:
            income = band_income(row["income_dkk"])
        return HouseholdAttributes.parse(row["dwelling"], area, row["occupancy"], income,
                                         row.get("hp", "0"), row.get("ev", "0"))
    except (ValidationError, ValueError, KeyError) as e:
        message = e.message if isinstance(e, ValidationError) else str(e)
        raise ValidationError(
            f"Invalid attributes on line {line}: {message}",
            field="attributes",
            value=row.get("household_id"),
            details={"line": line},
        )


def read_attributes_csv(path: Union[str, Path]) -> Dict[str, HouseholdAttributes]:
    """
    Read an attributes CSV into an insertion-ordered id -> attributes mapping.

    ``area_sqm`` may stand in for ``area_band`` and ``income_dkk`` for
    ``income_band``; raw values are banded with the half-open thresholds.

    Raises:
        FormatError: missing columns
        ValidationError: a row has invalid values or a duplicate id (line in details)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except OSError as e:
        raise FileOperationError(str(e), file_path=str(path), operation="read_attributes")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"Unreadable attributes file: {e}", file_path=str(path), line=1)

    columns = set(frame.columns)
    required = {"household_id", "dwelling", "occupancy", "hp", "ev"}
    missing = sorted(required - columns)
    if "area_band" not in columns and "area_sqm" not in columns:
        missing.append("area_band")
    if "income_band" not in columns and "income_dkk" not in columns:
        missing.append("income_band")
    if missing:
        raise FormatError(f"Attributes header is missing {missing}", file_path=str(path), line=1,
                          column=missing[0])

    attributes: Dict[str, HouseholdAttributes] = {}
    for index, row in enumerate(frame.to_dict("records")):
        line = index + 2
        household_id = str(row["household_id"]).strip()
        try:
            validate_household_id(household_id)
        except ValidationError:
            raise ValidationError(f"Invalid household id on line {line}", field="household_id",
                                  value=household_id, details={"line": line})
        if household_id in attributes:
            raise ValidationError(f"Duplicate household id on line {line}", field="household_id",
                                  value=household_id, details={"line": line})
        attributes[household_id] = _attribute_row(row, line)

    logger.info("Read attributes", extra={"path": str(path), "households": len(attributes)})
    return attributes


def attributes_frame(attributes: Mapping[str, HouseholdAttributes]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            [hid, a.dwelling.value, a.area_band.value, a.occupancy.value, a.income_band.value,
             int(a.heat_pump), int(a.electric_vehicle)]
            for hid, a in attributes.items()
        ],
        columns=ATTRIBUTE_COLUMNS,
    )


def write_attributes_csv(path: Union[str, Path], attributes: Mapping[str, HouseholdAttributes]) -> int:
    return write_frame_csv(path, attributes_frame(attributes))
