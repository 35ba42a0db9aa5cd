"""
Hourly metering data: parsing, cleaning, system load and per-group annual
peak/off-peak aggregation.

Energy is int64 watt-hours throughout. Profiles travel in ``ProfileBlock``
batches (households x hours) so every stage can run block by block; all
reductions are integer sums and therefore independent of how households are
split across blocks or workers.
"""

import csv
import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from config import get_settings
from domain import ClassificationRuleTable, GroupKey, HouseholdAttributes, StatusTechGroup, classify_financial_status
from exceptions import EmptyGroup, FormatError, MixedYearLength, UnmappedCombination, ValidationError, \
    file_operation_error
from logging_config import setup_logging
from money import WH_PER_KWH, div_round_half_even
from streaming_csv import StreamingConfig, StreamingCSVWriter
from tariff import PeakWindow, split_consumption
from validation import HOUSEHOLD_ID_PATTERN

logger = setup_logging(__name__)

METERING_COLUMNS = ["household_id", "hour", "kwh"]
EXCLUSION_COLUMNS = ["household_id", "reason"]
ISSUE_COLUMNS = ["line", "household_id", "reason"]

# Profiles with more faulty hours than this are rebuilt wholesale
REBUILD_THRESHOLD = 1000

# at most 999,999.999 kWh in one hourly slot
MAX_KWH_DIGITS = 6
KWH_PATTERN = rf"\d{{1,{MAX_KWH_DIGITS}}}(?:\.\d{{1,3}})?"
NEGATIVE_PATTERN = r"-\s*\d+(?:\.\d*)?"


@dataclass
class HourlyProfile:
    household_id: str
    energy: np.ndarray
    faulty: np.ndarray

    def __post_init__(self):
        self.energy = np.asarray(self.energy, dtype=np.int64)
        self.faulty = np.asarray(self.faulty, dtype=bool)
        if self.energy.shape != self.faulty.shape or self.energy.ndim != 1:
            raise ValidationError("Energy and faulty mask must be equal-length vectors",
                                  field="energy", value=self.household_id)
        if np.any(self.energy[~self.faulty] < 0):
            raise ValidationError("Negative energy on a non-faulty slot", field="energy",
                                  value=self.household_id)

    @property
    def hours(self) -> int:
        return len(self.energy)

    @property
    def faulty_count(self) -> int:
        return int(self.faulty.sum())

    @property
    def total_wh(self) -> int:
        return int(self.energy[~self.faulty].sum())


@dataclass
class ProfileBlock:
    """A batch of equal-length profiles; faulty slots hold 0 Wh."""
    household_ids: List[str]
    energy: np.ndarray
    faulty: np.ndarray

    def __post_init__(self):
        self.energy = np.asarray(self.energy, dtype=np.int64)
        self.faulty = np.asarray(self.faulty, dtype=bool)
        if self.energy.ndim != 2 or self.energy.shape != self.faulty.shape:
            raise ValidationError("Block energy and mask must be matching 2-D arrays", field="energy")
        if len(self.household_ids) != self.energy.shape[0]:
            raise ValidationError("One household id per block row required", field="household_ids")
        if self.faulty.any():
            self.energy = np.where(self.faulty, 0, self.energy)

    @classmethod
    def from_profiles(cls, profiles: Sequence[HourlyProfile], hours: Optional[int] = None) -> "ProfileBlock":
        if not profiles:
            hours = hours if hours is not None else get_settings().hours_per_year
            return cls([], np.zeros((0, hours), dtype=np.int64), np.zeros((0, hours), dtype=bool))
        expected = hours if hours is not None else profiles[0].hours
        for profile in profiles:
            if profile.hours != expected:
                raise MixedYearLength(expected, profile.hours, profile.household_id)
        return cls(
            [p.household_id for p in profiles],
            np.stack([p.energy for p in profiles]),
            np.stack([p.faulty for p in profiles]),
        )

    @classmethod
    def clean(cls, household_ids: List[str], energy: np.ndarray) -> "ProfileBlock":
        energy = np.asarray(energy, dtype=np.int64)
        return cls(household_ids, energy, np.zeros(energy.shape, dtype=bool))

    def __len__(self) -> int:
        return len(self.household_ids)

    @property
    def hours(self) -> int:
        return self.energy.shape[1]

    def profile(self, index: int) -> HourlyProfile:
        return HourlyProfile(self.household_ids[index], self.energy[index].copy(), self.faulty[index].copy())

    def profiles(self) -> List[HourlyProfile]:
        return [self.profile(i) for i in range(len(self))]

    def select(self, rows) -> "ProfileBlock":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return ProfileBlock([self.household_ids[i] for i in rows], self.energy[rows], self.faulty[rows])

    def split(self, size: int) -> List["ProfileBlock"]:
        return [self.select(np.arange(start, min(start + size, len(self))))
                for start in range(0, len(self), size)]


@dataclass(frozen=True)
class SystemLoad:
    energy: np.ndarray

    @property
    def hours(self) -> int:
        return len(self.energy)

    @property
    def total_wh(self) -> int:
        return int(self.energy.sum())


@dataclass(frozen=True)
class MeteringIssue:
    line: int
    household_id: str
    reason: str


@dataclass(frozen=True)
class Exclusion:
    household_id: str
    reason: str


@dataclass
class _ProfileState:
    energy: np.ndarray
    seen: np.ndarray
    valid: np.ndarray


def _kwh_to_wh(values: pd.Series) -> np.ndarray:
    """Exact decimal kWh strings (<= 3 fractional digits) to integer Wh."""
    parts = values.str.split(".", n=1, expand=True)
    whole = parts[0].astype(np.int64).to_numpy()
    if parts.shape[1] > 1:
        frac = parts[1].fillna("").str.ljust(3, "0").astype(np.int64).to_numpy()
    else:
        frac = np.zeros(len(values), dtype=np.int64)
    return whole * WH_PER_KWH + frac


def _open_text(source) -> Tuple[TextIO, bool]:
    if isinstance(source, (str, Path)):
        opener = gzip.open if str(source).endswith(".gz") else open
        return opener(source, "rt", encoding="utf-8-sig", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig")), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline=""), False


def parse_metering(source: Union[str, Path, bytes, BinaryIO, TextIO],
                   hours: Optional[int] = None,
                   chunk_rows: int = 500_000) -> Tuple[ProfileBlock, List[MeteringIssue]]:
    """
    Parse a ``household_id,hour,kwh`` stream into one profile per household.

    Rows may arrive in any order. An empty kwh field marks the slot faulty;
    a negative value marks it faulty and is logged. Malformed rows, unknown
    hours and duplicate (household, hour) rows become issues carrying their
    1-based line number; the first occurrence of a duplicate wins. Hours no
    row covers are faulty.

    Raises:
        FormatError: the header is missing or wrong
    """
    hours = hours if hours is not None else get_settings().hours_per_year
    try:
        handle, owned = _open_text(source)
    except OSError as e:
        raise file_operation_error(str(e), str(source), "parse_metering")
    states: Dict[str, _ProfileState] = {}
    issues: List[MeteringIssue] = []

    try:
        header = handle.readline().strip().lstrip("\ufeff")
        if [c.strip() for c in header.split(",")] != METERING_COLUMNS:
            raise FormatError(f"Metering header must be {','.join(METERING_COLUMNS)}, got {header!r}",
                              line=1, column="header")

        reader = pd.read_csv(handle, sep="\x1f", header=None, names=["raw"], dtype=str,
                             keep_default_na=False, na_filter=False, skip_blank_lines=False,
                             quoting=csv.QUOTE_NONE, chunksize=chunk_rows)
        line_offset = 2
        for chunk in reader:
            raw = chunk["raw"].str.strip()
            lines = np.arange(line_offset, line_offset + len(chunk))
            line_offset += len(chunk)
            _parse_chunk(raw, lines, hours, states, issues)
    except pd.errors.EmptyDataError:
        pass
    except pd.errors.ParserError as e:
        raise FormatError(f"Unreadable metering stream: {e}")
    finally:
        if owned:
            handle.close()

    ids = list(states)
    if ids:
        energy = np.stack([states[h].energy for h in ids])
        faulty = ~np.stack([states[h].valid for h in ids])
    else:
        energy = np.zeros((0, hours), dtype=np.int64)
        faulty = np.zeros((0, hours), dtype=bool)
    block = ProfileBlock(ids, energy, faulty)
    issues.sort(key=lambda issue: issue.line)

    logger.info("Parsed metering data", extra={
        "households": len(block),
        "hours": hours,
        "faulty_slots": int(block.faulty.sum()),
        "issues": len(issues),
    })
    return block, issues


def _parse_chunk(raw: pd.Series, lines: np.ndarray, hours: int,
                 states: Dict[str, _ProfileState], issues: List[MeteringIssue]):
    nonblank = raw != ""
    fields = raw.str.count(",")
    for line in lines[nonblank.to_numpy() & (fields.to_numpy() != 2)]:
        issues.append(MeteringIssue(int(line), "", "wrong field count"))
    ok = nonblank & (fields == 2)
    if not ok.any():
        return

    parts = raw[ok].str.split(",", n=2, expand=True)
    lines = lines[ok.to_numpy()]
    hid = parts[0].str.strip()
    hour_s = parts[1].str.strip()
    kwh_s = parts[2].str.strip()

    good_id = hid.str.match(HOUSEHOLD_ID_PATTERN).to_numpy()
    good_hour = hour_s.str.fullmatch(r"\d{1,9}").to_numpy()
    hour = np.full(len(hour_s), -1, dtype=np.int64)
    hour[good_hour] = hour_s[good_hour].astype(np.int64).to_numpy()
    in_range = good_hour & (hour < hours)

    empty = (kwh_s == "").to_numpy()
    number = kwh_s.str.fullmatch(KWH_PATTERN).to_numpy()
    negative = kwh_s.str.fullmatch(NEGATIVE_PATTERN).to_numpy()

    for i in np.flatnonzero(~good_id):
        issues.append(MeteringIssue(int(lines[i]), "", "invalid household id"))
    for i in np.flatnonzero(good_id & ~in_range):
        issues.append(MeteringIssue(int(lines[i]), hid.iat[i], "hour out of range"))
    usable = good_id & in_range
    for i in np.flatnonzero(usable & negative):
        issues.append(MeteringIssue(int(lines[i]), hid.iat[i], "negative kwh"))
    for i in np.flatnonzero(usable & ~(empty | number | negative)):
        issues.append(MeteringIssue(int(lines[i]), hid.iat[i], "malformed kwh"))

    wh = np.zeros(len(kwh_s), dtype=np.int64)
    if number.any():
        wh[number] = _kwh_to_wh(kwh_s[number])

    rows = pd.DataFrame({"hid": hid.to_numpy(), "hour": hour, "wh": wh, "valid": number,
                         "line": lines})[usable]
    for household_id, group in rows.groupby("hid", sort=False):
        state = states.get(household_id)
        if state is None:
            state = _ProfileState(np.zeros(hours, dtype=np.int64),
                                  np.zeros(hours, dtype=bool), np.zeros(hours, dtype=bool))
            states[household_id] = state
        h = group["hour"].to_numpy()
        duplicate = group.duplicated("hour", keep="first").to_numpy() | state.seen[h]
        for line in group["line"].to_numpy()[duplicate]:
            issues.append(MeteringIssue(int(line), household_id, "duplicate hour"))
        keep = ~duplicate
        h_keep = h[keep]
        valid = group["valid"].to_numpy()[keep]
        state.seen[h_keep] = True
        state.valid[h_keep] = valid
        state.energy[h_keep[valid]] = group["wh"].to_numpy()[keep][valid]


def write_metering_csv(path: Union[str, Path], blocks: Iterable[ProfileBlock],
                       config: Optional[StreamingConfig] = None) -> int:
    """Write blocks in the metering CSV format; faulty slots become empty kwh fields."""
    with StreamingCSVWriter(path, METERING_COLUMNS, config) as writer:
        for block in blocks:
            if not len(block):
                continue
            n, hours = block.energy.shape
            flat = block.energy.reshape(-1)
            kwh = pd.Series(flat // WH_PER_KWH).astype(str) + "." + \
                pd.Series(flat % WH_PER_KWH).astype(str).str.zfill(3)
            kwh[block.faulty.reshape(-1)] = ""
            frame = pd.DataFrame({
                "household_id": np.repeat(np.asarray(block.household_ids, dtype=object), hours),
                "hour": np.tile(np.arange(hours), n),
                "kwh": kwh.to_numpy(),
            })
            writer.write_frame(frame)
        rows = writer.row_count
    logger.info("Wrote metering CSV", extra={"path": str(path), "rows": rows})
    return rows


def write_issue_log(path: Union[str, Path], issues: Sequence[MeteringIssue]) -> int:
    with StreamingCSVWriter(path, ISSUE_COLUMNS) as writer:
        writer.write_rows([[i.line, i.household_id, i.reason] for i in issues])
        return writer.row_count


def write_exclusion_report(path: Union[str, Path], exclusions: Sequence[Exclusion]) -> int:
    with StreamingCSVWriter(path, EXCLUSION_COLUMNS) as writer:
        writer.write_rows([[e.household_id, e.reason] for e in exclusions])
        return writer.row_count


def classify_block(block: ProfileBlock,
                   attributes: Mapping[str, HouseholdAttributes],
                   rules: ClassificationRuleTable,
                   strict: bool = False) -> Tuple[np.ndarray, List[Exclusion]]:
    """
    Group key id per block row, -1 for households that cannot be classified.

    Raises:
        UnmappedCombination: in strict mode, for the first unclassifiable household
    """
    key_ids = np.full(len(block), -1, dtype=np.int64)
    exclusions = []
    for row, household_id in enumerate(block.household_ids):
        attrs = attributes.get(household_id)
        if attrs is None:
            if strict:
                raise ValidationError(f"No attributes for household {household_id}",
                                      field="household_id", value=household_id)
            exclusions.append(Exclusion(household_id, "no attributes"))
            continue
        try:
            classify_financial_status(attrs, rules, household_id)
            key_ids[row] = rules.key_for(attrs, household_id).id
        except UnmappedCombination:
            if strict:
                raise
            exclusions.append(Exclusion(household_id, f"unmapped combination {attrs.label}"))
    return key_ids, exclusions


class DonorTally:
    """
    Per group key and hour: sum and count of non-faulty readings.

    Tallies from different blocks merge by addition, so donor averages do not
    depend on how households were batched.
    """

    def __init__(self, groups: int, hours: int):
        self.sums = np.zeros((groups, hours), dtype=np.int64)
        self.counts = np.zeros((groups, hours), dtype=np.int64)

    @property
    def hours(self) -> int:
        return self.sums.shape[1]

    def add(self, block: ProfileBlock, key_ids: np.ndarray) -> "DonorTally":
        if block.hours != self.hours:
            raise MixedYearLength(self.hours, block.hours)
        clean = ~block.faulty
        for key_id in np.unique(key_ids[key_ids >= 0]):
            rows = key_ids == key_id
            self.sums[key_id] += np.where(clean[rows], block.energy[rows], 0).sum(axis=0)
            self.counts[key_id] += clean[rows].sum(axis=0)
        return self

    def merge(self, other: "DonorTally") -> "DonorTally":
        self.sums += other.sums
        self.counts += other.counts
        return self

    def average(self, key_id: int) -> Tuple[np.ndarray, np.ndarray]:
        """Rounded per-hour mean and a mask of hours with at least one donor."""
        counts = self.counts[key_id]
        covered = counts > 0
        mean = np.zeros(self.hours, dtype=np.int64)
        if covered.any():
            mean[covered] = div_round_half_even(self.sums[key_id][covered], counts[covered])
        return mean, covered


def category_average_profile(profiles: Union[ProfileBlock, Sequence[HourlyProfile]],
                             group: Optional[str] = None) -> HourlyProfile:
    """
    Per-hour mean over the non-faulty readings of one group, rounded half-even.

    Raises:
        EmptyGroup: some hour has no non-faulty reading
    """
    block = profiles if isinstance(profiles, ProfileBlock) else ProfileBlock.from_profiles(list(profiles))
    if not len(block):
        raise EmptyGroup(group or "<empty>")
    tally = DonorTally(1, block.hours).add(block, np.zeros(len(block), dtype=np.int64))
    mean, covered = tally.average(0)
    if not covered.all():
        raise EmptyGroup(group or "<group>", int(np.flatnonzero(~covered)[0]))
    return HourlyProfile(f"avg:{group}" if group else "avg", mean, np.zeros(block.hours, dtype=bool))


@dataclass
class CleanResult:
    block: ProfileBlock
    key_ids: np.ndarray
    exclusions: List[Exclusion] = field(default_factory=list)
    rebuilt: int = 0
    filled: int = 0


def clean_profiles(block: ProfileBlock,
                   attributes: Mapping[str, HouseholdAttributes],
                   rules: ClassificationRuleTable,
                   *,
                   on_empty_group: str = "raise",
                   strict: bool = False,
                   tally: Optional[DonorTally] = None) -> CleanResult:
    """
    Repair faulty slots from the household's group average.

    More than ``REBUILD_THRESHOLD`` faulty hours: the whole profile is replaced
    by the group average. Fewer: only faulty hours are filled. Donor averages use
    readings that were non-faulty in the input, never filled values. When the
    block is one of several, pass a ``tally`` built over all of them.

    Unclassifiable households are dropped and reported. Households whose group
    lacks a donor for a needed hour raise ``EmptyGroup``, or are dropped and
    reported when ``on_empty_group="exclude"``.
    """
    if on_empty_group not in ("raise", "exclude"):
        raise ValidationError("on_empty_group must be 'raise' or 'exclude'", field="on_empty_group",
                              value=on_empty_group)
    key_ids, exclusions = classify_block(block, attributes, rules, strict)
    if tally is None:
        tally = DonorTally(len(rules.keys), block.hours).add(block, key_ids)

    energy = block.energy.copy()
    keep = key_ids >= 0
    faulty_counts = block.faulty.sum(axis=1)
    rebuilt = filled = 0
    averages: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    for row in np.flatnonzero(keep & (faulty_counts > 0)):
        key_id = int(key_ids[row])
        if key_id not in averages:
            averages[key_id] = tally.average(key_id)
        mean, covered = averages[key_id]
        wholesale = faulty_counts[row] > REBUILD_THRESHOLD
        needed = np.ones(block.hours, dtype=bool) if wholesale else block.faulty[row]
        gaps = needed & ~covered
        if gaps.any():
            group_label = rules.keys[key_id].label
            if on_empty_group == "raise":
                raise EmptyGroup(group_label, int(np.flatnonzero(gaps)[0]))
            exclusions.append(Exclusion(block.household_ids[row], f"no donor profile for group {group_label}"))
            keep[row] = False
            continue
        if wholesale:
            energy[row] = mean
            rebuilt += 1
        else:
            energy[row, needed] = mean[needed]
            filled += 1

    rows = np.flatnonzero(keep)
    cleaned = ProfileBlock.clean([block.household_ids[i] for i in rows], energy[rows])
    logger.info("Cleaned profiles", extra={
        "households": len(block),
        "kept": len(cleaned),
        "rebuilt": rebuilt,
        "filled": filled,
        "excluded": len(exclusions),
    })
    return CleanResult(cleaned, key_ids[rows], exclusions, rebuilt, filled)


def system_load(profiles: Iterable[Union[ProfileBlock, HourlyProfile]],
                hours: Optional[int] = None) -> SystemLoad:
    """
    Exact slot-wise sum of cleaned profiles.

    Raises:
        MixedYearLength: profiles of different lengths
    """
    total = None
    for item in profiles:
        length = item.hours
        if total is None:
            if hours is not None and length != hours:
                raise MixedYearLength(hours, length, getattr(item, "household_id", None))
            total = np.zeros(length, dtype=np.int64)
        elif length != len(total):
            raise MixedYearLength(len(total), length, getattr(item, "household_id", None))
        if isinstance(item, ProfileBlock):
            total += item.energy.sum(axis=0)
        else:
            total += item.energy
    if total is None:
        total = np.zeros(hours if hours is not None else get_settings().hours_per_year, dtype=np.int64)
    return SystemLoad(total)


@dataclass(frozen=True)
class GroupAnnual:
    group: GroupKey
    status_tech: StatusTechGroup
    households: int
    q_peak_wh: int
    q_base_wh: int

    @property
    def total_wh(self) -> int:
        return self.q_peak_wh + self.q_base_wh


class GroupTally:
    """Household counts and block energies per group key; merges by addition."""

    def __init__(self, groups: int):
        self.households = np.zeros(groups, dtype=np.int64)
        self.q_peak = np.zeros(groups, dtype=np.int64)
        self.q_base = np.zeros(groups, dtype=np.int64)

    def add(self, key_ids: np.ndarray, q_peak: np.ndarray, q_base: np.ndarray) -> "GroupTally":
        groups = len(self.households)
        self.households += np.bincount(key_ids, minlength=groups)
        # bincount sums in float64; add.at keeps int64 exact
        np.add.at(self.q_peak, key_ids, np.asarray(q_peak, dtype=np.int64))
        np.add.at(self.q_base, key_ids, np.asarray(q_base, dtype=np.int64))
        return self

    def merge(self, other: "GroupTally") -> "GroupTally":
        self.households += other.households
        self.q_peak += other.q_peak
        self.q_base += other.q_base
        return self

    def annuals(self, rules: ClassificationRuleTable) -> List[GroupAnnual]:
        result = []
        for key in rules.keys:
            count = int(self.households[key.id])
            if count == 0:
                continue
            result.append(GroupAnnual(
                group=key,
                status_tech=classify_financial_status(key.attrs, rules),
                households=count,
                q_peak_wh=int(self.q_peak[key.id]),
                q_base_wh=int(self.q_base[key.id]),
            ))
        return result


def aggregate_annual(block: ProfileBlock,
                     attributes: Mapping[str, HouseholdAttributes],
                     window: PeakWindow,
                     rules: ClassificationRuleTable) -> List[GroupAnnual]:
    """
    Per-group household count and exact q_peak/q_base over cleaned profiles.

    Raises:
        UnmappedCombination: a household's attributes cannot be classified
    """
    key_ids, _ = classify_block(block, attributes, rules, strict=True)
    q_peak, q_base = split_consumption(block.energy, window)
    return GroupTally(len(rules.keys)).add(key_ids, q_peak, q_base).annuals(rules)
