"""
Pydantic models for the YAML inputs: run files, scenarios, the base case and
the synthetic population table.

Numbers are parsed as ``Decimal`` (floats via their shortest repr) and handed to
the engine as exact ``Fraction`` values.
"""

from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, BeforeValidator, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from config import get_settings
from domain import Status, StatusTechGroup, Tech
from exceptions import ConfigurationError, FileOperationError, ValidationError
from logging_config import setup_logging
from money import kwh_to_wh, to_fraction
from tariff import BaseCaseInputs, CalibrationMode, TariffScenario
import validation

logger = setup_logging(__name__)


def _exact_decimal(value: Any) -> Any:
    if isinstance(value, bool):
        raise ValueError("expected a number, got a boolean")
    if isinstance(value, float):
        return Decimal(repr(value))
    if isinstance(value, (int, str)):
        return Decimal(str(value).strip())
    return value


ExactDecimal = Annotated[Decimal, BeforeValidator(_exact_decimal)]


def _checked(check):
    """Wrap a validation helper so pydantic reports its failures as field errors."""
    def wrapper(*args, **kwargs):
        try:
            return check(*args, **kwargs)
        except ValidationError as e:
            raise ValueError(e.message)
    return wrapper


validate_enum_value = _checked(validation.validate_enum_value)
validate_factor_grid = _checked(validation.validate_factor_grid)
validate_numeric_range = _checked(validation.validate_numeric_range)

DEFAULT_FACTOR_GRID = [Decimal(i) / 10 for i in range(10, -1, -1)]
BASE_SHARE = "base"


def frac(value: Optional[Decimal]) -> Optional[Fraction]:
    return None if value is None else to_fraction(value)


class BaseCaseConfig(BaseModel):
    """Flat two-part tariff the designs are compared against."""
    flat_rate_ore_per_kwh: ExactDecimal = Field(default=Decimal("18.25"), gt=0)
    subscription_dkk: ExactDecimal = Field(default=Decimal("428.8"), ge=0)
    household_count: Optional[int] = Field(default=None, ge=1)
    total_consumption_kwh: Optional[ExactDecimal] = Field(default=None, gt=0)
    volumetric_revenue_dkk: Optional[ExactDecimal] = Field(default=None, gt=0)

    def to_inputs(self, total_energy_wh: int, households: int) -> BaseCaseInputs:
        """Combine the file values with data-derived totals; file values win."""
        if self.total_consumption_kwh is not None:
            total_energy_wh = kwh_to_wh(self.total_consumption_kwh)
        return BaseCaseInputs(
            flat_rate=to_fraction(self.flat_rate_ore_per_kwh),
            base_fee=to_fraction(self.subscription_dkk),
            total_energy_wh=int(total_energy_wh),
            households=int(self.household_count or households),
            volumetric_revenue_override=frac(self.volumetric_revenue_dkk),
        )


class ScenarioConfig(BaseModel):
    id: str = Field(..., min_length=1, max_length=64, pattern=r"^[A-Za-z0-9_.-]+$")
    volumetric_share: Union[Literal["base"], ExactDecimal]
    recovery_factor: Optional[ExactDecimal] = None
    peak_fraction: Optional[ExactDecimal] = None
    calibration_mode: Optional[str] = None

    @field_validator("volumetric_share", mode="before")
    @classmethod
    def validate_share(cls, v):
        if isinstance(v, str) and v.strip().lower() == BASE_SHARE:
            return BASE_SHARE
        validate_numeric_range(v, 0, 1, "volumetric_share")
        return v

    @field_validator("recovery_factor")
    @classmethod
    def validate_recovery_factor(cls, v):
        if v is not None:
            validate_numeric_range(v, 0, 1, "recovery_factor", min_inclusive=False)
        return v

    @field_validator("peak_fraction")
    @classmethod
    def validate_peak_fraction(cls, v):
        if v is not None:
            validate_numeric_range(v, 0, 1, "peak_fraction", min_inclusive=False, max_inclusive=False)
        return v

    @field_validator("calibration_mode")
    @classmethod
    def validate_mode(cls, v):
        if v is not None:
            return validate_enum_value(v, [m.value for m in CalibrationMode], "calibration_mode")
        return v


class RunConfig(BaseModel):
    """One sweep: data sources, base case, scenario list and factor grid."""
    rules: Optional[Path] = None
    population: Optional[Path] = None
    attributes: Optional[Path] = None
    metering: Optional[Path] = None

    base_case: BaseCaseConfig = Field(default_factory=BaseCaseConfig)
    scenarios: List[ScenarioConfig] = Field(..., min_length=1)
    recovery_factor: ExactDecimal = Decimal("0.8")
    peak_fraction: ExactDecimal = Decimal("0.05")
    calibration_mode: str = CalibrationMode.OFFPEAK_SCALED.value

    factor_grid: List[ExactDecimal] = Field(default_factory=lambda: list(DEFAULT_FACTOR_GRID))
    report_factors: List[ExactDecimal] = Field(default_factory=lambda: [Decimal(1), Decimal(0)])

    output_dir: Path = Path("out")
    strict: bool = False
    on_empty_group: Literal["raise", "exclude"] = "raise"
    threads: Optional[int] = Field(default=None, ge=1, le=256)
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    households: Optional[int] = Field(default=None, ge=1)

    @field_validator("factor_grid")
    @classmethod
    def validate_grid(cls, v):
        validate_factor_grid(v, "factor_grid")
        return v

    @field_validator("report_factors")
    @classmethod
    def validate_report_factors(cls, v):
        validate_factor_grid(v, "report_factors")
        return v

    @field_validator("calibration_mode")
    @classmethod
    def validate_mode(cls, v):
        return validate_enum_value(v, [m.value for m in CalibrationMode], "calibration_mode")

    @field_validator("recovery_factor")
    @classmethod
    def validate_recovery_factor(cls, v):
        validate_numeric_range(v, 0, 1, "recovery_factor", min_inclusive=False)
        return v

    @field_validator("peak_fraction")
    @classmethod
    def validate_peak_fraction(cls, v):
        validate_numeric_range(v, 0, 1, "peak_fraction", min_inclusive=False, max_inclusive=False)
        return v

    @model_validator(mode="after")
    def check_sources(self):
        ids = [s.id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Duplicate scenario ids: {ids}")
        if (self.metering is None) != (self.attributes is None):
            raise ValueError("metering and attributes must be given together")
        grid = {to_fraction(f) for f in self.factor_grid}
        missing = [str(f) for f in self.report_factors if to_fraction(f) not in grid]
        if missing:
            raise ValueError(f"report_factors {missing} are not in factor_grid")
        return self

    @property
    def uses_metering(self) -> bool:
        return self.metering is not None

    def tariff_scenarios(self) -> List[TariffScenario]:
        scenarios = []
        for s in self.scenarios:
            scenarios.append(TariffScenario(
                id=s.id,
                volumetric_share=None if s.volumetric_share == BASE_SHARE else to_fraction(s.volumetric_share),
                recovery_factor=to_fraction(s.recovery_factor if s.recovery_factor is not None
                                            else self.recovery_factor),
                peak_fraction=to_fraction(s.peak_fraction if s.peak_fraction is not None
                                          else self.peak_fraction),
                calibration_mode=CalibrationMode(s.calibration_mode or self.calibration_mode),
            ))
        return scenarios

    def factors(self) -> List[Fraction]:
        return [to_fraction(f) for f in self.factor_grid]

    def reported_factors(self) -> List[Fraction]:
        return [to_fraction(f) for f in self.report_factors]


class StatusTotal(BaseModel):
    population: ExactDecimal = Field(..., ge=0)
    consumption: ExactDecimal = Field(..., ge=0)


class CategoryConfig(BaseModel):
    """One population row: status x tech group narrowed by an attribute predicate."""
    name: str = Field(..., min_length=1)
    status: str
    tech: str
    when: Dict[str, Union[str, List[str]]] = Field(default_factory=dict)
    population: ExactDecimal = Field(..., ge=0)
    consumption: ExactDecimal = Field(..., ge=0)

    @field_validator("status")
    @classmethod
    def validate_status(cls, v):
        return validate_enum_value(v, [s.value for s in Status], "status")

    @field_validator("tech")
    @classmethod
    def validate_tech(cls, v):
        return validate_enum_value(v, [t.value for t in Tech], "tech")


class ShapeConfig(BaseModel):
    morning_peak: ExactDecimal = Field(default=Decimal("0.6"), ge=0)
    evening_peak: ExactDecimal = Field(default=Decimal("1.0"), ge=0)
    base_winter_amplitude: ExactDecimal = Field(default=Decimal("0.15"), ge=0, lt=1)
    hp_daily_amplitude: ExactDecimal = Field(default=Decimal("0.1"), ge=0, lt=1)
    ev_start_hour: int = Field(default=18, ge=0, le=23)
    ev_end_hour: int = Field(default=23, ge=1, le=24)

    @model_validator(mode="after")
    def check_ev_window(self):
        if self.ev_end_hour <= self.ev_start_hour:
            raise ValueError("ev_end_hour must be after ev_start_hour")
        return self


class PopulationConfig(BaseModel):
    households: int = Field(..., ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    hours: int = Field(default=8760, ge=24)
    mean_annual_kwh: ExactDecimal = Field(..., gt=0)
    jitter_sigma: ExactDecimal = Field(default=Decimal("0.25"), ge=0)
    strict: bool = False
    status_totals: Optional[Dict[str, StatusTotal]] = None
    tech_fraction: Dict[str, ExactDecimal] = Field(default_factory=dict)
    shapes: ShapeConfig = Field(default_factory=ShapeConfig)
    categories: List[CategoryConfig] = Field(..., min_length=1)

    @field_validator("status_totals")
    @classmethod
    def validate_status_totals(cls, v):
        if v is not None:
            for key in v:
                validate_enum_value(key, [s.value for s in Status], "status_totals")
        return v

    @field_validator("tech_fraction")
    @classmethod
    def validate_tech_fraction(cls, v):
        for key, value in v.items():
            validate_enum_value(key, [Tech.HP.value, Tech.EV.value], "tech_fraction")
            validate_numeric_range(value, 0, 1, f"tech_fraction.{key}")
        return v

    @model_validator(mode="after")
    def check_categories(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("Duplicate category names")
        if sum(c.population for c in self.categories) <= 0:
            raise ValueError("Population shares must not all be zero")
        if self.status_totals is not None:
            present = {c.status for c in self.categories}
            for status, total in self.status_totals.items():
                if total.population > 0 and status not in present:
                    raise ValueError(f"status_totals lists {status} but no category has that status")
        return self


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise FileOperationError(str(e), file_path=str(path), operation="read_yaml")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in {path}: {e}", config_key=str(path))
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must contain a mapping", config_key=str(path))
    return data


def _validate(model, data: Dict[str, Any], path: Path):
    try:
        return model.model_validate(data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(
            f"Invalid {model.__name__} in {path}: {first['msg']}",
            config_key=".".join(str(p) for p in first["loc"]),
            config_value=first.get("input"),
            details={"file_path": str(path), "errors": len(e.errors())},
        )


def _resolve(base_dir: Path, value: Optional[Path]) -> Optional[Path]:
    if value is None or value.is_absolute():
        return value
    return (base_dir / value).resolve()


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a run file; relative data paths resolve against the file's directory."""
    if path is None:
        path = get_settings().default_run_path
    path = Path(path)
    config = _validate(RunConfig, read_yaml(path), path)
    base_dir = path.resolve().parent
    for name in ("rules", "population", "attributes", "metering"):
        setattr(config, name, _resolve(base_dir, getattr(config, name)))
    if config.output_dir and not config.output_dir.is_absolute():
        config.output_dir = Path.cwd() / config.output_dir
    logger.info("Loaded run config", extra={
        "path": str(path),
        "scenarios": [s.id for s in config.scenarios],
        "factors": len(config.factor_grid),
    })
    return config


def load_population_config(path: Optional[Union[str, Path]] = None) -> PopulationConfig:
    if path is None:
        path = get_settings().default_population_path
    path = Path(path)
    return _validate(PopulationConfig, read_yaml(path), path)


def with_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Re-validate a run config with command-line values applied."""
    if not overrides:
        return config
    return _validate(RunConfig, {**config.model_dump(), **overrides}, Path("<command line>"))


def parse_group_label(label: str) -> StatusTechGroup:
    """``"Low/NoTech"`` -> StatusTechGroup."""
    status, sep, tech = str(label).partition("/")
    if not sep:
        raise ValueError(f"Group must look like 'Status/Tech', got {label!r}")
    try:
        return StatusTechGroup.parse(status.strip(), tech.strip())
    except ValidationError as e:
        raise ValueError(e.message)


class CensusModel(BaseModel):
    census: Dict[str, int] = Field(..., min_length=1, description="Household count per 'Status/Tech' group")

    @field_validator("census")
    @classmethod
    def validate_census(cls, v):
        for label, count in v.items():
            parse_group_label(label)
            if count < 0:
                raise ValueError(f"Household count for {label} must be non-negative")
        return v

    def groups(self) -> Dict[StatusTechGroup, int]:
        return {parse_group_label(label): count for label, count in self.census.items()}


class SolveRequest(BaseModel):
    """Base case, one scenario and the population's block energies."""
    base_case: BaseCaseConfig = Field(default_factory=BaseCaseConfig)
    scenario: ScenarioConfig
    households: int = Field(..., ge=1)
    q_peak_kwh: ExactDecimal = Field(..., gt=0)
    q_base_kwh: ExactDecimal = Field(..., gt=0)
    recovery_factor: ExactDecimal = Decimal("0.8")
    calibration_mode: str = CalibrationMode.OFFPEAK_SCALED.value

    @field_validator("recovery_factor")
    @classmethod
    def validate_recovery_factor(cls, v):
        validate_numeric_range(v, 0, 1, "recovery_factor", min_inclusive=False)
        return v

    @field_validator("calibration_mode")
    @classmethod
    def validate_mode(cls, v):
        return validate_enum_value(v, [m.value for m in CalibrationMode], "calibration_mode")

    def to_inputs(self) -> BaseCaseInputs:
        total_wh = kwh_to_wh(self.q_peak_kwh) + kwh_to_wh(self.q_base_kwh)
        return self.base_case.to_inputs(total_wh, self.households)

    def to_scenario(self) -> TariffScenario:
        s = self.scenario
        return TariffScenario(
            id=s.id,
            volumetric_share=None if s.volumetric_share == BASE_SHARE else to_fraction(s.volumetric_share),
            recovery_factor=to_fraction(s.recovery_factor if s.recovery_factor is not None
                                        else self.recovery_factor),
            calibration_mode=CalibrationMode(s.calibration_mode or self.calibration_mode),
        )


class BillRequest(SolveRequest, CensusModel):
    """A household's consumption billed under one scenario and redistribution factor."""
    group: str
    factor: ExactDecimal = Decimal(1)
    household_peak_kwh: ExactDecimal = Field(..., ge=0)
    household_base_kwh: ExactDecimal = Field(..., ge=0)

    @field_validator("group")
    @classmethod
    def validate_group(cls, v):
        parse_group_label(v)
        return v

    @field_validator("factor")
    @classmethod
    def validate_factor(cls, v):
        validate_numeric_range(v, 0, 1, "factor")
        return v


class RedistributionRequest(CensusModel):
    factor: ExactDecimal
    fee_dkk: ExactDecimal = Field(..., ge=0)

    @field_validator("factor")
    @classmethod
    def validate_factor(cls, v):
        validate_numeric_range(v, 0, 1, "factor")
        return v
