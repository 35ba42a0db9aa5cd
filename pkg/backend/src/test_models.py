from decimal import Decimal
from fractions import Fraction

import pytest
from pydantic import ValidationError as PydanticValidationError

from conftest import SMALL_POPULATION, small_run, write_yaml
from domain import Status, StatusTechGroup, Tech
from exceptions import ConfigurationError, FileOperationError
from models import (
    BaseCaseConfig,
    BillRequest,
    CensusModel,
    ScenarioConfig,
    SolveRequest,
    load_population_config,
    load_run_config,
    parse_group_label,
    read_yaml,
    with_overrides,
)
from tariff import CalibrationMode


class TestRunConfig:
    def test_loads_small_run(self, run_file, tmp_path):
        config = load_run_config(run_file)
        assert [s.id for s in config.scenarios] == ["subs_100", "vol_25", "vol_base", "vol_100"]
        assert config.factors() == [Fraction(1), Fraction(1, 2), Fraction(0)]
        assert config.reported_factors() == [Fraction(1), Fraction(0)]
        assert config.population == tmp_path / "population.yaml"
        assert not config.uses_metering

    def test_tariff_scenarios_are_exact(self, run_file):
        scenarios = load_run_config(run_file).tariff_scenarios()
        assert scenarios[1].volumetric_share == Fraction(1, 4)
        assert scenarios[2].volumetric_share is None
        assert scenarios[0].recovery_factor == Fraction(4, 5)
        assert scenarios[0].peak_fraction == Fraction(1, 20)
        assert scenarios[0].calibration_mode is CalibrationMode.OFFPEAK_SCALED

    def test_per_scenario_overrides(self, tmp_path):
        run = small_run(tmp_path, scenarios=[
            {"id": "a", "volumetric_share": 1, "peak_fraction": 0.1, "calibration_mode": "PeakShare"},
        ])
        scenario = load_run_config(write_yaml(tmp_path / "run.yaml", run)).tariff_scenarios()[0]
        assert scenario.peak_fraction == Fraction(1, 10)
        assert scenario.calibration_mode is CalibrationMode.PEAK_SHARE

    def test_relative_paths_resolve_against_file(self, tmp_path):
        sub = tmp_path / "configs"
        sub.mkdir()
        run = small_run(tmp_path, population="../population.yaml", rules="rules.yaml")
        config = load_run_config(write_yaml(sub / "run.yaml", run))
        assert config.population == (tmp_path / "population.yaml").resolve()
        assert config.rules == (sub / "rules.yaml").resolve()

    @pytest.mark.parametrize("override,message", [
        ({"scenarios": [{"id": "x", "volumetric_share": 1.5}]}, "volumetric_share"),
        ({"scenarios": [{"id": "x", "volumetric_share": 0}, {"id": "x", "volumetric_share": 1}]},
         "Duplicate scenario ids"),
        ({"report_factors": [0.25]}, "not in factor_grid"),
        ({"factor_grid": [1.0, 1.0]}, "duplicate"),
        ({"metering": "m.csv"}, "together"),
        ({"scenarios": []}, "scenarios"),
        ({"calibration_mode": "flat"}, "calibration_mode"),
    ])
    def test_invalid_run(self, tmp_path, override, message):
        path = write_yaml(tmp_path / "run.yaml", small_run(tmp_path, **override))
        with pytest.raises(ConfigurationError, match="Invalid RunConfig") as exc_info:
            load_run_config(path)
        assert message in str(exc_info.value)

    def test_with_overrides(self, run_file, tmp_path):
        config = load_run_config(run_file)
        updated = with_overrides(config, {"threads": 4, "seed": 11, "output_dir": tmp_path / "elsewhere"})
        assert updated.threads == 4
        assert updated.seed == 11
        assert updated.output_dir == tmp_path / "elsewhere"
        assert updated.factors() == config.factors()
        assert with_overrides(config, {}) is config

    def test_override_is_validated(self, run_file):
        with pytest.raises(ConfigurationError, match="command line"):
            with_overrides(load_run_config(run_file), {"threads": 0})


class TestBaseCaseConfig:
    def test_data_totals_used_by_default(self):
        inputs = BaseCaseConfig().to_inputs(51_920_000, 20)
        assert inputs.households == 20
        assert inputs.flat_rate == Fraction(73, 4)
        assert inputs.base_fee == Fraction(2144, 5)

    def test_file_values_win(self):
        config = BaseCaseConfig(household_count=1_468_686, total_consumption_kwh="4150190652.055",
                                volumetric_revenue_dkk=757_409_794)
        inputs = config.to_inputs(1, 1)
        assert inputs.households == 1_468_686
        assert inputs.total_energy_wh == 4_150_190_652_055
        assert inputs.volumetric_revenue == 757_409_794

    def test_floats_are_read_exactly(self):
        assert BaseCaseConfig(subscription_dkk=428.8).subscription_dkk == Decimal("428.8")

    def test_rejects_booleans(self):
        with pytest.raises(PydanticValidationError):
            BaseCaseConfig(flat_rate_ore_per_kwh=True)


class TestScenarioConfig:
    def test_base_share_keyword(self):
        assert ScenarioConfig(id="b", volumetric_share="BASE").volumetric_share == "base"

    @pytest.mark.parametrize("field,value", [
        ("recovery_factor", 0),
        ("peak_fraction", 1),
        ("id", "has space"),
    ])
    def test_invalid(self, field, value):
        with pytest.raises(PydanticValidationError):
            ScenarioConfig(**{"id": "s", "volumetric_share": 1, field: value})


class TestPopulationConfig:
    def test_default_population(self):
        config = load_population_config()
        assert config.households == 100_000
        assert set(config.status_totals) == {"Low", "Medium", "High"}

    def test_unknown_status_total(self, tmp_path):
        data = dict(SMALL_POPULATION, status_totals={"Poor": {"population": 1, "consumption": 1}})
        with pytest.raises(ConfigurationError, match="Invalid PopulationConfig"):
            load_population_config(write_yaml(tmp_path / "pop.yaml", data))

    def test_duplicate_category_names(self, tmp_path):
        data = dict(SMALL_POPULATION, categories=SMALL_POPULATION["categories"][:1] * 2)
        with pytest.raises(ConfigurationError, match="Duplicate category names"):
            load_population_config(write_yaml(tmp_path / "pop.yaml", data))


class TestReadYaml:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileOperationError):
            read_yaml(tmp_path / "absent.yaml")

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="must contain a mapping"):
            read_yaml(path)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("a: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="Invalid YAML"):
            read_yaml(path)


class TestRequests:
    def test_group_label(self):
        assert parse_group_label("Low/NoTech") == StatusTechGroup(Status.LOW, Tech.NOTECH)
        assert parse_group_label(" high / ev ") == StatusTechGroup(Status.HIGH, Tech.EV)
        with pytest.raises(ValueError, match="Status/Tech"):
            parse_group_label("Low")

    def test_census(self):
        census = CensusModel(census={"Low/NoTech": 3, "Medium/HP": 7})
        assert census.groups()[StatusTechGroup(Status.MEDIUM, Tech.HP)] == 7
        with pytest.raises(PydanticValidationError):
            CensusModel(census={"Low/NoTech": -1})
        with pytest.raises(PydanticValidationError):
            CensusModel(census={"Poor/NoTech": 1})

    def test_solve_request(self):
        request = SolveRequest(scenario={"id": "vol_100", "volumetric_share": 1}, households=20,
                               q_peak_kwh=3650, q_base_kwh=48270)
        inputs = request.to_inputs()
        assert inputs.total_energy_wh == 51_920_000
        assert request.to_scenario().volumetric_share == 1

    def test_bill_request(self):
        request = BillRequest(scenario={"id": "vol_base", "volumetric_share": "base"}, households=20,
                              q_peak_kwh=3650, q_base_kwh=48270, census={"Low/NoTech": 5, "Medium/NoTech": 15},
                              group="Low/NoTech", factor="0.5", household_peak_kwh=150,
                              household_base_kwh=2000)
        assert request.factor == Decimal("0.5")
        with pytest.raises(PydanticValidationError):
            BillRequest(**{**request.model_dump(), "group": "Low"})
