import os
import sys
from pathlib import Path

import pytest
import yaml

# Must be set before config is imported anywhere
os.environ.setdefault("TARIFFSIM_ENVIRONMENT", "testing")

SRC = Path(__file__).resolve().parent
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from config import get_settings  # noqa: E402
from domain import load_default_rules  # noqa: E402

SMALL_POPULATION = {
    "households": 240,
    "seed": 7,
    "hours": 8760,
    "mean_annual_kwh": 2825.6,
    "jitter_sigma": 0.25,
    "tech_fraction": {"HP": 0.45, "EV": 0.30},
    "categories": [
        {"name": "low_notech", "status": "Low", "tech": "NoTech",
         "when": {"income_band": ["E1"], "area_band": ["A1"]}, "population": 15, "consumption": 9},
        {"name": "low_hp", "status": "Low", "tech": "HP", "when": {}, "population": 3, "consumption": 2},
        {"name": "medium_notech", "status": "Medium", "tech": "NoTech", "when": {"income_band": ["E2"]},
         "population": 50, "consumption": 45},
        {"name": "medium_hp", "status": "Medium", "tech": "HP", "when": {}, "population": 8, "consumption": 12},
        {"name": "medium_ev", "status": "Medium", "tech": "EV", "when": {}, "population": 4, "consumption": 5},
        {"name": "high_notech", "status": "High", "tech": "NoTech", "when": {}, "population": 14, "consumption": 18},
        {"name": "high_hp", "status": "High", "tech": "HP", "when": {}, "population": 3, "consumption": 5},
        {"name": "high_ev", "status": "High", "tech": "EV", "when": {}, "population": 3, "consumption": 4},
    ],
}


def write_yaml(path: Path, data) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def small_run(tmp_path: Path, **overrides) -> dict:
    population = write_yaml(tmp_path / "population.yaml", SMALL_POPULATION)
    run = {
        "population": str(population),
        "base_case": {"flat_rate_ore_per_kwh": 18.25, "subscription_dkk": 428.8},
        "scenarios": [
            {"id": "subs_100", "volumetric_share": 0},
            {"id": "vol_25", "volumetric_share": 0.25},
            {"id": "vol_base", "volumetric_share": "base"},
            {"id": "vol_100", "volumetric_share": 1},
        ],
        "factor_grid": [1.0, 0.5, 0.0],
        "report_factors": [1, 0],
        "output_dir": str(tmp_path / "out"),
    }
    run.update(overrides)
    return run


@pytest.fixture(scope="session")
def rules():
    return load_default_rules()


@pytest.fixture
def settings():
    return get_settings()


@pytest.fixture
def population_file(tmp_path):
    return write_yaml(tmp_path / "population.yaml", SMALL_POPULATION)


@pytest.fixture
def run_file(tmp_path):
    return write_yaml(tmp_path / "run.yaml", small_run(tmp_path))
