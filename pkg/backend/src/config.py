"""
Process-level settings for the grid tariff simulator, read from ``TARIFFSIM_*``
environment variables or a ``.env`` file.

Run-specific inputs (scenarios, factor grid, file paths) live in YAML run
files validated by ``models.RunConfig``; this module only covers knobs that
belong to the process: logging, worker threads, block sizes and data paths.
"""

from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

DATA_DIR = Path(__file__).resolve().parent / "data"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
LOG_FORMATS = ("json", "text")
ENVIRONMENTS = ("development", "testing", "production")

# Applied on top of the defaults unless the field was set explicitly
ENVIRONMENT_PRESETS: Dict[str, Dict[str, Any]] = {
    "development": {"log_level": "DEBUG"},
    "testing": {"log_level": "WARNING", "chunk_households": 7},
    "production": {"log_level": "INFO", "log_format": "json"},
}


def _one_of(value: str, allowed: Sequence[str], name: str) -> str:
    if value not in allowed:
        raise ValueError(f"{name} must be one of: {', '.join(allowed)}")
    return value


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="TARIFFSIM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    environment: str = Field(default="development")

    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json")
    log_file: Optional[str] = Field(default=None)

    default_threads: int = Field(default=1, ge=1, le=256)
    # households per processing block
    chunk_households: int = Field(default=2000, ge=1)

    cors_origins: str = Field(default="http://localhost:3000")

    hours_per_year: int = Field(default=8760, ge=1)
    data_dir: Path = Field(default=DATA_DIR)

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, v: str) -> str:
        return _one_of(v.upper(), LOG_LEVELS, "Log level")

    @field_validator("log_format")
    @classmethod
    def check_log_format(cls, v: str) -> str:
        return _one_of(v.lower(), LOG_FORMATS, "Log format")

    @field_validator("environment")
    @classmethod
    def check_environment(cls, v: str) -> str:
        return _one_of(v.lower(), ENVIRONMENTS, "Environment")

    @property
    def is_production(self) -> bool:
        return self.environment == "production"

    @property
    def cors_origins_list(self) -> List[str]:
        return [origin.strip() for origin in self.cors_origins.split(",") if origin.strip()]

    @property
    def default_rules_path(self) -> Path:
        return self.data_dir / "default_rules.yaml"

    @property
    def default_population_path(self) -> Path:
        return self.data_dir / "default_population.yaml"

    @property
    def default_run_path(self) -> Path:
        return self.data_dir / "default_run.yaml"


def apply_environment_config(settings: Settings) -> Settings:
    """Fill in the environment's preset values for fields the caller did not set."""
    for key, value in ENVIRONMENT_PRESETS[settings.environment].items():
        if key not in settings.model_fields_set:
            setattr(settings, key, value)
    return settings


@lru_cache()
def get_settings() -> Settings:
    return apply_environment_config(Settings())
