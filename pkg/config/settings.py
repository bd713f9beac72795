"""
Configuration management for the bandit-mechanism toolkit.
"""
import os
import logging
from typing import List, Optional, Tuple, Type

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Toolkit settings, read from explicit arguments or a config file (never the environment)."""

    # Enumeration budget
    max_enumeration_kt: int = Field(16, ge=1)
    enumeration_hard_cap: int = Field(22, ge=1)
    max_bid_profiles: int = Field(4096, ge=1)
    max_batch_runs: int = Field(250_000, ge=1)

    # Polynomial budget
    max_polynomial_kt: int = Field(12, ge=1)
    max_history_enumeration: int = Field(4096, ge=1)

    # Numerical tolerances
    myerson_relative_tol: float = 1e-9
    myerson_initial_grid: int = Field(64, ge=2)
    quadrature_rel_tol: float = 1e-9
    quadrature_abs_tol: float = 1e-12

    # Statistics
    flag_sigmas: float = 3.0
    min_sweep_trials: int = Field(30, ge=1)
    min_fit_points: int = Field(4, ge=2)
    trial_batch_size: int = Field(256, ge=1)
    low_power_relative_se: float = 0.25

    # Output
    output_directory: str = "results"
    logs_directory: str = "logs"
    csv_significant_digits: int = Field(12, ge=1, le=17)
    log_level: str = "INFO"

    # Default bid grid: multipliers of a base bid
    default_grid_multipliers: List[float] = [0.25, 0.5, 1.0, 2.0, 4.0]

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # Flags and config files only; the process environment is never read.
        return init_settings, dotenv_settings


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the current settings instance."""
    return settings


def configure_settings(config_file: Optional[str] = None, **overrides) -> Settings:
    """Replace the global settings from a config file plus explicit overrides."""
    global settings
    if config_file is not None and not os.path.isfile(config_file):
        from core.exceptions import ConfigurationError
        raise ConfigurationError(f"Config file not found: {config_file}")
    try:
        settings = Settings(_env_file=config_file, **overrides)
    except ValidationError as e:
        from core.exceptions import ConfigurationError
        raise ConfigurationError(f"Invalid settings: {e.errors()[0]['loc']}: {e.errors()[0]['msg']}")
    logger.debug(f"Settings configured from {config_file or 'defaults'}")
    return settings


def validate_settings():
    """Validate budget consistency and make sure output directories exist."""
    from core.exceptions import ConfigurationError

    if settings.max_enumeration_kt > settings.enumeration_hard_cap:
        raise ConfigurationError(
            f"max_enumeration_kt={settings.max_enumeration_kt} exceeds the hard cap "
            f"{settings.enumeration_hard_cap}"
        )
    if min(settings.myerson_relative_tol, settings.quadrature_rel_tol, settings.quadrature_abs_tol) <= 0:
        raise ConfigurationError("Numerical tolerances must be positive")
    if settings.flag_sigmas <= 0:
        raise ConfigurationError("flag_sigmas must be positive")
    if not settings.default_grid_multipliers or min(settings.default_grid_multipliers) <= 0:
        raise ConfigurationError("default_grid_multipliers must be non-empty and positive")

    # Ensure directories exist
    os.makedirs(settings.output_directory, exist_ok=True)
    os.makedirs(settings.logs_directory, exist_ok=True)
