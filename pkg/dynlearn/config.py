"""Application configuration module."""

from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from ``DYNLEARN_*`` environment variables.

    The run overrides (``plant`` ... ``gains``) are left unset by default so that
    only values actually present in the environment take part in config merging.
    """

    model_config = SettingsConfigDict(
        env_prefix="DYNLEARN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Process settings
    seed: int = Field(default=0)
    out: str = Field(default="runs")
    log_level: str = Field(default="INFO")
    debug: bool = Field(default=False)
    record_timings: bool = Field(default=False)
    export_prometheus: bool = Field(default=False)

    # Run overrides
    plant: Optional[str] = Field(default=None)
    model: Optional[str] = Field(default=None)
    dt: Optional[float] = Field(default=None)
    epochs: Optional[int] = Field(default=None)
    hidden: Optional[str] = Field(default=None)
    window: Optional[int] = Field(default=None)
    gains: Optional[str] = Field(default=None)

    # Numerical guards
    mass_condition_limit: float = Field(default=1e12)
    rank_tolerance: float = Field(default=1e-10)

    def run_overrides(self) -> dict:
        """Values explicitly provided through the environment or ``.env``."""
        return self.model_dump(exclude_unset=True)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
