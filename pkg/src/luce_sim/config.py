"""Configuration management for the LUCE simulator."""

from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings, overridable through ``LUCE_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="LUCE_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Configuration
    log_level: str = Field(default="INFO")
    data_dir: Path = Field(default=Path("data"))
    log_dir: Path = Field(default=Path("logs"))

    # Console / file logging
    quiet_mode: bool = Field(default=False)  # Reduce console output
    verbose_logging: bool = Field(default=True)  # Detailed file logging

    # Simulation defaults
    default_seed: int = Field(default=42, ge=0, lt=2**64)
    block_capacity: int = Field(default=200, gt=0)
    mining_threads: int = Field(default=1, gt=0)
    token_period_s: float = Field(default=1_209_600.0, gt=0)  # 2 weeks
    renew_lead_time_s: float = Field(default=3_600.0, ge=0)

    # Cost conversion
    gas_price_gwei: str = Field(default="32")
    eth_usd: str = Field(default="1849.44")

    # Harness
    replications: int = Field(default=4, gt=0)
    max_workers: Optional[int] = Field(default=None)  # None = auto-detect
    parallel_processing: bool = Field(default=True)

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        # Ensure directories exist
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_dir.mkdir(parents=True, exist_ok=True)


# Global settings instance
settings = Settings()
