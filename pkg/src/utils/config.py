"""
Configuration management for the decorrelation toolkit.

Loads environment-level settings (data root, logging, output location)
from environment variables or a .env file. Experiment-level settings live
in ExperimentConfig files, see src/experiments/config_loader.py.
"""

from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class DataConfig(BaseSettings):
    """Dataset location and input pipeline settings"""
    data_dir: Optional[str] = Field(default=None, alias="DECORR_DATA_DIR")
    prefetch_depth: int = Field(default=2, ge=1, alias="DECORR_PREFETCH_DEPTH")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")


class AppConfig(BaseSettings):
    """Application configuration"""
    name: str = Field(default="MFD Decorrelation Toolkit", alias="DECORR_APP_NAME")
    version: str = Field(default="1.0.0", alias="DECORR_VERSION")
    log_level: str = Field(default="INFO", alias="DECORR_LOG_LEVEL")
    log_json: bool = Field(default=True, alias="DECORR_LOG_JSON")
    precision: str = Field(default="f64", alias="DECORR_PRECISION")

    # Storage
    output_dir: str = Field(default="./runs", alias="DECORR_OUTPUT_DIR")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")


class Config:
    """Main configuration container"""

    def __init__(self):
        """Initialize all configuration sections"""
        self.data = DataConfig()
        self.app = AppConfig()

    def reload(self) -> "Config":
        """Re-read the environment (used after the CLI exports overrides)"""
        self.data = DataConfig()
        self.app = AppConfig()
        return self


# Global configuration instance
config = Config()
