from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Process-level settings, overridable through PRIVBCAST_* environment variables"""

    # Application
    APP_NAME: str = "privbcast"
    LOG_LEVEL: str = "INFO"
    LOG_PATH: Optional[str] = None

    # Reproducibility
    SEED: Optional[int] = None

    # Simulator
    EVENT_CAP: int = 10_000_000
    WORKERS: int = 1

    # Monitoring
    METRICS_ENABLED: bool = False
    METRICS_PATH: str = "./data/metrics.prom"

    # Storage
    OUTPUT_DIR: str = "./data/runs"

    class Config:
        env_prefix = "PRIVBCAST_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True
        extra = "ignore"


def get_settings() -> Settings:
    """Re-read settings from the environment (the CLI calls this once per command)"""
    return Settings()


settings = Settings()
