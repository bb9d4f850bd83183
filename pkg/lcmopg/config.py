import os
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

_DEFAULT_DATA_DIR = Path(__file__).resolve().parent.parent / "data"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    output_root: Path = Field(default=Path("./runs"), validation_alias="LCMOPG_OUTPUT_ROOT")
    data_dir: Path = Field(default=_DEFAULT_DATA_DIR, validation_alias="LCMOPG_DATA_DIR")
    workers: int = Field(default=0, ge=0, validation_alias="LCMOPG_WORKERS")
    log_level: str = Field(default="INFO", validation_alias="LCMOPG_LOG_LEVEL")
    port: int = Field(default=8080, validation_alias="PORT")

    @property
    def worker_count(self) -> int:
        """0 means one worker per available core."""
        if self.workers > 0:
            return self.workers
        return os.cpu_count() or 1

    def get_output_root_resolved(self) -> Path:
        """Return absolute path; caller should create dir if missing."""
        return self.output_root.resolve()

    def get_data_dir_resolved(self) -> Path:
        return self.data_dir.resolve()


_settings: Settings | None = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next get_settings() re-reads the environment."""
    global _settings
    _settings = None
