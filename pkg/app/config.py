from __future__ import annotations

from pydantic import ValidationInfo, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    workers: int = 1
    max_level: int = 26
    dense_level_cap: int = 20
    block_elements: int = 2**22
    block_paths_max: int = 4096
    stream_chunk_steps: int = 2**16
    log_level: str = "INFO"

    model_config = SettingsConfigDict(env_prefix="NONSTICKY_", env_file=".env", extra="allow")

    @field_validator("workers", "block_elements", "block_paths_max", "stream_chunk_steps")
    @classmethod
    def validate_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("dense_level_cap")
    @classmethod
    def validate_dense_cap(cls, value: int, info: ValidationInfo) -> int:
        max_level = info.data.get("max_level", 26)
        if value < 0 or value > max_level:
            raise ValueError("NONSTICKY_DENSE_LEVEL_CAP must lie in [0, NONSTICKY_MAX_LEVEL]")
        return value

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, value: str) -> str:
        normalized = value.strip().upper()
        if normalized not in {"DEBUG", "INFO", "WARNING", "ERROR"}:
            raise ValueError("NONSTICKY_LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR")
        return normalized


settings = Settings()
