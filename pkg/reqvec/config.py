"""
Configuration management using pydantic-settings.

- Loads from environment variables.
- Also loads from a `.env` file in the current working directory.
"""

from pathlib import Path
from typing import Literal, Tuple

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, EnvSettingsSource


class LenientEnvSettingsSource(EnvSettingsSource):
    """Env source that falls back to raw strings for complex values."""

    def decode_complex_value(self, field_name, field, value):  # type: ignore[override]
        try:
            return super().decode_complex_value(field_name, field, value)
        except ValueError:
            return value


class Settings(BaseSettings):
    # Artifacts
    artifact_dir: Path = Field(
        default=Path("artifacts"),
        alias="REQVEC_ARTIFACT_DIR",
        description="Directory holding corpora, vocab, weights, embeddings and reports",
    )
    seed: int = Field(
        default=0,
        alias="REQVEC_SEED",
        description="Global seed used when a command is not given --seed",
    )
    log_level: str = Field(default="INFO", alias="REQVEC_LOG_LEVEL")

    # Stage defaults
    vocab_size: int = Field(
        default=5000,
        alias="REQVEC_VOCAB_SIZE",
        description="Target BBPE vocabulary size (bytes + specials + merges)",
    )
    pooling: Literal["mean_tokens", "first_token"] = Field(
        default="mean_tokens",
        alias="REQVEC_POOLING",
        description="Token pooling within a line (mean_tokens|first_token)",
    )
    workers: int = Field(
        default=1,
        alias="REQVEC_WORKERS",
        description="Thread count for per-document embedding work",
    )

    # ids2018 normalization: Host values are redrawn from this pool.
    # Example: "10.0.0.5,intranet.local,shop.example". Empty disables the redraw.
    ids2018_host_pool: Tuple[str, ...] = Field(
        default=(),
        alias="REQVEC_IDS2018_HOST_POOL",
        description="Comma-separated host values seen in normal traffic.",
    )

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        return (
            init_settings,
            LenientEnvSettingsSource(settings_cls),
            dotenv_settings,
            file_secret_settings,
        )

    @staticmethod
    def _parse_list_field(value, *, default):
        if value is None:
            return default
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            return tuple(items) if items else default
        if isinstance(value, (list, tuple, set)):
            items = [str(item).strip() for item in value if str(item).strip()]
            return tuple(items) if items else default
        return value

    @field_validator("ids2018_host_pool", mode="before")
    @classmethod
    def _parse_host_pool(cls, value):
        return cls._parse_list_field(value, default=())

    @field_validator("vocab_size")
    @classmethod
    def _check_vocab_size(cls, value: int) -> int:
        if value <= 260:
            raise ValueError("vocab_size must exceed 256 bytes + 4 special tokens")
        return value

    @field_validator("workers")
    @classmethod
    def _check_workers(cls, value: int) -> int:
        return max(1, value)


settings = Settings()
"""
Singleton settings object used across modules.

Usage:
    from . import config
    config.settings.artifact_dir
    config.settings.seed
"""
