from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path


def _env(name: str, default: str) -> str:
    return os.getenv(name, default)


@dataclass(frozen=True)
class Settings:
    artifact_root: Path = field(default_factory=lambda: Path(_env("CELSA_ARTIFACT_ROOT", "artifacts")))
    database_url: str = field(default_factory=lambda: _env("CELSA_DATABASE_URL", "sqlite:///celsa.db"))
    log_level: str = field(default_factory=lambda: _env("CELSA_LOG_LEVEL", "INFO"))
    llm_base_url: str = field(default_factory=lambda: _env("CELSA_LLM_BASE_URL", "https://api.openai.com/v1"))
    llm_model: str = field(default_factory=lambda: _env("CELSA_LLM_MODEL", "gpt-4.1-nano"))
    embedding_model: str = field(
        default_factory=lambda: _env("CELSA_EMBEDDING_MODEL", "text-embedding-3-small")
    )
    llm_api_key_env: str = field(default_factory=lambda: _env("CELSA_LLM_API_KEY_ENV", "OPENAI_API_KEY"))
    random_seed: int = field(default_factory=lambda: int(_env("CELSA_RANDOM_SEED", "7")))


def get_settings() -> Settings:
    return Settings()


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | int | None = None) -> None:
    level = level or get_settings().log_level
    root = logging.getLogger("compressed_elsa")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level if isinstance(level, int) else level.upper())
