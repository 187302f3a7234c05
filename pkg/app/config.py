from __future__ import annotations

import json
import os
from datetime import datetime
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

try:
    from dotenv import load_dotenv  # type: ignore
except Exception:
    load_dotenv = None  # type: ignore

ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = ROOT / "config"

OPERATIONS = (
    "GetCapabilities",
    "DescribeSensor",
    "DescribeTasking",
    "GetFeasibility",
    "Submit",
    "Reserve",
    "Confirm",
    "Update",
    "Cancel",
    "GetStatus",
    "GetTask",
    "DescribeResultAccess",
)


def _load_env() -> None:
    if load_dotenv:
        load_dotenv(dotenv_path=ROOT / ".env", override=False)
        load_dotenv(dotenv_path=ROOT / ".env.local", override=True)


# Load at import time
_load_env()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="SPS_", extra="forbid")

    host: str = "127.0.0.1"
    port: int = 8484
    assets_file: Path = CONFIG_DIR / "assets.json"
    procedures_dir: Path = CONFIG_DIR / "procedures"
    sensors_dir: Path = CONFIG_DIR / "sensors"
    reservation_lifetime_s: int = Field(300, gt=0)
    request_lifetime_s: int = Field(600, gt=0)
    seed: int = 42
    clock: Literal["virtual", "system"] = "virtual"
    clock_start: datetime = datetime.fromisoformat("2010-08-20T10:00:00+00:00")
    debug_clock: bool = False
    queue_limit: int = Field(1024, gt=0)
    max_alternatives: int = Field(3, ge=0)
    inference: bool = True
    listeners: List[str] = Field(default_factory=lambda: list(OPERATIONS))
    service_title: str = "Sensor Planning Service"
    service_provider: str = "SPS desk deployment"
    log_level: str = "INFO"

    @field_validator("listeners")
    @classmethod
    def _known_operations(cls, v: List[str]) -> List[str]:
        unknown = sorted(set(v) - set(OPERATIONS))
        if unknown:
            raise ValueError(f"unknown operations: {unknown}")
        return v

    @field_validator("clock_start")
    @classmethod
    def _aware(cls, v: datetime) -> datetime:
        if v.tzinfo is None:
            raise ValueError("clock_start needs a UTC offset")
        return v


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p).resolve()


def load_settings(config_path: Optional[str | os.PathLike] = None) -> Settings:
    """Settings from `config_path`, else $SPS_CONFIG, else defaults.

    File values win over SPS_* environment variables, which win over defaults.
    """
    path = config_path or os.getenv("SPS_CONFIG")
    if not path:
        return Settings()
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    base = path.resolve().parent
    for key in ("assets_file", "procedures_dir", "sensors_dir"):
        if key in data:
            data[key] = _resolve(base, data[key])
    return Settings(**data)


def get_settings() -> Settings:
    return load_settings()
