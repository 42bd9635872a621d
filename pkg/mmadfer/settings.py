"""
Process-level settings read from the environment (and an optional .env file
next to this package).
"""
import logging
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

ENV_PATH = Path(__file__).parent / ".env"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Settings(BaseSettings):
    """Environment overrides, all prefixed with ``MMA_``"""

    model_config = SettingsConfigDict(env_prefix="MMA_", extra="ignore")

    output_root: Path = Field(default=Path("runs"))
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    progress: bool = False


def get_settings() -> Settings:
    """Load the .env file (if present) and read settings from the environment"""
    load_dotenv(ENV_PATH)
    return Settings()


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once for the CLI process"""
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT)
