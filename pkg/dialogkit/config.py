"""
Configuration management for dialogkit
"""
import os
import logging
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

import structlog
from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Config:
    """Process-level defaults read from the environment (and an optional .env file)"""

    def __init__(self):
        self.load_env_file()

    def load_env_file(self):
        """Load environment variables from .env file if it exists"""
        env_file = Path('.env')
        if env_file.exists():
            load_dotenv(env_file, override=False)

    @property
    def data_dir(self) -> Path:
        return Path(os.getenv("DIALOGKIT_DATA_DIR", "data"))

    @property
    def output_dir(self) -> Path:
        return Path(os.getenv("DIALOGKIT_OUTPUT_DIR", "output"))

    @property
    def log_level(self) -> str:
        return os.getenv("DIALOGKIT_LOG_LEVEL", "INFO")

    @property
    def log_file(self) -> Optional[str]:
        return os.getenv("DIALOGKIT_LOG_FILE") or None

    @property
    def log_format(self) -> str:
        return os.getenv("DIALOGKIT_LOG_FORMAT", "console")

    def setup_logging(self, level: Optional[str] = None):
        """Setup logging configuration"""
        level_name = (level or self.log_level).upper()
        if not hasattr(logging, level_name):
            raise ConfigError(f"Unknown log level: {level_name}")

        handlers = [logging.StreamHandler()]
        if self.log_file:
            handlers.append(logging.FileHandler(self.log_file, encoding='utf-8'))

        logging.basicConfig(
            level=getattr(logging, level_name),
            format='%(message)s',
            handlers=handlers,
            force=True,
        )

        renderer = (
            structlog.processors.JSONRenderer(sort_keys=True)
            if self.log_format == "json"
            else structlog.dev.ConsoleRenderer(colors=False)
        )
        structlog.configure(
            processors=[
                structlog.stdlib.filter_by_level,
                structlog.stdlib.add_logger_name,
                structlog.stdlib.add_log_level,
                structlog.processors.TimeStamper(fmt="iso"),
                structlog.processors.format_exc_info,
                renderer,
            ],
            logger_factory=structlog.stdlib.LoggerFactory(),
            wrapper_class=structlog.stdlib.BoundLogger,
            cache_logger_on_first_use=True,
        )
        return structlog.get_logger(__name__)


class Settings:
    """Typed view over a KEY=value config file"""

    def __init__(self, values: Mapping[str, Optional[str]], source: str = "<settings>"):
        self.values: Dict[str, str] = {
            key.strip().upper(): (value or "").strip() for key, value in values.items()
        }
        self.source = source

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Settings":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        return cls(dotenv_values(path, encoding='utf-8'), source=str(path))

    @classmethod
    def empty(cls) -> "Settings":
        return cls({})

    def __contains__(self, key: str) -> bool:
        return key.upper() in self.values

    def check_keys(self, allowed: Iterable[str]):
        """Reject keys that no consumer understands"""
        unknown = sorted(set(self.values) - {key.upper() for key in allowed})
        if unknown:
            raise ConfigError(f"{self.source}: unknown keys {', '.join(unknown)}")

    def get_str(self, key: str, default: Optional[str] = None) -> Optional[str]:
        value = self.values.get(key.upper())
        return default if value in (None, "") else value

    def get_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        value = self.get_str(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be an integer, got {value!r}")

    def get_float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        value = self.get_str(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be a number, got {value!r}")

    def get_bool(self, key: str, default: Optional[bool] = None) -> Optional[bool]:
        value = self.get_str(key)
        if value is None:
            return default
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{self.source}: {key} must be a boolean, got {value!r}")

    def get_path(self, key: str, default: Optional[Path] = None) -> Optional[Path]:
        value = self.get_str(key)
        return default if value is None else Path(value)


# Global config instance
config = Config()
