import os
from dataclasses import dataclass
from typing import Optional

from padic_polar.errors import ConfigError

MIN_PRECISION = 8
MAX_PRECISION = 1024


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


@dataclass(frozen=True)
class Settings:
    """
    Environment-driven defaults. Every value can be overridden by a CLI flag.
    See docs/environment_setup.md for the variables.
    """
    precision: int = 64
    max_precision: int = MAX_PRECISION
    kah_tolerance: int = 12
    jobs: int = 1
    log_level: str = "WARNING"
    history_dir: Optional[str] = None

    @classmethod
    def from_env(cls) -> "Settings":
        settings = cls(
            precision=_int_env('PADIC_PRECISION', 64),
            max_precision=_int_env('PADIC_MAX_PRECISION', MAX_PRECISION),
            kah_tolerance=_int_env('PADIC_KAH_TOLERANCE', 12),
            jobs=_int_env('PADIC_JOBS', 1),
            log_level=(os.getenv('PADIC_LOG_LEVEL') or 'WARNING').upper(),
            history_dir=os.getenv('PADIC_HISTORY_DIR') or None,
        )
        settings.validate()
        return settings

    def validate(self):
        if not MIN_PRECISION <= self.precision <= MAX_PRECISION:
            raise ConfigError(f"precision must lie in [{MIN_PRECISION}, {MAX_PRECISION}], got {self.precision}")
        if not self.precision <= self.max_precision <= MAX_PRECISION:
            raise ConfigError(f"max precision must lie in [{self.precision}, {MAX_PRECISION}]")
        if self.kah_tolerance < 0:
            raise ConfigError("PADIC_KAH_TOLERANCE must be non-negative")
        if self.jobs < 1:
            raise ConfigError("PADIC_JOBS must be at least 1")
