import logging
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Generic, Optional, TypeVar

from padic_polar.errors import InsufficientPrecision, PrecisionExhausted
from padic_polar.padic import PrimeContext

logger = logging.getLogger(__name__)

SUCCESS = 25
logging.addLevelName(SUCCESS, "SUCCESS")

T = TypeVar("T")


class StatusFormatter(logging.Formatter):
    """
    Log lines with status prefixes:
    [2024-03-20 10:00:00] ✅ message
    """

    PREFIXES = {
        logging.ERROR: "❌ ERROR",
        logging.CRITICAL: "❌ ERROR",
        logging.WARNING: "⚠️",
        SUCCESS: "✅",
    }

    def __init__(self, timestamps: bool = True):
        super().__init__()
        self.timestamps = timestamps

    def format(self, record: logging.LogRecord) -> str:
        prefix = self.PREFIXES.get(record.levelno, "ℹ️")
        line = f"{prefix} {record.getMessage()}"
        if self.timestamps:
            timestamp = datetime.fromtimestamp(record.created).strftime("%Y-%m-%d %H:%M:%S")
            line = f"[{timestamp}] {line}"
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


def configure_logging(level: str = "WARNING", history_dir: Optional[str] = None,
                      command: str = "run") -> logging.Logger:
    """
    Attach the status formatter to the package logger: stderr always, plus
    <history_dir>/<command>_process.log when a history directory is configured.
    """
    package_logger = logging.getLogger("padic_polar")
    package_logger.setLevel(getattr(logging, level.upper(), logging.WARNING))
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()
    stream = logging.StreamHandler()
    stream.setFormatter(StatusFormatter())
    package_logger.addHandler(stream)
    if history_dir:
        os.makedirs(history_dir, exist_ok=True)
        log_file = os.path.join(history_dir, f"{command}_process.log")
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(StatusFormatter())
        package_logger.addHandler(file_handler)
    package_logger.propagate = False
    return package_logger


@dataclass(frozen=True)
class PrecisionRun(Generic[T]):
    result: T
    requested_precision: int
    precision: int
    retries: int


def execute_with_precision(step: Callable[[PrimeContext], T], ctx: PrimeContext,
                           description: str = "computation") -> PrecisionRun[T]:
    """
    Run step(ctx) at the default precision, doubling on InsufficientPrecision until
    max_precision. The step must rebuild its inputs from ctx, since scalars
    produced at a lower precision cannot be refined.
    """
    retries = 0
    last_error = None
    for precision in ctx.precision_ladder():
        logger.info("=" * 80)
        logger.info("%s | p=%d | precision %d", description, ctx.p, precision)
        logger.info("=" * 80)
        try:
            result = step(ctx.with_precision(precision))
        except PrecisionExhausted:
            raise
        except InsufficientPrecision as e:
            last_error = e
            retries += 1
            logger.warning("%s lost precision at %d digits: %s", description, precision, e)
            continue
        logger.log(SUCCESS, "%s completed at precision %d after %d retries",
                   description, precision, retries)
        return PrecisionRun(result, ctx.default_precision, precision, retries)
    logger.error("%s exhausted the precision cap %d", description, ctx.max_precision)
    raise PrecisionExhausted(
        f"{description} still lost precision at the cap {ctx.max_precision}: {last_error}")
