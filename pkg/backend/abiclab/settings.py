import logging
import os

from dotenv import load_dotenv

# --- Basic Setup ---
load_dotenv()

LOG_LEVEL = os.getenv("ABICLAB_LOG_LEVEL", "INFO").upper()
DEBUG = os.getenv("ABICLAB_DEBUG", "0").strip().lower() in ("1", "true", "yes")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def effective_log_level() -> int:
    if DEBUG:
        return logging.DEBUG
    level = logging.getLevelName(LOG_LEVEL)
    return level if isinstance(level, int) else logging.INFO


def configure_logging() -> None:
    """Install the root handler once; library modules only create loggers."""
    logging.basicConfig(level=effective_log_level(), format=LOG_FORMAT)


def describe_environment() -> dict:
    """Runtime knobs that shape diagnostics only, never results."""
    return {
        "ABICLAB_LOG_LEVEL": LOG_LEVEL,
        "ABICLAB_DEBUG": DEBUG,
    }
