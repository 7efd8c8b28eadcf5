import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """
    Install one stream handler on the root logger.

    Args:
        level (Optional[str]): Level name; falls back to FUSION_UNET_LOG_LEVEL, then INFO

    Raises:
        ValueError: If the level name is not a logging level
    """
    name = (level or os.getenv('FUSION_UNET_LOG_LEVEL', 'INFO')).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level: {name}")

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(numeric)


def progress_enabled() -> bool:
    """Progress bars are on unless FUSION_UNET_PROGRESS is 0/false/off."""
    return os.getenv('FUSION_UNET_PROGRESS', '1').strip().lower() not in ('0', 'false', 'off')
