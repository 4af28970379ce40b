import sys
from pathlib import Path
from typing import Optional

from loguru import logger


def configure_logging(level: str = "INFO", log_path: Optional[str] = None) -> None:
    """Replace loguru's default sink with a stderr sink and an optional file sink"""
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}",
    )
    if log_path:
        path = Path(log_path)
        path.mkdir(parents=True, exist_ok=True)
        logger.add(
            path / "privbcast.log",
            level=level.upper(),
            rotation="10 MB",
            retention=5,
        )
