"""
Logging setup driven by the `logging` block of the pipeline config
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

from utils.config import LoggingConfig

_configured = False


def setup_logging(config: Optional[LoggingConfig] = None, verbose: bool = False) -> logging.Logger:
    """Configure root logging once: console plus optional rotating file"""
    global _configured
    config = config or LoggingConfig()
    root = logging.getLogger()

    level = logging.DEBUG if verbose else getattr(logging, config.level.upper(), logging.INFO)
    root.setLevel(level)

    if _configured:
        return root

    formatter = logging.Formatter(config.format)

    console = logging.StreamHandler()
    console.setFormatter(formatter)
    root.addHandler(console)

    if config.file:
        os.makedirs(os.path.dirname(config.file) or ".", exist_ok=True)
        file_handler = RotatingFileHandler(
            config.file,
            maxBytes=config.max_size_mb * 1024 * 1024,
            backupCount=config.backup_count,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    _configured = True
    return root
