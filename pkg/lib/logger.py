import logging
import sys
from typing import Optional


def setup_logger(level: Optional[str] = None) -> logging.Logger:
    """Configure and return the root logger with consistent formatting"""
    if level is None:
        from polylab.config import PolylabSettings

        level = PolylabSettings().LOG

    # Get root logger to capture all messages
    logger = logging.getLogger()
    logger.setLevel(level.upper())

    # Clear existing handlers to avoid duplicates
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stdout)
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    # Solver and plotting libraries are chatty at INFO
    for name in ("cvxpy", "matplotlib", "PIL"):
        logging.getLogger(name).setLevel(logging.WARNING)

    logger.propagate = True

    return logger


logger = logging.getLogger("polylab")
