import logging
from logging.handlers import RotatingFileHandler
import os
from typing import Optional

LOGGER_NAME = "speech_transformer"


def _file_handler(log_dir: str, formatter: logging.Formatter) -> RotatingFileHandler:
    os.makedirs(log_dir, exist_ok=True)
    fh = RotatingFileHandler(
        os.path.join(log_dir, f"{LOGGER_NAME}.log"),
        maxBytes=5*1024*1024,  # 5 MB
        backupCount=3
    )
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(formatter)
    return fh


def setup_logger(level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Set up and configure the application logger.

    Module-level calls pass no arguments and reuse whatever is configured; the CLI and
    the service pass the settings values, which replace the level and the log directory.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory receiving the rotating log file

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(LOGGER_NAME)

    # Prevent adding multiple handlers if this function is called multiple times
    if not logger.handlers:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        ch = logging.StreamHandler()
        ch.setFormatter(formatter)
        logger.addHandler(ch)
        logger.addHandler(_file_handler(log_dir or "logs", formatter))
        level = level or "INFO"
    elif log_dir is not None:
        target = os.path.abspath(os.path.join(log_dir, f"{LOGGER_NAME}.log"))
        for handler in list(logger.handlers):
            if isinstance(handler, RotatingFileHandler) and handler.baseFilename != target:
                logger.removeHandler(handler)
                handler.close()
                logger.addHandler(_file_handler(log_dir, handler.formatter))

    if level is not None:
        numeric = getattr(logging, level.upper(), logging.INFO)
        logger.setLevel(numeric)
        for handler in logger.handlers:
            if not isinstance(handler, RotatingFileHandler):
                handler.setLevel(numeric)

    return logger
