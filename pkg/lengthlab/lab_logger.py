import logging
from pathlib import Path
from typing import Optional, Union

# This is the default logger
# A custom logger or any other logging logger can be used
# and lengthlab will use that logger instead.

LOG_FORMAT = "%(asctime)s : %(levelname)s : %(message)s"
LOG_FILE = "lengthlab.log"


def create_logger(logger_name: str = "lengthlab_logger",
                  logger_level: int = logging.INFO,
                  log_folder: Optional[Union[str, Path]] = None
                  ) -> logging.Logger:
    """
    Create a logger that writes the lab messages to a file.

    Args:
        logger_name (str): Name of the logger, defaults to "lengthlab_logger".
        logger_level (int): Logging level, defaults to logging.INFO.
        log_folder (str | Path): Folder for ``lengthlab.log``. Defaults to the
                                 ``logs`` folder next to the package.

    Returns:
        logging.Logger: The configured logger.
    """
    logger = logging.getLogger(logger_name)
    logger.setLevel(logger_level)
    formatter = logging.Formatter(LOG_FORMAT)
    # resolve the path to the log file
    if log_folder is None:
        log_folder = Path(__file__).parent.absolute() / "../logs/"
    log_folder = Path(log_folder).resolve()
    log_folder.mkdir(parents=True, exist_ok=True)
    logpath = log_folder / LOG_FILE

    # one handler per file
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and \
                Path(handler.baseFilename) == logpath:
            handler.setLevel(logger_level)
            return logger

    file_handler = logging.FileHandler(logpath)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)
    logger.info("Logger created")
    return logger


def close_logger(logger_name: str = "lengthlab_logger") -> None:
    """Detach and close every file handler of the logger."""
    logger = logging.getLogger(logger_name)
    for handler in list(logger.handlers):
        if isinstance(handler, logging.FileHandler):
            logger.removeHandler(handler)
            handler.close()
