import logging
import sys
from sys import stderr
from types import FrameType
from typing import Optional

from colorama import Fore, Style, just_fix_windows_console
from loguru import logger as logger

from persona_bench.config import settings


# recipe from https://loguru.readthedocs.io/en/stable/overview.html#entirely-compatible-with-standard-logging
class InterceptHandler(logging.Handler):
    def emit(self, record: logging.LogRecord) -> None:
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # walk out of the logging module so loguru reports the real caller
        frame: Optional[FrameType] = sys._getframe(6)
        depth = 6
        while frame and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(
            level,
            record.getMessage(),
        )


def colored(text: str, ok: bool) -> str:
    """Wrap a status word in green (ok) or red (not ok) for terminal logs."""
    fore_color = Fore.GREEN if ok else Fore.RED
    return f"{fore_color}{text}{Style.RESET_ALL}"


def set_logger(
    stderr_log_level: str = settings.stderr_log_level,
    log_file_path: str = settings.log_file_path,
) -> None:
    just_fix_windows_console()
    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    # urllib3 retries are reported by the backend itself
    logging.getLogger("urllib3").setLevel(logging.WARNING)
    logger.remove()
    logger.add(stderr, level=stderr_log_level)
    if log_file_path:
        logger.add(log_file_path, level="DEBUG", enqueue=True)


set_logger()
