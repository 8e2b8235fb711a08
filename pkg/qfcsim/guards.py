import functools
import logging
import traceback

from .errors import AnalysisError, CalibrationError, ConfigError, DomainError, EventFormatError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ANALYSIS = 3
EXIT_IO = 4


def exit_code_for(error):
    """Map an exception to the process exit code."""
    if isinstance(error, (ConfigError, CalibrationError, DomainError)):
        return EXIT_CONFIG
    if isinstance(error, AnalysisError):
        return EXIT_ANALYSIS
    if isinstance(error, (EventFormatError, OSError)):
        return EXIT_IO
    return EXIT_FAILURE


def exit_on_error(command_name=None):
    """Decorator for CLI commands: log failures and return an exit code instead of raising.

    The wrapped command returns None (success) or an explicit exit code.
    """
    def decorator(fn):
        name = command_name or fn.__name__

        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except Exception as e:
                code = exit_code_for(e)
                logger.error(f"{name} failed ({type(e).__name__}): {e}")
                diagnostic = getattr(e, "diagnostic", None)
                if diagnostic:
                    logger.error(f"{name} diagnostic: {diagnostic}")
                logger.debug(traceback.format_exc())
                return code
            return EXIT_OK if result is None else result
        return wrapper
    return decorator
