import logging
import sys
import traceback
from typing import Optional


# --- Exception hierarchy ---

class LoopClosureError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class ConfigError(LoopClosureError):
    pass


class InputError(LoopClosureError, ValueError):
    """A value violates a documented precondition (dt <= 0, negative beta, ...)."""


class CovarianceError(LoopClosureError):
    def __init__(self, message: str, eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class SingularInnovationError(LoopClosureError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


class FilterError(LoopClosureError):
    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame
        self.cause = cause


class ImageError(LoopClosureError):
    def __init__(self, message: str, frame: Optional[int] = None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class DescriptorError(LoopClosureError):
    pass


class MissingDescriptorError(DescriptorError):
    def __init__(self, frame: int):
        super().__init__(f"no descriptor available for frame {frame}")
        self.frame = frame


class DatasetError(LoopClosureError):
    pass


class StageError(LoopClosureError):
    def __init__(self, stage: str, cause: Exception):
        frame = getattr(cause, "frame", None)
        where = f"{stage}" if frame is None else f"{stage} (frame {frame})"
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.frame = frame
        self.cause = cause


# --- Process-level hook ---

def setup_error_handling():
    def exception_hook(exctype, value, tb):
        error_msg = "".join(traceback.format_exception(exctype, value, tb))
        logging.error(f"Uncaught exception:\n{error_msg}")

        log_file = "check logs"
        try:
            from app.paths import get_log_file
            log_file = get_log_file()
        except Exception:
            pass

        print(f"Error: {value}\nLog file: {log_file}", file=sys.stderr)
        sys.exit(1)

    sys.excepthook = exception_hook
