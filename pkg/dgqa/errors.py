"""
Exception hierarchy for dgqa.

Every failure raised on purpose by the library derives from DGQAError so the
CLI can report it with a stage tag and a nonzero exit code.
"""

from pathlib import Path
from typing import Iterable, Optional, Union


class DGQAError(Exception):
    """Base class for all dgqa errors"""

    stage: Optional[str] = None


class InputValidationError(DGQAError, ValueError):
    """Raised when an argument violates a documented precondition"""


class RegistryError(DGQAError, KeyError):
    """Raised when a distortion family id is not registered"""

    def __init__(self, family: int, available: Iterable[int] = ()):
        self.family = family
        self.available = sorted(available)
        super().__init__(family)

    def __str__(self) -> str:
        return f"Unknown distortion family #{self.family}; registered: {self.available}"


class UndefinedMetricError(DGQAError, ArithmeticError):
    """Raised when a correlation is undefined (constant input)"""


class ArtifactError(DGQAError, OSError):
    """Raised when a file cannot be read or written, or a run artifact is missing"""

    def __init__(self, message: str, paths: Union[Path, str, Iterable[Union[Path, str]], None] = None):
        if paths is None:
            self.paths = []
        elif isinstance(paths, (str, Path)):
            self.paths = [Path(paths)]
        else:
            self.paths = [Path(p) for p in paths]
        detail = ", ".join(str(p) for p in self.paths)
        super().__init__(f"{message}: {detail}" if detail else message)


class RunLockedError(ArtifactError):
    """Raised when another process already writes to a run directory"""


class StageError(DGQAError, RuntimeError):
    """
    Wraps a failure that happened inside an orchestrated stage.

    Args:
        stage: Name of the stage that failed (e.g. "train-domain")
        cause: The original exception
    """

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause}")
