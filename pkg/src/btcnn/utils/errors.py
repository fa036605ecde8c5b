"""Exception hierarchy shared by every btcnn package."""
from pathlib import Path
from typing import Optional, Sequence


class BTCNNError(Exception):
    """Base class for all btcnn errors."""


class DimensionError(BTCNNError, ValueError):
    """Raised when tensor shapes do not conform."""

    def __init__(self, message: str, *shapes: Sequence[int]) -> None:
        """
        Build the message from a description and the offending shapes.

        Args:
            message: What was being checked
            shapes: The shapes involved, named in the message
        """
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class ValidationError(BTCNNError, ValueError):
    """Raised for argument values outside their valid range."""


class StateError(BTCNNError, RuntimeError):
    """Raised when operations are called in an invalid order."""


class ParseError(BTCNNError, ValueError):
    """Raised for malformed dataset text or cache files."""

    def __init__(
        self,
        message: str,
        path: Optional[Path] = None,
        line_number: Optional[int] = None
    ) -> None:
        """
        Attach the file location to the message.

        Args:
            message: Description of the problem
            path: File being parsed
            line_number: 1-based line number, when known
        """
        where = ""
        if path is not None:
            where = f"{path}"
            if line_number is not None:
                where += f":{line_number}"
            where += ": "
        super().__init__(f"{where}{message}")
        self.path = path
        self.line_number = line_number


class StageError(BTCNNError):
    """Raised by the command line when a named stage fails."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        """
        Wrap the underlying failure.

        Args:
            stage: Name of the failing stage
            cause: The original exception
        """
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
