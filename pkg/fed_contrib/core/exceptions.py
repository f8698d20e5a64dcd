"""Exception hierarchy for the federated contribution simulator"""

from typing import Optional


class FedContribError(Exception):
    """Base class for all simulator errors"""


class ShapeError(FedContribError, ValueError):
    """Dimension or parameter-layout mismatch"""


class InputError(FedContribError, ValueError):
    """Invalid data value, optionally anchored to a data row"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConfigError(FedContribError, ValueError):
    """Invalid experiment configuration, optionally anchored to a config line"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.reason = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StateError(FedContribError, RuntimeError):
    """Illegal transition of server-side state"""
