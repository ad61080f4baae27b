"""
Error types shared across ClockGuard modules.

Every error carries the process exit code the CLI maps it to.
"""
from typing import Optional


class ClockGuardError(Exception):
    """Base class for all ClockGuard errors."""
    
    exit_code: int = 1


class InvalidArgumentError(ClockGuardError, ValueError):
    """An argument or dataclass invariant was violated."""
    
    exit_code = 2


class ConfigError(InvalidArgumentError):
    """A scenario or calibration file could not be interpreted."""


class TraceParseError(ClockGuardError, ValueError):
    """A CSV trace or measurement log is malformed."""
    
    exit_code = 2
    
    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[str] = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class InvalidDataError(ClockGuardError, ValueError):
    """Input data is well-formed but inconsistent."""
    
    exit_code = 2
    
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


class NumericalError(ClockGuardError, ArithmeticError):
    """A filter computation became singular or lost positive semi-definiteness."""
    
    exit_code = 4
    
    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)


class InternalError(ClockGuardError, RuntimeError):
    """A factorization failed in a way that indicates a bug."""
    
    exit_code = 4
