"""
Error hierarchy shared by every package.

The CLI maps these onto exit statuses; library code raises them with enough
context (op name, shapes, batch id) to diagnose the failure from the log.
"""
from typing import Any, Dict, Optional


class VINetError(Exception):
    """Base class for all library errors"""


class InvalidArgumentError(VINetError, ValueError):
    """An argument violates an operation's precondition"""


class DegenerateInputError(VINetError, ValueError):
    """Input has no well-defined result (zero vector, parallel 6D pair)"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericError(VINetError, ArithmeticError):
    """NaN or Inf produced by a forward pass or a loss"""

    def __init__(self, message: str, op: Optional[str] = None, batch_id: Optional[int] = None):
        super().__init__(message)
        self.op = op
        self.batch_id = batch_id


class InvalidFormatError(VINetError):
    """A file or config does not match its declared format"""


class ConfigError(InvalidFormatError):
    """Configuration file failed validation"""
