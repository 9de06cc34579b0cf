"""
Exception hierarchy shared by every dialogkit module
"""
from typing import List, Optional


class DialogKitError(Exception):
    """Base class for all dialogkit errors"""


class ValidationError(DialogKitError, ValueError):
    """A value violates a documented invariant"""


class ParseError(DialogKitError, ValueError):
    """Malformed input, located by 1-based line number"""

    def __init__(self, message: str, line_number: int, source: Optional[str] = None):
        self.line_number = line_number
        self.source = source
        where = f"{source}:{line_number}" if source else f"line {line_number}"
        super().__init__(f"{where}: {message}")


class EncodingError(ValidationError):
    """Speaker set or class index outside the powerset domain"""


class ShapeError(ValidationError):
    """Matrix dimensions do not match the expected layout"""


class TextEncodingError(ValidationError):
    """Text is not valid UTF-8"""


class ConfigError(DialogKitError):
    """Bad configuration file or value"""


class MissingInputError(DialogKitError):
    """Required pipeline inputs are absent"""

    def __init__(self, missing: List[str]):
        self.missing = list(missing)
        super().__init__("Missing inputs: " + "; ".join(self.missing))
