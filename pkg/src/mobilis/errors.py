"""Exception types shared across the package."""

from __future__ import annotations


class MobilisError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MobilisError):
    """Invalid configuration: bad flags, windows, bin edges or cohort specs."""


class DataError(MobilisError):
    """Input data cannot be processed as requested."""


class NoDataError(DataError):
    """An operation that needs samples received none."""


class DegenerateDataError(DataError):
    """Samples carry no information for the requested fit."""


class BadSupportError(ConfigError):
    """Model support on which the density cannot be normalized."""


class OutOfSupportError(MobilisError):
    """Evaluation point outside the model support."""


class ParseError(DataError):
    """One malformed input line; carries a reason code and the line number."""

    def __init__(self, code: str, line_no: int | None = None, detail: str = ""):
        self.code = code
        self.line_no = line_no
        self.detail = detail
        where = f" at line {line_no}" if line_no is not None else ""
        suffix = f": {detail}" if detail else ""
        super().__init__(f"{code}{where}{suffix}")
