"""Shared exception types.

The command line maps these onto exit codes: usage problems exit 1, bad or
inconsistent input (either class below) exits 2, anything else exits 3.
"""

from __future__ import annotations


class InputFormatError(ValueError):
    """A data file failed validation; carries file path and line number."""

    def __init__(self, path: str, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigurationError(ValueError):
    """A requested operation is inconsistent with the supplied data."""
