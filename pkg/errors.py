"""Exception hierarchy shared by every workbench module."""

from typing import Optional


class SimcateError(Exception):
    """Base class for all workbench failures"""


class ArgumentError(SimcateError, ValueError):
    """Bad sizes, mismatched dimensions or otherwise invalid arguments"""


class ConstructionError(SimcateError):
    """A data-generating process could not be built within the resample budget"""


class RegenerationError(SimcateError):
    """Sampling produced an empty treatment arm; draw again with a new seed"""


class NumericalError(SimcateError, ArithmeticError):
    """Rank deficiency, failed factorization or a degenerate value"""


class TrainingError(NumericalError):
    """Optimization diverged"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class UnsupportedError(SimcateError):
    """The requested operation has no definition for this model or DGP kind"""


class ConfigError(SimcateError):
    """A sweep configuration failed to parse or validate"""


class ParseError(SimcateError):
    """A CSV file is ragged or contains non-numeric cells"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        where = ", ".join(p for p in (f"row {row}" if row is not None else "", f"column {column}" if column else "") if p)
        super().__init__(f"{message} ({where})" if where else message)
        self.row = row
        self.column = column
