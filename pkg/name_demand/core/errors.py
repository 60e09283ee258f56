"""
Errors - Exception hierarchy shared by every module
"""

from typing import Optional


class NameDemandError(Exception):
    """Base class for all errors raised by the package"""


class DataValidationError(NameDemandError, ValueError):
    """Dataset or domain type failed its invariants"""


class BoundaryShareError(DataValidationError):
    """A share vector touches 0 or 1 where an interior simplex is required"""


class NonFiniteUtilityError(NameDemandError, ArithmeticError):
    """A utility index evaluated to inf or nan"""


class ContractionError(NameDemandError):
    """Share inversion did not reach its tolerance within max_iter"""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class NumericalFailureError(NameDemandError):
    """A linear system could not be factorised"""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class MomentError(NameDemandError):
    """A requested moment cannot be computed from the supplied inputs"""


class RankDeficientError(NameDemandError):
    """Stacked regressors do not have full column rank"""


class EmptyRegionError(NameDemandError):
    """A bunching region holds no usable market subsample"""


class EmptySupportError(NameDemandError):
    """Support recovery selected no covariate"""


class ConfigError(NameDemandError):
    """Run configuration could not be read or validated"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" [{', '.join(where)}]" if where else ""
        super().__init__(f"{message}{suffix}")
        self.field = field
        self.line = line
