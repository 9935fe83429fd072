"""
Exception types raised by the MAP testing library.

Everything derives from MapTestError (itself a ValueError) so callers can catch
the whole family in one place, the way the CLI does in main().
"""
from typing import Optional


class MapTestError(ValueError):
    """Base class for all library errors"""


class DimensionMismatchError(MapTestError):
    """Grid function length does not match the operator or grid"""

    def __init__(self, expected: int, actual: int, what: str = "grid function"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch for {what}: expected N={expected}, got N={actual}")


class NullModeDivisionError(MapTestError):
    """Negative operator power applied to a function with mass on a null mode"""

    def __init__(self, mass: float, norm: float):
        self.mass = mass
        super().__init__(
            f"null-mode division: {mass:.3e} of coefficient mass on modes with tau_k = 0 "
            f"(function norm {norm:.3e})"
        )


class EmptySpectrumError(MapTestError):
    """No singular value survives the pseudo-inverse cutoff"""


class InfiniteQuantileError(MapTestError):
    """Standard normal quantile requested at p = 0 or p = 1"""


class ZeroProbeError(MapTestError):
    """Probe element is identically zero"""


class IdentifiabilityError(MapTestError):
    """Prior mean cannot be calibrated from the canonical direction"""


class BoundInapplicableError(MapTestError):
    """Power bound used outside its admissible exponent range"""


class GammaSearchError(MapTestError):
    """Prior scale search hit a non-finite objective"""

    def __init__(self, message: str, gamma: Optional[float] = None):
        self.gamma = gamma
        if gamma is not None:
            message = f"{message} (gamma={gamma!r})"
        super().__init__(message)


class DetectabilityError(MapTestError):
    """Minimization of J did not reach a negative value"""


class SimulationError(MapTestError):
    """Too many failed samples at one noise level"""


class ConfigError(MapTestError):
    """Invalid configuration value; names the field"""

    def __init__(self, field: str, message: str, line: Optional[int] = None):
        self.field = field
        self.line = line
        self.detail = message
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}{where}: {message}")
