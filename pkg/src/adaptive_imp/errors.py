"""Exception hierarchy shared by every module of the package."""


class AdaptiveImpError(Exception):
    """Base class for all package errors."""


class IntegrationDiverged(AdaptiveImpError):
    """Raised when an integration stage produces a non-finite value."""

    def __init__(self, t, message=None):
        self.t = float(t)
        super().__init__(message or f"non-finite state or derivative at t = {self.t:.6g} s")


class NotHurwitz(AdaptiveImpError):
    """Raised when a matrix required to be Hurwitz has a spectrum touching the right half plane."""

    def __init__(self, margin, eigenvalue=None, message=None):
        self.margin = float(margin)
        self.eigenvalue = eigenvalue
        super().__init__(message or f"matrix is not Hurwitz (max real part {self.margin:.6g})")


class SolveFailed(AdaptiveImpError):
    pass


class NoConvergence(AdaptiveImpError):
    pass


class TooFewSamples(AdaptiveImpError):
    pass


class InvalidParams(AdaptiveImpError, ValueError):
    pass


class WindowTooShort(AdaptiveImpError):
    pass


class ZeroInput(AdaptiveImpError):
    pass


class NoFeasiblePoint(AdaptiveImpError):
    pass


class ConfigError(AdaptiveImpError, ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class DataFormatError(AdaptiveImpError, ValueError):
    """Malformed data file; ``line`` is 1-based."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
