"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code, so new errors should subclass
one of the three families below rather than ``HicospecError`` directly.
"""

from __future__ import annotations


class HicospecError(Exception):
    exit_code = 1


class ConfigError(HicospecError, ValueError):
    """Invalid model, shape or experiment parameters."""

    exit_code = 2


class NumericalError(HicospecError, RuntimeError):
    """A solver failed to converge or a numerical contract was violated."""

    exit_code = 3


class PreconditionError(HicospecError, ValueError):
    """Inputs are valid on their own but violate an operation's precondition."""

    exit_code = 4


class PoleError(PreconditionError):
    """Spectral parameter too close to an eigenvalue of an inclusion."""

    def __init__(self, lam: float, eigenvalue: float, guard: float):
        self.lam = float(lam)
        self.eigenvalue = float(eigenvalue)
        self.guard = float(guard)
        super().__init__(
            f"lambda={lam:.10g} lies within {guard:.3g} of the inclusion "
            f"eigenvalue {eigenvalue:.10g}"
        )


class UnderResolvedError(PreconditionError):
    def __init__(self, message: str, required_h: float):
        self.required_h = float(required_h)
        super().__init__(f"{message} (need h <= {required_h:.6g})")


class GeometryError(PreconditionError):
    """Geometry unusable for the requested computation (e.g. disconnected matrix)."""
