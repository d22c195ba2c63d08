"""
Domain exceptions for the Becker–Döring laboratory.

Precondition violations on plain arguments raise ``ValueError`` directly;
the classes below cover failures that carry numerical context.
"""
from typing import Optional


class BDLabError(Exception):
    """Base class for all errors raised by bdlab."""


class ConvergenceError(BDLabError, RuntimeError):
    """A series, root search or limit could not be certified."""


class StepSizeUnderflowError(BDLabError, RuntimeError):
    """
    Adaptive time stepping shrank the step below ``dt_min``.

    Attributes:
        t: Time at which the step failed
        dt: Last attempted step size
        reason: Rejection reason of the last attempt
    """

    def __init__(self, t: float, dt: float, reason: str = "error"):
        self.t = t
        self.dt = dt
        self.reason = reason
        super().__init__(
            f"Step size underflow at t={t:.6g}: dt={dt:.3g} (last rejection: {reason})"
        )


class MaskedGradientError(BDLabError, ValueError):
    """A masked energy-gradient entry was read against a nonzero Onsager weight."""


class DetailedBalanceError(BDLabError, ValueError):
    """Rates violate detailed balance against the supplied reference state."""


class NetworkFormatError(BDLabError, ValueError):
    """A reaction network description file is malformed."""


class CertificationError(BDLabError):
    """
    A run exceeded one of its configured certification bounds.

    Attributes:
        failures: Names of the violated certificates
    """

    def __init__(self, failures: list[str], message: Optional[str] = None):
        self.failures = list(failures)
        super().__init__(message or "Certification failed: " + ", ".join(self.failures))
