"""Exception and warning types raised across laminasim."""


class LaminaError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(LaminaError):
    """Mechanism file is malformed or has missing/unknown fields."""


class DanglingReferenceError(LaminaError, ReferenceError):
    """A joint or layer names a body/material id that does not exist."""


class TopologyError(LaminaError):
    """Body-joint graph is disconnected, has more than one loop, or lacks a loop where one is needed."""


class SingularMassError(LaminaError):
    """Generalized mass matrix is numerically singular (zero-inertia body)."""


class NumericalBlowupError(LaminaError):
    """State became non-finite or exceeded the blow-up bound during integration."""


class BurnInFailedError(LaminaError):
    """Baumgarte burn-in ended with the loop still open beyond tolerance."""

    def __init__(self, final_error, tolerance, steps):
        self.final_error = final_error
        self.tolerance = tolerance
        self.steps = steps
        super().__init__(
            f"burn-in ended with constraint error {final_error:.3e} m >= tolerance {tolerance:.3e} m "
            f"after {steps} steps; try more burn-in steps or larger alpha/beta"
        )


class RankError(LaminaError, ValueError):
    """Least-squares design matrix is rank deficient."""


class SpectrumError(LaminaError, ValueError):
    """No usable oscillation peak was found in the angle spectrum."""


class DegenerateAxisError(LaminaError, ValueError):
    """Rotation stays below the axis threshold for the whole recording."""


class RangeWarning(UserWarning):
    """Hinge model evaluated outside the design range it was fitted on."""
