"""Exception types raised across the package."""


class CNRVDError(Exception):
    """Base class for all package errors."""


class QubitCapError(CNRVDError, ValueError):
    """Requested register exceeds the dense-simulation qubit cap."""


class InvalidStateError(CNRVDError, ValueError):
    """Matrix is not a valid density matrix."""


class InvalidChannelError(CNRVDError, ValueError):
    """Kraus set is malformed or not trace preserving."""


class CircuitError(CNRVDError, ValueError):
    """Malformed gate or circuit (overlapping targets, dimension mismatch, ...)."""


class CircuitShapeError(CircuitError):
    """Circuit does not have the layout an operation expects."""


class NotCliffordError(CNRVDError, ValueError):
    """A Pauli was conjugated through a gate that does not map Paulis to Paulis."""


class DegenerateDenominatorError(CNRVDError, ZeroDivisionError):
    """Estimator denominator vanished."""


class CalibrationDegenerateError(DegenerateDenominatorError):
    """Calibration quantity vanished; circuit noise is too strong to calibrate."""


class ExtrapolationDomainError(CNRVDError, ValueError):
    """Zero-noise extrapolation inputs lie outside the exponential model's domain."""


class ConfigError(CNRVDError, ValueError):
    """Experiment or channel configuration failed validation."""
