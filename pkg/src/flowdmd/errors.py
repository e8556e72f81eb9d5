"""Exception and warning types shared across the package."""


class FlowDmdError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowDmdError):
    """Invalid configuration value or malformed config file."""


class UsageError(FlowDmdError):
    """API misuse, e.g. backpropagating from a value that was never recorded."""


class ShapeError(FlowDmdError):
    """Array dimensions incompatible with the requested operation."""


class NumericError(FlowDmdError):
    """Non-finite values where finite arithmetic is required."""


class SingularScaleError(FlowDmdError):
    """Coupling-layer scale too close to zero to divide by."""


class RankDeficiencyError(FlowDmdError):
    """Requested rank exceeds the numerical rank of the snapshot data."""


class SolverError(FlowDmdError):
    """Implicit time step failed to converge."""


class ZeroReferenceError(FlowDmdError):
    """Relative error undefined because the reference has zero norm."""


class TrainingDivergenceError(FlowDmdError):
    """Loss became non-finite during training."""


class DeserializationError(FlowDmdError):
    """File content does not match the expected serialization format."""


class SpectralInconsistencyWarning(UserWarning):
    """Eigenvector basis is near-defective or predictions carry a large
    imaginary residue."""
