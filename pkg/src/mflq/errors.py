"""Exception types shared across the library."""


class MFLQError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(MFLQError, ValueError):
    """A matrix or vector has a shape inconsistent with the model dimensions."""


class NonFiniteEntry(MFLQError, ValueError):
    """An input array contains NaN or infinity."""


class NonPositiveHorizon(MFLQError, ValueError):
    """The horizon T must be a positive finite real."""


class AsymmetricMatrix(MFLQError, ValueError):
    """A weight matrix required to be symmetric deviates beyond tolerance."""


class UnknownPreset(MFLQError, KeyError):
    """Requested named model preset does not exist."""


class SingularInverse(MFLQError, ArithmeticError):
    """An effective control-weight matrix is numerically singular."""


class PreconditionViolated(MFLQError, ValueError):
    """An operation's documented precondition does not hold for the inputs."""


class CapExceeded(MFLQError, ValueError):
    """Requested full-system size exceeds the configured oracle cap."""


class StructureViolation(MFLQError):
    """A guaranteed block structure of the full-system solution failed to hold."""


class NonFiniteState(MFLQError, FloatingPointError):
    """A simulated trajectory escaped to NaN or infinity."""


class MissingInput(MFLQError, FileNotFoundError):
    """A required input file is absent."""


class SchemaMismatch(MFLQError, ValueError):
    """An input file exists but its columns do not match the expected layout."""
