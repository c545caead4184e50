"""Exception hierarchy shared by all mvinfo modules."""


class MvInfoError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MvInfoError, ValueError):
    """A probability table or spec violates its invariants."""


class EncodingError(MvInfoError, ValueError):
    """An encoding is malformed or does not fit the table it is applied to."""


class CapacityError(MvInfoError, ValueError):
    """An alphabet or enumeration exceeds the brute-force bound."""


class DomainError(MvInfoError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(MvInfoError, ValueError):
    """A verifier precondition (e.g. sufficiency) does not hold."""


class ShapeError(MvInfoError, ValueError):
    """Tensor operands have incompatible shapes."""


class ContractError(MvInfoError, ValueError):
    """A call violates an operation contract (non-scalar loss, n < 2, ...)."""


class ConfigurationError(MvInfoError, ValueError):
    """An objective or experiment configuration is inconsistent."""


class FormatError(MvInfoError, ValueError):
    """A binary file has a bad magic, version, or truncated payload."""
