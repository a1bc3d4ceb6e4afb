class HolonomyError(RuntimeError):
    """Base class for every failure raised by the simulation services."""


class ValidationError(HolonomyError):
    """An operator, state or argument violates a structural requirement."""


class DomainError(HolonomyError):
    """A parameter lies outside the mathematical domain of an operation."""


class IntegrationError(HolonomyError):
    """Numerical integration drifted or produced non-finite values."""


class CapabilityError(HolonomyError):
    """The requested operation cannot be realized with the given hardware."""


class ConfigError(HolonomyError):
    """A configuration document could not be parsed or validated."""
