"""Exception types shared across the package."""


class PCFilterError(Exception):
    """Base class for all package errors."""


class ValidationError(PCFilterError, ValueError):
    """Invalid input: domain violations, malformed tables, bad configuration."""


class ComputationError(PCFilterError, RuntimeError):
    """Internal inconsistency detected while computing a result."""
