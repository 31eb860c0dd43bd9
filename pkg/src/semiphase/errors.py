"""Exception hierarchy shared across the package."""


class SemiphaseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SemiphaseError):
    """Invalid or mismatched configuration (shapes, divisibility, versions)."""


class InputError(SemiphaseError):
    """Caller handed data that violates an operation's preconditions."""


class DataError(SemiphaseError):
    """On-disk dataset is missing, malformed, or inconsistent."""


class StateError(SemiphaseError):
    """Operation requires state that has not been established yet."""


class NumericalError(SemiphaseError):
    """A computation produced or received non-finite values."""
