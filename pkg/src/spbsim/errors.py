class ConfigurationError(ValueError):
    """Invalid model, profile, or run configuration."""


class ProtocolError(ValueError):
    """Partial gradients whose coverage does not match the suffix rule."""


class UnknownModelError(KeyError):
    """Model name missing from the profile table."""


class TraceFormatError(ValueError):
    """Malformed trace or profile file; message names the offending line."""


class UnschedulableTaskError(RuntimeError):
    """A task's demand exceeds the capacity of every machine."""


class InstanceTooLargeError(ValueError):
    """Scheduling instance exceeds the exhaustive oracle's size limits."""
