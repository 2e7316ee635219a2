"""Exception hierarchy shared by all modules."""


class CascadeQueryError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CascadeQueryError):
    """Structurally inconsistent configuration (channel mismatch, bad level range, ...)."""


class ValidationError(CascadeQueryError):
    """Runtime data violates an operation's preconditions (out-of-bounds key, non-finite input, ...)."""


class FormatError(CascadeQueryError):
    """A serialized container is malformed (bad magic, truncated payload, manifest mismatch)."""
