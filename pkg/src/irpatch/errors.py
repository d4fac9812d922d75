"""Exception types raised across the package."""


class IRPatchError(Exception):
    """Base class for every error raised by irpatch."""


class DimensionError(IRPatchError, ValueError):
    """Array shapes do not agree."""


class ParameterError(IRPatchError, ValueError):
    """A scalar or structural parameter is out of its allowed range."""


class PreconditionError(IRPatchError, ValueError):
    """Input violates a documented precondition (e.g. a non-binary mask)."""


class ContractViolation(IRPatchError, RuntimeError):
    """A victim model broke its scoring contract."""


class ConfigError(IRPatchError, ValueError):
    """Run configuration is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key
