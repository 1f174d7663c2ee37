"""Exception types shared across the pipeline stages."""


class LcmapError(Exception):
    """Base class for all pipeline errors."""


class FormatError(LcmapError):
    """Input file is unreadable as the documented format."""


class DegenerateInputError(LcmapError):
    """Input is syntactically fine but too small/empty to process."""


class ContractViolationError(LcmapError):
    """A caller handed data that violates a documented precondition."""


class ConfigError(LcmapError):
    """Invalid or contradictory configuration."""
