"""
Exception hierarchy for the HSR re-identification toolkit
"""

from typing import Optional


class HSRError(Exception):
    """Base class for every error raised by hsr_reid"""


# ==================== Numerical errors ====================

class ZeroVectorError(HSRError, ValueError):
    """A row collapsed to (near) zero norm and cannot be normalized"""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"Row {row} has norm {norm:.3e} <= 1e-12 and cannot be normalized")


class NonFiniteError(HSRError, ValueError):
    """NaN or Inf found where finite values are required"""


class TooFewSamplesError(HSRError, ValueError):
    """Not enough samples for the requested neighbourhood size"""


class EmptyInputError(HSRError, ValueError):
    """An operation received an empty collection"""


# ==================== Clustering / mining errors ====================

class SingleClusterError(HSRError, ValueError):
    """Fewer than two non-noise clusters exist"""


class NoPositiveError(HSRError, ValueError):
    """An ICM anchor has no mutual partner"""


class NoNegativeError(HSRError, ValueError):
    """An ICM anchor has an empty negative pool"""


# ==================== Training errors ====================

class DegenerateBatchError(HSRError, ValueError):
    """A batch holds a single class so no negative exists"""


class TooFewClustersError(HSRError, ValueError):
    """Fewer clusters than identities requested per batch"""


# ==================== Evaluation errors ====================

class NoRelevantError(HSRError, ValueError):
    """A ranking has no relevant item"""


# ==================== I/O and configuration errors ====================

class FormatError(HSRError, ValueError):
    """A file on disk does not follow the expected layout"""


class ConfigError(HSRError, ValueError):
    """Invalid configuration"""


class ParseError(ConfigError):
    """Malformed config line"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownKeyError(ConfigError):
    """Config key that RunConfig does not define"""

    def __init__(self, key: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"Unknown config key '{key}'{where}")


class ConfigTypeError(ConfigError, TypeError):
    """Config value cannot be converted to the key's type"""

    def __init__(self, key: str, value: object, reason: str):
        self.key = key
        self.value = value
        super().__init__(f"Invalid value {value!r} for key '{key}': {reason}")


class UsageError(HSRError):
    """Bad command line"""


__all__ = [
    "HSRError",
    "ZeroVectorError",
    "NonFiniteError",
    "TooFewSamplesError",
    "EmptyInputError",
    "SingleClusterError",
    "NoPositiveError",
    "NoNegativeError",
    "DegenerateBatchError",
    "TooFewClustersError",
    "NoRelevantError",
    "FormatError",
    "ConfigError",
    "ParseError",
    "UnknownKeyError",
    "ConfigTypeError",
    "UsageError",
]
