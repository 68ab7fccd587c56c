"""Exception hierarchy shared by every pipeline stage.

Each class carries a short ``category`` used by the CLI when it prints the
one-line failure message.
"""


class CrsError(Exception):
    category = "error"


class StorageError(CrsError):
    category = "storage"


class FormatError(CrsError):
    category = "format"


class EncodingError(CrsError):
    category = "encoding"


class BoundsError(CrsError, IndexError):
    category = "bounds"


class ShapeError(CrsError, ValueError):
    category = "shape"


class GenerationError(CrsError):
    category = "generation"


class ModeError(CrsError, ValueError):
    category = "mode"


class SeedError(CrsError, ValueError):
    category = "seed"


class StateError(CrsError):
    category = "state"


class MetricError(CrsError, ValueError):
    category = "metric"


class TrainingError(CrsError):
    category = "training"


class ConfigError(CrsError, ValueError):
    category = "config"


class ParseError(CrsError, ValueError):
    category = "parse"


class UsageError(CrsError):
    category = "usage"


class CapacityWarning(UserWarning):
    """More seed regions than object slots; the surplus stays background."""
