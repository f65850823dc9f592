"""Exception types shared across the package."""


class SomgenError(Exception):
    """Base class for all package errors."""


class ConfigError(SomgenError, ValueError):
    """Invalid or inconsistent configuration."""


class FootprintError(SomgenError, ValueError):
    """A sensing footprint or receiver grid does not fit inside the scene."""


class DataError(SomgenError):
    """Problems reading, writing, or splitting dataset records."""


class CorruptRecordError(DataError):
    """A record on disk is truncated, mis-sized, or fails its checksum."""


class WeightFileError(SomgenError):
    """Malformed tensor file or a mismatch against the target model."""


class MissingTensorError(WeightFileError, KeyError):
    pass


class ShapeMismatchError(SomgenError, ValueError):
    pass


class TrainingError(SomgenError, RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Loss became NaN or infinite."""
