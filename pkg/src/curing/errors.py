"""Exception hierarchy shared by every module."""


class CuringError(Exception):
    """Base class for all library errors."""

    #: process exit status used by the command line front-end
    exit_code = 3


class ConfigError(CuringError):
    exit_code = 2


class StoreError(CuringError):
    exit_code = 4


class InvalidMatrix(CuringError, ValueError):
    pass


class NumericalFailure(CuringError, ArithmeticError):
    pass


class DimensionMismatch(CuringError, ValueError):
    pass


class SingularSubsystem(NumericalFailure):
    pass


class MissingActivations(ConfigError, ValueError):
    pass


class MissingSeed(ConfigError, ValueError):
    pass


class RankExceedsSpectrum(CuringError, ValueError):
    pass


class TokenOutOfRange(CuringError, ValueError):
    pass


class ZeroVector(CuringError, ValueError):
    pass


class EmptyDataset(ConfigError, ValueError):
    pass


class TooFewLayers(ConfigError, ValueError):
    pass


class PlanLayerProtected(ConfigError, ValueError):
    pass


class ArchitectureMismatch(CuringError, ValueError):
    pass


class UnknownPreset(ConfigError, KeyError):
    pass


class ConflictingFlags(ConfigError):
    pass


class IoFailure(StoreError, OSError):
    pass


class CorruptManifest(StoreError, ValueError):
    pass


class ShapeMismatch(StoreError, ValueError):
    pass


class UnsupportedVersion(StoreError, ValueError):
    pass
