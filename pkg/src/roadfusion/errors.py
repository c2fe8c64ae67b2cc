"""Exception hierarchy shared across the engine.

Data errors (bad files, bad manifests) are kept distinct from
configuration errors so the CLI can map them to different exit codes.
"""


class RoadFusionError(Exception):
    """Base class for all engine errors."""


class DataFormatError(RoadFusionError):
    """A tensor, descriptor, label grid or other data file is invalid."""


class ManifestError(DataFormatError):
    """A dataset manifest violates the documented grammar or its invariants."""


class SchemaMismatchError(DataFormatError):
    """Shapes, dimensionalities or class schemas disagree between inputs."""


class NoEligibleReferencesError(RoadFusionError):
    """Geographic exclusion removed every reference candidate.

    Raised as a distinct type so callers can widen the reference set
    instead of treating this as a data error.
    """


class ConfigError(RoadFusionError):
    """A run configuration value is invalid."""
