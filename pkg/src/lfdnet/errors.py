"""Exception types shared across the package."""


class MeshFormatError(ValueError):
    """Raised for unparseable or structurally invalid mesh files."""


class DegenerateMeshError(ValueError):
    """Raised when a mesh has no spatial extent (max radius 0)."""


class ImageFormatError(ValueError):
    """Raised for unparseable or out-of-contract PGM image files."""


class ConfigError(ValueError):
    """Raised for invalid configuration values or files."""


class ManifestError(ValueError):
    """Raised for malformed or inconsistent stage manifest files."""


class MissingArtifactError(FileNotFoundError):
    """Raised when a required input file produced by an earlier stage is absent."""


class CheckpointError(RuntimeError):
    """Raised for unreadable, truncated, or mismatched checkpoint files."""


class BoostFormatError(RuntimeError):
    """Raised for unreadable or truncated boosted-tree model files."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes NaN."""
