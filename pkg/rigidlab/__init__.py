"""rigidlab - numerical lab for geometric rigidity of incompatible matrix fields."""

__version__ = "0.1.0"

from rigidlab.types import (  # noqa: E402
    CZDecomposition,
    FormField,
    GridDomain,
    InvariantError,
    MatrixField,
    MeasureDensity,
    RigidityReport,
    Rotation,
    Segment,
)
from rigidlab.config import RigidLabConfig, load_config  # noqa: E402

__all__ = [
    "__version__",
    "GridDomain",
    "FormField",
    "MatrixField",
    "MeasureDensity",
    "Segment",
    "Rotation",
    "RigidityReport",
    "CZDecomposition",
    "InvariantError",
    "RigidLabConfig",
    "load_config",
]
