"""Desk-scale simulator for hierarchical differentially private census noising.

Covers ToyDown (Laplace noising plus top-down least-squares consistency), a
MiniTopDown approximation (workload geometric noising, non-negative integer
post-processing), closed-form error variances and optimal level budgets,
district fragmentation, district generators, and noisy ecological regression.
"""

from .errors import (
    ConfigurationError,
    FitError,
    GenerationFailure,
    IngestionError,
    InputError,
    ToydownError,
)
from .hierarchy import (
    CountTable,
    District,
    Hierarchy,
    TypeSchema,
    aggregate,
    build_homogeneous,
    check_consistency,
    district_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "FitError", "GenerationFailure", "IngestionError", "InputError",
    "ToydownError", "CountTable", "District", "Hierarchy", "TypeSchema", "aggregate",
    "build_homogeneous", "check_consistency", "district_weights",
]
