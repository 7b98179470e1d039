"""Exception hierarchy for cluster-infer.

Every error raised by the package derives from :class:`ClusterInferError`.
The CLI maps these onto exit codes: usage, schema, parse, and configuration
problems exit 2; singular or degenerate data exits 3; numerical breakdown
exits 4.
"""

from __future__ import annotations


class ClusterInferError(Exception):
    """Base class for all package errors."""


class SchemaError(ClusterInferError):
    """A required column is missing or the file layout is wrong."""


class ParseError(ClusterInferError):
    """A cell could not be read as a finite number.

    Parameters
    ----------
    message:
        Human-readable description.
    row_index:
        Zero-based data-row index of the offending cell, when known.
    """

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class EmptyInputError(ClusterInferError):
    """The input contains no data rows."""


class EmptyResultError(ClusterInferError):
    """An operation removed every cluster (e.g. an over-aggressive filter)."""


class TransformError(ClusterInferError):
    """A model transform hit an invalid value (e.g. log of a nonpositive).

    Carries the zero-based row index of the first offending row.
    """

    def __init__(self, message: str, row_index: int | None = None):
        super().__init__(message)
        self.row_index = row_index


class ConfigurationError(ClusterInferError):
    """Invalid user-supplied configuration (bad shapes, out-of-range knobs)."""


class HypothesisError(ClusterInferError):
    """A linear hypothesis is malformed (shape mismatch or rank-deficient R)."""


class SingularClusterError(ClusterInferError):
    """One or more clusters have a rank-deficient regressor block.

    ``cluster_ids`` lists every offending cluster, not just the first.
    """

    def __init__(self, message: str, cluster_ids: list | None = None):
        super().__init__(message)
        self.cluster_ids = list(cluster_ids) if cluster_ids is not None else []


class SingularDesignError(ClusterInferError):
    """The pooled regressor cross-product is rank deficient."""


class DegenerateSuperblockError(ClusterInferError):
    """Superblocks too small for the requested operation.

    ``labels`` lists the offending superblock labels.
    """

    def __init__(self, message: str, labels: list | None = None):
        super().__init__(message)
        self.labels = list(labels) if labels is not None else []


class ConditioningError(ClusterInferError):
    """A matrix needed for inference is numerically too ill-conditioned."""


class ExcessiveFailureError(ClusterInferError):
    """Too many Monte Carlo replications failed to produce a statistic."""
