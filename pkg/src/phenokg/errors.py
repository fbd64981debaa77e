"""Exception types shared across the package.

``DataError`` subclasses signal malformed or inconsistent input data and are
mapped to exit code 2 by the CLI; plain ``ValueError``/``RuntimeError`` mean
programming errors at call sites.
"""


class DataError(Exception):
    """Base class for invalid input data (files, ids, payloads)."""


class GraphFormatError(DataError):
    """Malformed or inconsistent knowledge-graph files."""


class PatientDataError(DataError):
    """Malformed patient records or unresolvable identifiers."""


class UnreachableCandidateError(DataError):
    """A candidate gene cannot be reached from any patient phenotype."""


class CheckpointError(DataError):
    """Unreadable, incompatible, or version-mismatched checkpoint."""


class TrainingAborted(RuntimeError):
    """Training stopped because of a non-finite loss or gradient."""
