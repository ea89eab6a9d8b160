"""Exception types raised across the pipeline.

The hierarchy groups errors by how the command-line driver maps them to
exit codes: configuration problems, data/input problems, and numeric
failures during estimation.
"""


class TmleScreenError(Exception):
    """Base class for all package errors."""


class ConfigError(TmleScreenError):
    """Invalid run configuration (bad flag value, unknown learner, ...)."""


class DataError(TmleScreenError):
    """Problem with input data files or their contents."""


class NumericError(TmleScreenError):
    """Estimation failed for numeric reasons."""


# -- data errors --------------------------------------------------------------

class ParseError(DataError):
    """Input file is malformed (bad delimiter structure, non-numeric cell)."""


class AlignmentError(DataError):
    """Subject identifiers do not match between expression and phenotype."""


class MissingValueError(DataError):
    """Missing or non-finite value where a complete number is required."""


class ConstantExposureError(DataError):
    """Exposure vector is all zeros or all ones."""


class InvalidFoldCount(ConfigError):
    """Requested cross-validation fold count is out of range."""


class SchemaMismatch(DataError):
    """A result file does not have the expected columns."""


# -- learner errors ------------------------------------------------------------

class RankDeficientError(NumericError):
    """Design matrix is rank deficient and no fallback was requested."""


class SeparationError(NumericError):
    """Logistic fit diverged (separation) or failed to converge."""


class InvalidK(ConfigError):
    """k for nearest-neighbor regression is outside [1, n]."""


class DimensionMismatch(NumericError):
    """Feature matrix width does not match the fitted model."""


class AllLearnersFailedError(NumericError):
    """Every candidate learner failed to fit; no ensemble can be formed."""


# -- targeting / inference errors ----------------------------------------------

class DegenerateCovariate(NumericError):
    """Fluctuation covariate has zero sum of squares."""


class LengthMismatch(NumericError):
    """Vectors that must share a length do not."""


class DegenerateVariances(NumericError):
    """Too few usable variances to estimate shrinkage hyperparameters."""


class OutOfRangeP(NumericError):
    """A p-value outside [0, 1] was supplied."""
