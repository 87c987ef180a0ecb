"""Exception hierarchy.

Two broad families matter for the CLI exit-code mapping: `DataError`
(malformed or inconsistent input, exit code 2) and `NumericalError`
(degenerate numerics discovered while computing, exit code 3).
"""


class HandBayesError(Exception):
    """Base class for all package errors."""


class UsageError(HandBayesError):
    """Bad command-line usage or configuration."""


class DataError(HandBayesError):
    """Input data violates a documented contract."""


class NumericalError(HandBayesError):
    """A numerical routine cannot proceed or has degenerated."""


# -- dataset -----------------------------------------------------------------

class DuplicateRecord(DataError):
    """Two records share the same (writer, character, repetition) triple."""


class BadLabel(DataError):
    """Character label outside the supported set."""


class BadValue(DataError):
    """A field failed to parse or is non-finite."""


class DegenerateScale(DataError):
    """A reference feature column has zero standard deviation."""


class UnknownWriter(DataError):
    """Requested writer id is not present in the dataset."""


class SplitInfeasible(DataError):
    """A stratified split cannot give both sides at least one repetition."""


class LeakageError(DataError):
    """Background data contains a writer from the case material."""


# -- contour -----------------------------------------------------------------

class BadAmplitude(DataError):
    """Negative harmonic amplitude."""


class Underdetermined(DataError):
    """Too few contour samples for the requested harmonic count."""


class DegenerateContour(DataError):
    """Contour encloses no area (or a negative radius was produced)."""


# -- elicitation -------------------------------------------------------------

class NeedMoreWriters(DataError):
    """Background must contain at least two writers."""


class MissingCell(DataError):
    """A writer-character cell has no repetitions."""


class BadDof(DataError):
    """Inverse-Wishart degrees of freedom below the admissible minimum."""


class BadVariance(DataError):
    """Nonpositive variance where a positive one is required."""


class BadGrid(DataError):
    """Empty or invalid hyperparameter search grid."""


# -- models / samplers -------------------------------------------------------

class BadModel(DataError):
    """Model id and supplied parameters or hyperparameters do not match."""


class BadCovariance(NumericalError):
    """Matrix is not symmetric positive definite where it must be."""


class BadCorrelation(NumericalError):
    """Matrix is not a valid correlation matrix."""


class NeedMoreChains(DataError):
    """Diagnostic requires at least two chains."""


class NeedMoreDraws(DataError):
    """Too few posterior draws to fit a proposal."""


class EstimatorDegenerate(NumericalError):
    """Every bridge-sampling ratio collapsed to zero."""
