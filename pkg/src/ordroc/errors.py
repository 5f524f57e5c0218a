"""Exception hierarchy shared across the package.

Two broad failure classes are distinguished because the CLI maps them to
different exit codes: problems with the input data or configuration
(``DataError``, exit 2) and statistical failures encountered on valid
input (``StatisticalError``, exit 1).
"""


class OrdRocError(Exception):
    """Base class for all package-specific errors."""


class DataError(OrdRocError):
    """Invalid input data, schema, or configuration."""


class RankDeficiencyError(DataError):
    """Design matrix is rank deficient.

    ``columns`` names the design columns involved in the detected
    linear dependency (the implicit intercept is reported as
    ``"(intercept)"`` when it participates).
    """

    def __init__(self, message: str, columns: list[str]):
        super().__init__(message)
        self.columns = list(columns)


class StatisticalError(OrdRocError):
    """Estimation or inference failed on structurally valid input."""


class SingularMatrixError(StatisticalError):
    """A covariance/information matrix is singular or indefinite."""

    def __init__(self, message: str, condition_number: float | None = None):
        super().__init__(message)
        self.condition_number = condition_number
