"""Exception hierarchy shared by every stage of the pipeline."""


class PSMError(Exception):
    """Base class for all errors raised by psmatch."""


class ValidationError(PSMError, ValueError):
    """Input data or configuration failed validation (CLI exit code 2)."""


class EstimationError(PSMError, ArithmeticError):
    """A statistical estimate could not be computed (CLI exit code 3)."""


# -- cohort ingestion ---------------------------------------------------------

class SchemaError(ValidationError):
    pass


class MissingColumn(ValidationError):
    def __init__(self, name: str, source: str | None = None):
        self.name = name
        self.source = source
        where = f" in {source}" if source else ""
        super().__init__(f"column {name!r} missing{where}")


class UnknownColumn(ValidationError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown column {name!r}")


class BadValue(ValidationError):
    def __init__(self, row: int, column: str, reason: str, source: str | None = None):
        self.row = row
        self.column = column
        self.reason = reason
        self.source = source
        where = f"{source}:" if source else "row "
        super().__init__(f"{where}{row}: column {column!r}: {reason}")


class EmptyCohort(ValidationError):
    pass


class SingleArm(ValidationError):
    pass


class SchemaMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class DimensionMismatch(ValidationError):
    pass


# -- estimation ---------------------------------------------------------------

class Singular(EstimationError):
    pass


class NotConverged(EstimationError):
    pass


class DegenerateSE(EstimationError):
    pass


class EmptyGroup(EstimationError):
    pass


class ZeroVarianceUnequalMeans(EstimationError):
    pass


class EmptySample(EstimationError):
    pass


class MismatchedInputs(EstimationError):
    pass


class DegenerateTable(EstimationError):
    """A zero cell in the 2x2 outcome table makes the odds ratio infinite."""

    def __init__(self, table):
        self.table = table
        super().__init__(
            "zero cell in 2x2 table "
            f"[[{table[0][0]}, {table[0][1]}], [{table[1][0]}, {table[1][1]}]] "
            "(rows: treated, control; columns: outcome=1, outcome=0)"
        )


class SeparationWarning(UserWarning):
    """Coefficients diverged during IRLS; the data are (quasi-)separated."""
