"""Exception types raised across the toolkit."""


class AuditError(Exception):
    """Base class for every error raised by fidelity_audit."""


# -- data -------------------------------------------------------------------

class DatasetError(AuditError):
    pass


class SchemaError(DatasetError):
    pass


class MissingColumn(DatasetError):
    pass


class UnparseableValue(DatasetError):
    def __init__(self, row, column, value, reason=""):
        self.row = row
        self.column = column
        self.value = value
        msg = f"row {row}, column {column!r}: cannot parse {value!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class EmptyDataset(DatasetError):
    pass


class UnknownGroupLabel(DatasetError):
    pass


class DatasetTooSmall(DatasetError):
    pass


class SingleStratum(DatasetError):
    pass


# -- models -----------------------------------------------------------------

class ModelError(AuditError):
    pass


class UnsupportedFormat(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class DegenerateCoalitionSet(ModelError):
    pass


class SchemaMismatch(ModelError):
    pass


# -- metrics ----------------------------------------------------------------

class MetricError(AuditError):
    pass


class DegenerateMetric(MetricError):
    pass


class SingleClass(DegenerateMetric):
    pass


class AllGroupsDegenerate(MetricError):
    pass


class FewerThanTwoGroups(MetricError):
    pass


class SingleGroup(MetricError):
    pass


class AllFeaturesDropped(MetricError):
    pass


# -- simulation / orchestration ---------------------------------------------

class InfeasibleFidelity(AuditError):
    pass


class ConfigInvalid(AuditError):
    pass


# -- warnings ---------------------------------------------------------------

class NonConvergence(UserWarning):
    """Iterative fit stopped at its iteration cap; the best iterate is kept."""


class ZeroVarianceColumn(UserWarning):
    """A continuous column is constant on the fit rows; stddev is taken as 1."""
