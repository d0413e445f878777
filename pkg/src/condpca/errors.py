"""Exception hierarchy."""


class CondPCAError(Exception):
    """Base class for all package errors."""


class SchemaError(CondPCAError, ValueError):
    pass


class EmptyDataError(CondPCAError, ValueError):
    pass


class OrderingError(CondPCAError, ValueError):
    pass


class RangeError(CondPCAError, ValueError):
    pass


class DataError(CondPCAError, ValueError):
    pass


class ParameterError(CondPCAError, ValueError):
    pass


class ConfigurationError(CondPCAError, ValueError):
    pass


class RankError(CondPCAError, ValueError):
    pass


class DegenerateConfounderError(CondPCAError, ValueError):
    pass


class InsufficientDataError(CondPCAError, ValueError):
    pass


class SymmetryError(CondPCAError, ValueError):
    pass


class SparseRegionError(CondPCAError, ValueError):
    """Too little kernel weight near a confounder value."""

    def __init__(self, z0, weight, floor):
        self.z0 = float(z0)
        self.weight = float(weight)
        self.floor = float(floor)
        super().__init__(
            f"sparse region at z={self.z0:.6g}: effective weight "
            f"{self.weight:.4g} below floor {self.floor:.4g}"
        )


class SelectionError(CondPCAError, RuntimeError):
    pass


class NumericalError(CondPCAError, RuntimeError):
    pass


class CalibrationError(CondPCAError, RuntimeError):
    pass


class ArtifactConsistencyError(CondPCAError, ValueError):
    pass


class SparseRegionWarning(UserWarning):
    pass
