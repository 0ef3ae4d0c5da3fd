"""Shared exception types."""


class ParameterError(ValueError):
    """A physical parameter or precondition is invalid."""


class StepSizeTooLargeError(RuntimeError):
    """Integrator step violated the density-matrix invariants beyond tolerance."""


class EmptyInputError(ValueError):
    """An operation received no data."""


class InsufficientSpanError(ValueError):
    """Histogram or sweep does not cover the range the analysis needs."""


class GridError(ValueError):
    """Frequency grid too coarse or too narrow for the requested spectrum."""


class DegenerateDataError(ValueError):
    """Data carry no usable signal for the requested fit."""


class NonFiniteResidualError(ValueError):
    """Residual function returned NaN or inf at the starting point."""


class OverlappingPeaksError(ValueError):
    """Peaks are closer than the fit model can separate."""


class ZeroReferenceError(ValueError):
    """The reference peak used for normalization is empty."""
