"""Exception types shared across the toolkit."""


class TrajkitError(Exception):
    """Base class for all toolkit errors."""


class TrackParseError(TrajkitError, ValueError):
    """A track file line could not be parsed."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DataError(TrajkitError, ValueError):
    """Input data violates a precondition (non-finite values etc.)."""


class ContractError(TrajkitError, ValueError):
    """Caller violated an interface contract (shape mismatch etc.)."""


class UnsupportedOperationError(TrajkitError, ValueError):
    """Requested operation is not defined for this input."""


class InfeasibleFitError(TrajkitError, RuntimeError):
    """A mixture fit was requested with fewer points than components."""


class FitError(TrajkitError, RuntimeError):
    """Every candidate mixture fit failed."""


class TrainingDivergedError(TrajkitError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, terms):
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms)
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: {self.terms}"
        )
