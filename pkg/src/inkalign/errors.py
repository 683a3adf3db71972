"""Exception hierarchy shared across the toolkit."""


class InkalignError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(InkalignError, ValueError):
    """An input broke a documented precondition (tag, range, or shape)."""


class ShapeMismatch(ContractViolation):
    """Two rasters that must share dimensions do not."""


class CheckpointError(InkalignError):
    """A checkpoint archive is missing, truncated, or inconsistent."""


class DatasetError(InkalignError):
    """Dataset ingestion or manifest verification failed."""


class PriorError(InkalignError):
    """Base class for failures of an external prior stage."""

    stage: str = "prior"


class PriorTransportError(PriorError):
    """The prior endpoint was unreachable or the connection dropped."""


class PriorTimeoutError(PriorTransportError):
    """The prior endpoint did not answer within the deadline."""


class PriorContractError(PriorError):
    """The prior endpoint answered with a malformed or mis-sized payload."""
