"""Exception hierarchy shared across the package.

Every error raised on bad input derives from :class:`FlowTPPError`, and each
one carries a stable ``exit_code`` the CLI uses when it surfaces the error.
"""


class FlowTPPError(Exception):
    exit_code = 2


# -- data / ingest ----------------------------------------------------------

class DataError(FlowTPPError, ValueError):
    exit_code = 2


class MissingColumn(DataError):
    pass


class UnparseableTimestamp(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooManyMalformedRows(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class InvalidSpec(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class DimensionMismatch(FlowTPPError, ValueError):
    pass


class NonPositiveTau(FlowTPPError, ValueError):
    pass


class EmptyBatch(FlowTPPError, ValueError):
    pass


class WrongKind(DataError):
    pass


class EmptyInput(DataError):
    pass


class InsufficientData(DataError):
    pass


class TooFewPoints(InsufficientData):
    pass


class SchemaMismatch(DataError):
    pass


# -- model / checkpoints ----------------------------------------------------

class CheckpointError(FlowTPPError):
    exit_code = 2


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class CheckpointMismatch(CheckpointError):
    pass


class HorizonTooLarge(FlowTPPError, ValueError):
    exit_code = 2


class TrainingError(FlowTPPError):
    exit_code = 3


class NonFiniteLoss(TrainingError):
    """Raised when a batch produces a NaN/Inf loss.

    ``epoch`` and ``batch`` locate the offending window so it can be replayed.
    """

    def __init__(self, message, epoch=None, batch=None, losses=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.losses = losses or {}
