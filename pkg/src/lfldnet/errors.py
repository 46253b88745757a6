"""Exception hierarchy shared by every subpackage."""


class LFLDError(Exception):
    """Base class for all errors raised by lfldnet."""


class ConfigError(LFLDError, ValueError):
    """Invalid hyperparameter, preset or run configuration."""


class ShapeError(LFLDError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(LFLDError, ValueError):
    """A documented precondition was violated (negative dt, non-scalar loss, ...)."""


class TapeStateError(LFLDError, RuntimeError):
    """Backward was requested on a tape that has already been consumed."""


class ModelStateError(LFLDError, RuntimeError):
    """The model is missing state needed for the request (e.g. normalization stats)."""


class FormatError(LFLDError, ValueError):
    """A file does not follow the expected on-disk layout."""


class VersionError(FormatError):
    """A file declares an unsupported format version."""


class IntegrityError(FormatError):
    """A file is truncated or disagrees with its own header."""


class IncompatibleError(LFLDError, ValueError):
    """Checkpoint and dataset disagree on a dimension or channel."""


class TrainingDivergence(LFLDError, RuntimeError):
    """Loss or gradient became non-finite during training.

    ``epoch`` is the epoch at which it happened and ``model`` the last good
    (best-validation) model, when one exists.
    """

    def __init__(self, message, epoch=None, model=None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.model = model
        self.history = history
