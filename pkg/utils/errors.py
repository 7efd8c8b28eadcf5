class FusionUNetError(Exception):
    """Base class for every error raised by the library."""


class ShapeError(FusionUNetError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class GraphError(FusionUNetError, RuntimeError):
    """The autodiff graph cannot be differentiated as requested."""


class NumericalError(FusionUNetError, ArithmeticError):
    """A forward value or a training loss became NaN or infinite."""


class CheckpointError(FusionUNetError, ValueError):
    """A tensor file or checkpoint is corrupt, truncated or incompatible."""


class ImageFormatError(FusionUNetError, ValueError):
    """An image or mask file could not be decoded."""


class LabelRangeError(FusionUNetError, ValueError):
    """A mask holds a label outside [0, n_classes)."""


class ConfigError(FusionUNetError, ValueError):
    """A configuration value or file is invalid."""


class AuditFailure(FusionUNetError, AssertionError):
    """The gradient audit found a mismatch or an unaudited operation."""
