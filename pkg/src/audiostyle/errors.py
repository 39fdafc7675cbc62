"""Exception hierarchy shared by every module."""


class AudioStyleError(Exception):
    """Base class; ``kind`` is the short machine-readable error name."""

    kind = "error"


class InvalidInputError(AudioStyleError, ValueError):
    kind = "invalid-input"


class ConfigError(AudioStyleError, ValueError):
    kind = "config"


class ShapeError(AudioStyleError, ValueError):
    kind = "shape"


class NumericError(AudioStyleError, ArithmeticError):
    kind = "numeric"


class CheckpointError(AudioStyleError):
    kind = "checkpoint"


class MagicMismatchError(CheckpointError):
    kind = "magic-mismatch"


class VersionMismatchError(CheckpointError):
    kind = "version-mismatch"


class TruncatedFileError(CheckpointError):
    kind = "truncated"


class CheckpointShapeError(CheckpointError, ShapeError):
    kind = "checkpoint-shape"


class WavError(AudioStyleError):
    kind = "wav"


class MalformedWavError(WavError):
    kind = "wav-malformed"


class UnsupportedRateError(WavError):
    kind = "wav-unsupported-rate"


class UnsupportedChannelsError(WavError):
    kind = "wav-unsupported-channels"


class UnsupportedBitDepthError(WavError):
    kind = "wav-unsupported-bit-depth"


class TrainFirstError(AudioStyleError):
    kind = "train-first"
