"""Exception hierarchy shared by every vocalprint module."""


class VocalprintError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(VocalprintError, ValueError):
    pass


class ConfigError(VocalprintError, ValueError):
    pass


# audio
class AudioFormatError(VocalprintError):
    """Malformed RIFF/WAVE container."""


class UnsupportedEncodingError(AudioFormatError):
    pass


class EmptyAudioError(VocalprintError):
    pass


class TooShortError(VocalprintError):
    pass


class DegenerateFilterbankError(VocalprintError):
    pass


class EmptyResultError(VocalprintError):
    pass


# nn
class ShapeError(VocalprintError, ValueError):
    pass


class StateError(VocalprintError, RuntimeError):
    pass


class CorruptArchiveError(VocalprintError):
    pass


class IncompatibleWeightsError(VocalprintError):
    pass


# training
class CannotBalanceError(VocalprintError):
    pass


class InvalidTaskError(VocalprintError):
    pass


# identity
class UndefinedDistanceError(VocalprintError, ValueError):
    pass


class IncompatibleDbError(VocalprintError):
    pass


class NoReferencesError(VocalprintError):
    pass


# eval
class DegenerateTrialsError(VocalprintError, ValueError):
    pass


class MissingEmbeddingError(VocalprintError):
    pass


class NotComputableError(VocalprintError):
    pass
