"""Exception types shared across the package."""


class CDJPError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class ConfigError(CDJPError):
    exit_code = 2


class MissingChannels(CDJPError, ValueError):
    pass


class LengthMismatch(CDJPError, ValueError):
    pass


class ShapeMismatch(CDJPError, ValueError):
    pass


class Unsupported(CDJPError, ValueError):
    pass


class BadLabel(CDJPError, ValueError):
    pass


class BadDimensions(CDJPError, ValueError):
    pass


class ConfigMismatch(CDJPError, ValueError):
    pass


class EmptyCorpus(CDJPError, ValueError):
    pass


class UnknownLayer(CDJPError, KeyError):
    pass


class UnknownId(CDJPError, KeyError):
    pass


class DegenerateSplit(CDJPError, ValueError):
    pass


class NoForwardCache(CDJPError, RuntimeError):
    pass


class NonFiniteActivation(CDJPError, FloatingPointError):
    exit_code = 4


class NonFiniteLoss(CDJPError, FloatingPointError):
    exit_code = 4


class ManifestMismatch(CDJPError):
    exit_code = 5


class FormatError(CDJPError):
    exit_code = 3
