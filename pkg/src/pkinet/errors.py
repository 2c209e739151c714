"""Exception types shared across the package."""


class PkinetError(Exception):
    """Base class for all package-specific errors."""


class ProtocolError(PkinetError):
    """A session-protocol invariant was violated (class overlap, unfrozen
    projector, out-of-order lifecycle call)."""


class FrozenParameterError(PkinetError):
    """An optimizer step targeted a frozen parameter tensor."""


class DegenerateVectorError(PkinetError):
    """A vector with (near-)zero norm reached L2 normalization.

    Raised instead of clamping: a collapsed projector output is a training
    failure that must surface, not be silently patched over.
    """


class FeatureFileError(PkinetError):
    """A feature file failed to parse.

    ``offset`` is the byte offset (binary format) or line number (text
    format) at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
