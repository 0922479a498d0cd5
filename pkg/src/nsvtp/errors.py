"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`NsvtpError`,
and the class name is what the command line prints, so names are kept short
and match the contract vocabulary (``MalformedAppendix``, ``LayerMismatch``...).
"""


class NsvtpError(Exception):
    """Base class for all package errors."""


# -- capsule codec -----------------------------------------------------------

class CodecError(NsvtpError):
    pass


class IdContainsDelimiter(CodecError):
    pass


class SegmentTooLarge(CodecError):
    pass


class LengthOverflow(CodecError):
    pass


class MalformedAppendix(CodecError):
    pass


class TruncatedStream(MalformedAppendix):
    pass


class UnknownTlvType(MalformedAppendix):
    pass


class UnknownVersion(MalformedAppendix):
    pass


class ElisionWithoutContext(CodecError):
    pass


class TransformMismatch(CodecError):
    pass


class CorruptPayload(CodecError):
    pass


# -- scheme language ---------------------------------------------------------

class SchemeError(NsvtpError):
    pass


class SchemeSyntaxError(SchemeError):
    def __init__(self, message, position=None, line=None, column=None, expected=None):
        self.position = position
        self.line = line
        self.column = column
        self.expected = expected
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")


class DuplicateName(SchemeError):
    pass


class UnknownIdentifier(SchemeError):
    pass


class UnboundParam(SchemeError):
    pass


class OutOfFeasibleSet(SchemeError):
    pass


class DivisionByZero(SchemeError):
    pass


class DomainError(SchemeError):
    """Arithmetic left the finite reals (overflow, complex power...)."""


class GuardFailed(SchemeError):
    pass


class NoRegimeMatches(SchemeError):
    pass


class AmbiguousRegime(SchemeError):
    pass


class UnknownScheme(SchemeError):
    pass


class UnknownFormula(SchemeError):
    pass


class MissingBinding(SchemeError):
    pass


# -- dvfs model --------------------------------------------------------------

class ModelError(NsvtpError):
    pass


class FrequencyOutOfRange(ModelError):
    pass


class LoadOutOfRange(ModelError):
    pass


class InfeasibleTweakWindow(ModelError):
    pass


# -- trusted exchange --------------------------------------------------------

class TxError(NsvtpError):
    pass


class DuplicateRelayKey(TxError):
    pass


class UnknownRelayKey(TxError):
    pass


class LayerMismatch(TxError):
    pass


class Expired(TxError):
    pass


class AlreadyClaimed(TxError):
    pass


# -- simulator ---------------------------------------------------------------

class SimError(NsvtpError):
    pass


class NoPath(SimError):
    pass


class DeadComponent(SimError):
    pass


class AlreadyDead(SimError):
    pass


class PoolExhausted(SimError):
    pass


class PathwayNotEstablished(SimError):
    pass


class TweakRejected(SimError):
    def __init__(self, cause):
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause}")


class TopologyError(SimError):
    pass


class ConfigError(NsvtpError):
    pass
