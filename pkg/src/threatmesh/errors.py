"""Exception hierarchy shared by every threatmesh module.

Each error carries the CLI exit code it maps to. Errors raised inside a simulated node are sent
back to the caller as ``error`` replies and re-raised there as the same class.
"""

from typing import Optional

from threatmesh.encoding import RecordReader, RecordWriter


class ThreatMeshError(Exception):
    """Base class for all threatmesh errors."""

    exit_code: int = 1


# attck
class LayerSyntaxError(ThreatMeshError):
    """Layer text is not valid JSON."""
    exit_code = 10


class SchemaError(ThreatMeshError):
    """Layer JSON does not follow the Navigator layer schema."""
    exit_code = 11


class DomainMismatch(ThreatMeshError):
    exit_code = 12


# cas
class StorageFull(ThreatMeshError):
    exit_code = 20


class NotFound(ThreatMeshError):
    exit_code = 21


class IntegrityMismatch(ThreatMeshError):
    """Stored or received bytes do not hash to their identifier, or fail authentication."""
    exit_code = 22


class ExchangeTimeout(ThreatMeshError):
    exit_code = 23


class NotOwner(ThreatMeshError):
    exit_code = 24


# identity
class InvalidValidity(ThreatMeshError):
    exit_code = 30


class UnknownSerial(ThreatMeshError):
    exit_code = 31


class IdentityRejected(ThreatMeshError):
    """An actor failed MSP verification. ``reason`` is the rejection reason value."""
    exit_code = 32

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"IdentityRejected({reason})" + (f": {detail}" if detail else ""))


# ledger
class ContractError(ThreatMeshError):
    exit_code = 40


class AccessDenied(ThreatMeshError):
    exit_code = 41


class ChannelUnknown(ThreatMeshError):
    exit_code = 42


class ChainGap(ThreatMeshError):
    exit_code = 43


class AlreadyShared(ContractError):
    exit_code = 44


class BadSignature(ContractError):
    exit_code = 45


class NotSender(ContractError):
    exit_code = 46


class NoSuchShare(ContractError):
    exit_code = 47


class TransactionInvalid(ThreatMeshError):
    """A submitted transaction was committed with a non-valid flag."""
    exit_code = 48


class ChainIntegrityError(ThreatMeshError):
    exit_code = 49


# netsim
class UnknownNode(ThreatMeshError):
    exit_code = 50


class Partitioned(ThreatMeshError):
    exit_code = 51


# protocol
class UnresolvableRecipient(ThreatMeshError):
    exit_code = 60


class SignatureMismatch(ThreatMeshError):
    exit_code = 61


class Erased(NotFound):
    """The share exists but its sender erased it. Exits like ``NotFound``."""


# cli
class ConfigError(ThreatMeshError):
    exit_code = 70


class StateLocked(ThreatMeshError):
    exit_code = 71


def _all_error_types() -> dict[str, type[ThreatMeshError]]:
    found = {}
    pending = [ThreatMeshError]
    while pending:
        cls = pending.pop()
        found[cls.__name__] = cls
        pending.extend(cls.__subclasses__())
    return found


def encode_error(error: ThreatMeshError) -> bytes:
    """Encodes an error for an ``error`` reply."""
    writer = RecordWriter()
    writer.str_(type(error).__name__)
    writer.str_(getattr(error, "reason", "") or "")
    writer.str_(str(error))
    return writer.getvalue()


def decode_error(body: bytes) -> ThreatMeshError:
    """Rebuilds an error from an ``error`` reply body. Unknown names become ``ThreatMeshError``."""
    reader = RecordReader(body)
    name, reason, message = reader.str_(), reader.str_(), reader.str_()
    cls: Optional[type[ThreatMeshError]] = _all_error_types().get(name)
    if cls is IdentityRejected:
        error = IdentityRejected(reason)
        error.args = (message,)
        return error
    if cls is None:
        return ThreatMeshError(f"{name}: {message}")
    return cls(message)
