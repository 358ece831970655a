"""The threat-sharing contract and the on-ledger share record."""

import json
from typing import NamedTuple

from absl import logging
from flax import struct

from threatmesh.cas.cid import Cid
from threatmesh.contract import ChaincodeStub, Contract
from threatmesh.encoding import RecordWriter
from threatmesh.errors import AccessDenied, AlreadyShared, BadSignature, ContractError, NoSuchShare, NotSender
from threatmesh.identity.did import canonical_json
from threatmesh.identity.keys import verify_signature


class ThreatShareConstants(NamedTuple):
    GRANTS_COLLECTION: str = "grants"
    SHARE_PREFIX: str = "share/"
    GRANT_PREFIX: str = "grant/"
    DID_PREFIX: str = "did/"
    DID_ORG_PREFIX: str = "did-org/"
    WRAPPED_KEY_TRANSIENT: str = "wrapped_key/"


def share_statement(cid: str, content_hash: bytes) -> bytes:
    """Bytes the sender signs to bind a cid to the plaintext hash."""
    return RecordWriter().str_(cid).bytes_(content_hash).getvalue()


@struct.dataclass
class ShareRecord:
    """Public part of a share; wrapped keys live in the private grants collection."""

    cid: str
    content_hash: bytes
    sender_did: str
    sender_signature: bytes
    threat_name: str
    created_at: int
    recipients: tuple = ()
    erased: bool = False

    def to_dict(self) -> dict:
        return {
            "cid": self.cid,
            "content_hash": self.content_hash.hex(),
            "sender_did": self.sender_did,
            "sender_signature": self.sender_signature.hex(),
            "threat_name": self.threat_name,
            "created_at": self.created_at,
            "recipients": list(self.recipients),
            "erased": self.erased,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "ShareRecord":
        try:
            data = json.loads(text)
            return cls(
                cid=data["cid"],
                content_hash=bytes.fromhex(data["content_hash"]),
                sender_did=data["sender_did"],
                sender_signature=bytes.fromhex(data["sender_signature"]),
                threat_name=data["threat_name"],
                created_at=int(data["created_at"]),
                recipients=tuple(data["recipients"]),
                erased=bool(data.get("erased", False)),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise ContractError(f"malformed share record: {e}") from e


def share_key(cid: str) -> str:
    return ThreatShareConstants().SHARE_PREFIX + cid


def grant_key(cid: str, recipient_did: str) -> str:
    return f"{ThreatShareConstants().GRANT_PREFIX}{cid}/{recipient_did}"


_ARITY = {"publish_share": 1, "grant_access": 2, "revoke_access": 2, "record_erasure": 1, "anchor_did": 2}


class ThreatShareContract(Contract[ThreatShareConstants]):
    """Records shared cids, per-recipient grants, erasures and DID anchors."""

    name = "threatshare"

    def __init__(self, consts: ThreatShareConstants = None):
        super().__init__(consts or ThreatShareConstants())

    def operations(self) -> tuple[str, ...]:
        return tuple(_ARITY)

    def check_args(self, operation: str, args: tuple) -> None:
        if len(args) != _ARITY[operation]:
            raise ContractError(f"{operation} takes {_ARITY[operation]} argument(s), got {len(args)}")

    def collections(self, operation: str) -> tuple[str, ...]:
        return () if operation == "anchor_did" else (self.consts.GRANTS_COLLECTION,)

    def _load(self, stub: ChaincodeStub, cid: str) -> ShareRecord:
        value = stub.get_state(self.consts.SHARE_PREFIX + cid)
        if value is None:
            raise NoSuchShare(f"no share recorded for {cid}")
        return ShareRecord.from_json(value)

    def _load_as_sender(self, stub: ChaincodeStub, cid: str) -> ShareRecord:
        record = self._load(stub, cid)
        if record.sender_did != stub.creator_did:
            raise NotSender(f"{stub.creator.subject} did not share {cid}")
        if record.erased:
            raise NoSuchShare(f"share {cid} was erased")
        return record

    def _put_grant(self, stub: ChaincodeStub, cid: str, recipient: str) -> None:
        org = stub.get_state(self.consts.DID_ORG_PREFIX + recipient)
        if org is None:
            raise AccessDenied(f"{recipient} is not anchored on {stub.channel.name}")
        if org.decode() not in stub.channel.collection(self.consts.GRANTS_COLLECTION).member_orgs:
            raise AccessDenied(f"{recipient} belongs to {org.decode()}, outside collection {self.consts.GRANTS_COLLECTION!r}")
        wrapped = stub.get_transient(self.consts.WRAPPED_KEY_TRANSIENT + recipient)
        if wrapped is None:
            raise ContractError(f"no wrapped key for {recipient} in transient data")
        stub.put_private_data(self.consts.GRANTS_COLLECTION, grant_key(cid, recipient), wrapped)

    def publish_share(self, stub: ChaincodeStub, record_json: bytes) -> bytes:
        record = ShareRecord.from_json(record_json)
        if record.sender_did != stub.creator_did:
            raise BadSignature(f"sender {record.sender_did} is not the proposal creator {stub.creator_did}")
        try:
            Cid.parse(record.cid)
        except ValueError as e:
            raise ContractError(f"share cid does not parse: {e}") from e
        if not verify_signature(stub.creator.public_key, share_statement(record.cid, record.content_hash),
                                record.sender_signature):
            raise BadSignature(f"sender signature over {record.cid} does not verify")
        if stub.get_state(self.consts.SHARE_PREFIX + record.cid) is not None:
            raise AlreadyShared(f"{record.cid} is already shared")
        record = record.replace(recipients=tuple(dict.fromkeys(record.recipients)), erased=False)
        stub.put_state(self.consts.SHARE_PREFIX + record.cid, record.to_json().encode())
        for recipient in record.recipients:
            self._put_grant(stub, record.cid, recipient)
        return record.cid.encode()

    def grant_access(self, stub: ChaincodeStub, cid: bytes, recipient_did: bytes) -> bytes:
        cid, recipient = cid.decode(), recipient_did.decode()
        record = self._load_as_sender(stub, cid)
        self._put_grant(stub, cid, recipient)
        if recipient not in record.recipients:
            record = record.replace(recipients=record.recipients + (recipient,))
            stub.put_state(self.consts.SHARE_PREFIX + cid, record.to_json().encode())
        return b""

    def revoke_access(self, stub: ChaincodeStub, cid: bytes, recipient_did: bytes) -> bytes:
        cid, recipient = cid.decode(), recipient_did.decode()
        record = self._load_as_sender(stub, cid)
        stub.del_private_data(self.consts.GRANTS_COLLECTION, grant_key(cid, recipient))
        record = record.replace(recipients=tuple(r for r in record.recipients if r != recipient))
        stub.put_state(self.consts.SHARE_PREFIX + cid, record.to_json().encode())
        return b""

    def record_erasure(self, stub: ChaincodeStub, cid: bytes) -> bytes:
        """Marks the share erased; the record itself stays for audit and its grants are removed."""
        cid = cid.decode()
        record = self._load_as_sender(stub, cid)
        for recipient in record.recipients:
            stub.del_private_data(self.consts.GRANTS_COLLECTION, grant_key(cid, recipient))
        stub.put_state(self.consts.SHARE_PREFIX + cid, record.replace(erased=True).to_json().encode())
        logging.debug("erasure of %s recorded by %s", cid, stub.creator.subject)
        return b""

    def anchor_did(self, stub: ChaincodeStub, did: bytes, cid: bytes) -> bytes:
        did, cid = did.decode(), cid.decode()
        if did != stub.creator_did:
            raise AccessDenied(f"{stub.creator.subject} cannot anchor {did}")
        try:
            Cid.parse(cid)
        except ValueError as e:
            raise ContractError(f"DID document cid does not parse: {e}") from e
        stub.put_state(self.consts.DID_PREFIX + did, cid.encode())
        stub.put_state(self.consts.DID_ORG_PREFIX + did, stub.creator.organization.encode())
        return b""
