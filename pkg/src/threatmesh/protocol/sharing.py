"""
The threat-sharing workflow: encrypt, sign, upload, record, then fetch, verify and decrypt.

A layer is serialized canonically, encrypted under a fresh content key and uploaded to the
content store. The content key is wrapped once per recipient; the wraps travel as transient data
into the ``grants`` private collection while the public share record binds the cid to the plaintext
hash and the sender's signature.
"""

from typing import Iterable, NamedTuple, Optional

from absl import logging
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from flax import struct

from threatmesh.attck.layers import Layer, OverlapPalette, overlap, parse_layer, serialize_layer
from threatmesh.cas.cid import Cid, parse_cid
from threatmesh.cas.node import CasNode, Delegation, ErasureReceipt, erase_proof
from threatmesh.encoding import RecordReader, RecordWriter, sha256
from threatmesh.errors import (
    AccessDenied,
    Erased,
    ExchangeTimeout,
    IntegrityMismatch,
    NotFound,
    NotSender,
    SignatureMismatch,
    TransactionInvalid,
    UnresolvableRecipient,
)
from threatmesh.identity.did import DID_PREFIX, DidDocument, resolve_did
from threatmesh.identity.keys import KEY_SIZE, NONCE_SIZE, Entropy, open_sealed, seal, verify_signature
from threatmesh.ledger.gateway import CommitStatus, EndorsedProposal, Gateway
from threatmesh.ledger.records import ValidationFlag
from threatmesh.ledger.threatshare import ShareRecord, ThreatShareConstants, grant_key, share_key, share_statement
from threatmesh.netsim.rng import SystemEntropy

CONTENT_AAD = b"threatmesh/layer/v1"


def _wrap_context(did: str) -> bytes:
    return b"threatmesh/wrap/" + did.encode()


@struct.dataclass
class EncryptedObject:
    """
    What the content store holds for a share.

    ``sender_signature`` covers the plaintext hash; ``sender_key`` is the content key sealed to the
    sender's own agreement key so the sender can grant further recipients later.
    """

    ciphertext: bytes
    nonce: bytes
    sender_did: str
    sender_signature: bytes
    sender_key: bytes = b""

    def to_bytes(self) -> bytes:
        return (RecordWriter().str_("threatmesh-object/1").bytes_(self.nonce).bytes_(self.ciphertext)
                .str_(self.sender_did).bytes_(self.sender_signature).bytes_(self.sender_key).getvalue())

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedObject":
        try:
            reader = RecordReader(data)
            if reader.str_() != "threatmesh-object/1":
                raise ValueError("unknown object format")
            obj = cls(nonce=reader.bytes_(), ciphertext=reader.bytes_(), sender_did=reader.str_(),
                      sender_signature=reader.bytes_(), sender_key=reader.bytes_())
            reader.done()
        except ValueError as e:
            raise IntegrityMismatch(f"stored object is malformed: {e}") from e
        return obj

    def decrypt(self, content_key: bytes) -> bytes:
        try:
            return AESGCM(content_key).decrypt(self.nonce, self.ciphertext, CONTENT_AAD)
        except (InvalidTag, ValueError) as e:
            raise IntegrityMismatch("ciphertext failed authentication") from e


class WrappedKey(NamedTuple):
    recipient_did: str
    wrapping: bytes


def encrypt_plaintext(identity, plaintext: bytes, entropy: Entropy) -> tuple[EncryptedObject, bytes]:
    """Encrypts and signs ``plaintext``. Returns the object and its content key."""
    content_key = entropy.token_bytes(KEY_SIZE)
    nonce = entropy.token_bytes(NONCE_SIZE)
    obj = EncryptedObject(
        ciphertext=AESGCM(content_key).encrypt(nonce, plaintext, CONTENT_AAD),
        nonce=nonce,
        sender_did=identity.did,
        sender_signature=identity.sign(sha256(plaintext)),
        sender_key=seal(identity.keys.agreement_key, content_key, _wrap_context(identity.did), entropy),
    )
    return obj, content_key


def wrap_key(content_key: bytes, recipient: DidDocument, entropy: Entropy) -> WrappedKey:
    return WrappedKey(recipient.did, seal(recipient.agreement_key, content_key, _wrap_context(recipient.did), entropy))


def unwrap_key(identity, wrapping: bytes) -> bytes:
    """Raises ``IntegrityMismatch`` unless ``wrapping`` was sealed to ``identity``."""
    return open_sealed(identity.keys.agreement, wrapping, _wrap_context(identity.did))


class ShareReceipt(NamedTuple):
    cid: Cid
    tx_id: str
    record: ShareRecord
    status: CommitStatus


class SharingClient:
    """
    One actor's end of the workflow: its identity, its ledger gateway and the content-store node
    of its organization.
    """

    def __init__(self, identity, gateway: Gateway, cas_node: CasNode, entropy: Optional[Entropy] = None,
                 consts: ThreatShareConstants = None):
        self.identity = identity
        self.gateway = gateway
        self.cas = cas_node
        self.consts = consts or ThreatShareConstants()
        self._entropy = entropy or SystemEntropy()

    @property
    def did(self) -> str:
        return self.identity.did

    @property
    def now(self) -> int:
        return self.gateway.now

    def _require_identity(self) -> None:
        self.cas.msp.require(self.identity.cert, self.now)

    def resolve(self, did: str) -> DidDocument:
        """Raises ``UnresolvableRecipient`` if ``did`` is not anchored or its document does not verify."""
        if not did.startswith(DID_PREFIX):
            raise UnresolvableRecipient(f"{did!r} is not a {DID_PREFIX} identifier")
        try:
            return resolve_did(did, self.cas, self.gateway)
        except (NotFound, SignatureMismatch, IntegrityMismatch, ExchangeTimeout) as e:
            raise UnresolvableRecipient(f"cannot resolve {did}: {e}") from e

    def resolve_grantee(self, did: str) -> DidDocument:
        """
        Resolves a recipient and checks its organization may hold grants.

        Raises: ``UnresolvableRecipient`` as ``resolve``; ``AccessDenied`` if the DID was anchored by an
        organization outside the grants collection.
        """
        doc = self.resolve(did)
        try:
            org = self.gateway.query(self.consts.DID_ORG_PREFIX + did).decode()
        except NotFound as e:
            raise UnresolvableRecipient(f"no organization anchored for {did}") from e
        collection = self.gateway.channel.collection(self.consts.GRANTS_COLLECTION)
        if collection is None or org not in collection.member_orgs:
            raise AccessDenied(f"{did} belongs to {org}, outside collection {self.consts.GRANTS_COLLECTION!r}")
        return doc

    def prepare_share(self, layer: Layer, recipients: Iterable[str],
                      threat_name: Optional[str] = None) -> tuple[EndorsedProposal, ShareRecord]:
        """
        Runs every step of a share up to submission: encryption, upload, endorsement of the share
        record and dissemination of the wrapped keys to the grants collection's peers.
        """
        self._require_identity()
        recipients = list(dict.fromkeys(recipients))
        documents = [self.resolve_grantee(did) for did in recipients]

        plaintext = serialize_layer(layer).encode("utf-8")
        content_hash = sha256(plaintext)
        obj, content_key = encrypt_plaintext(self.identity, plaintext, self._entropy)
        cid = self.cas.put_bytes(obj.to_bytes(), owner=self.identity.cert)

        record = ShareRecord(
            cid=str(cid),
            content_hash=content_hash,
            sender_did=self.did,
            sender_signature=self.identity.sign(share_statement(str(cid), content_hash)),
            threat_name=threat_name or layer.name,
            created_at=self.now,
            recipients=tuple(recipients),
        )
        transient = {
            self.consts.WRAPPED_KEY_TRANSIENT + doc.did: wrap_key(content_key, doc, self._entropy).wrapping
            for doc in documents
        }
        proposal = self.gateway.new_proposal("threatshare", "publish_share", [record.to_json().encode()])
        endorsed = self.gateway.endorse(proposal, transient)
        self.gateway.distribute_private(endorsed)
        return endorsed, record

    def share_threat(self, layer: Layer, recipients: Iterable[str], threat_name: Optional[str] = None) -> ShareReceipt:
        """
        Shares ``layer`` with the owners of ``recipients``.

        Raises:
            IdentityRejected: The sender's certificate is not accepted.
            UnresolvableRecipient: A recipient DID does not resolve.
            AccessDenied: A recipient belongs to an organization outside the grants collection.
            TransactionInvalid: The share record did not commit as valid.
        """
        endorsed, record = self.prepare_share(layer, recipients, threat_name)
        tx_id = self.gateway.submit(endorsed.proposal, endorsed.endorsements)
        status = self.gateway.wait_for_commit(tx_id)
        if status.flag != ValidationFlag.VALID:
            raise TransactionInvalid(f"share of {record.cid} {tx_id[:12]} committed as {status.flag.value}")
        logging.info("%s shared %r as %s with %d recipient(s)", self.identity.name, record.threat_name,
                     record.cid, len(record.recipients))
        return ShareReceipt(parse_cid(record.cid), tx_id, record, status)

    def share_record(self, cid: str) -> ShareRecord:
        return ShareRecord.from_json(self.gateway.query(share_key(str(cid))))

    def _content_key(self, cid: str) -> bytes:
        try:
            wrapping = self.gateway.query_private(self.consts.GRANTS_COLLECTION, grant_key(cid, self.did))
        except NotFound as e:
            raise AccessDenied(f"{self.identity.name} holds no grant for {cid}") from e
        return unwrap_key(self.identity, wrapping)

    def fetch_threat(self, cid) -> Layer:
        """
        Fetches, verifies and decrypts a shared layer.

        Raises:
            AccessDenied: No committed grant for this actor, or its organization is outside the grants collection.
            Erased: The share was erased.
            NotFound: Unknown cid, or the content is gone from the store.
            SignatureMismatch: The sender's signature does not verify under the sender's DID.
            IntegrityMismatch: Decryption or the plaintext hash check failed.
        """
        self._require_identity()
        cid = str(cid)
        record = self.share_record(cid)
        if record.erased:
            raise Erased(f"{cid} was erased by its sender")
        content_key = self._content_key(cid)

        sender = resolve_did(record.sender_did, self.cas, self.gateway)
        if not verify_signature(sender.controller_key, share_statement(cid, record.content_hash), record.sender_signature):
            raise SignatureMismatch(f"share record of {cid} is not signed by {record.sender_did}")

        obj = EncryptedObject.from_bytes(self.cas.get_bytes(parse_cid(cid)))
        if obj.sender_did != record.sender_did:
            raise SignatureMismatch(f"object {cid} names sender {obj.sender_did}, record names {record.sender_did}")
        plaintext = obj.decrypt(content_key)
        if sha256(plaintext) != record.content_hash:
            raise IntegrityMismatch(f"plaintext of {cid} does not match the recorded hash")
        if not verify_signature(sender.controller_key, record.content_hash, obj.sender_signature):
            raise SignatureMismatch(f"object {cid} is not signed by {record.sender_did}")
        logging.debug("%s fetched %s", self.identity.name, cid)
        return parse_layer(plaintext.decode("utf-8"))

    def compare_shared(self, cid_a, cid_b, palette: Optional[OverlapPalette] = None) -> Layer:
        a = self.fetch_threat(cid_a)
        b = a if str(cid_a) == str(cid_b) else self.fetch_threat(cid_b)
        return overlap(a, b, palette)

    def grant_access(self, cid, recipient_did: str) -> CommitStatus:
        """Wraps the content key for one more recipient. Only the sender can recover the key to do so."""
        self._require_identity()
        cid = str(cid)
        record = self.share_record(cid)
        if record.sender_did != self.did:
            raise NotSender(f"{self.identity.name} did not share {cid}")
        if record.erased:
            raise Erased(f"{cid} was erased by its sender")
        doc = self.resolve_grantee(recipient_did)
        obj = EncryptedObject.from_bytes(self.cas.get_bytes(parse_cid(cid)))
        content_key = unwrap_key(self.identity, obj.sender_key)
        transient = {self.consts.WRAPPED_KEY_TRANSIENT + doc.did: wrap_key(content_key, doc, self._entropy).wrapping}
        return self.gateway.transact("threatshare", "grant_access", [cid.encode(), doc.did.encode()], transient)

    def revoke_access(self, cid, recipient_did: str) -> CommitStatus:
        self._require_identity()
        return self.gateway.transact("threatshare", "revoke_access", [str(cid).encode(), recipient_did.encode()])

    def erase(self, cid, delegation: Optional[Delegation] = None) -> ErasureReceipt:
        """
        Erases the stored object on every content-store node and, when this actor is the sender,
        marks the share record erased.
        """
        self._require_identity()
        cid = parse_cid(str(cid))
        receipt = self.cas.erase(cid, self.identity.cert, erase_proof(self.identity, cid), delegation)
        try:
            record = self.share_record(str(cid))
        except NotFound:
            return receipt
        if record.sender_did == self.did:
            self.gateway.transact("threatshare", "record_erasure", [str(cid).encode()])
        else:
            logging.info("%s erased %s as delegate; the share record stays unmarked", self.identity.name, cid)
        return receipt


def share_threat(sender: SharingClient, layer: Layer, recipients: Iterable[str]) -> tuple[Cid, str]:
    receipt = sender.share_threat(layer, recipients)
    return receipt.cid, receipt.tx_id


def fetch_threat(recipient: SharingClient, cid) -> Layer:
    return recipient.fetch_threat(cid)


def compare_shared(recipient: SharingClient, cid_a, cid_b, palette: Optional[OverlapPalette] = None) -> Layer:
    return recipient.compare_shared(cid_a, cid_b, palette)
