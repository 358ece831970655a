"""
Owner-controlled DID documents (``did:mesh:<hex>``).

A document lists the controller's verification and key-agreement keys and is signed by the
controller key. Documents are stored in the content store; their cid is anchored on the ledger
under ``did/<did>``.
"""

import json
from typing import Optional

from absl import logging
from flax import struct

from threatmesh.cas.cid import Cid, parse_cid
from threatmesh.encoding import sha256
from threatmesh.errors import SignatureMismatch
from threatmesh.identity.keys import verify_signature

DID_METHOD = "mesh"
DID_PREFIX = f"did:{DID_METHOD}:"


def did_for_key(public_key: bytes) -> str:
    return DID_PREFIX + sha256(public_key).hex()


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@struct.dataclass
class DidDocument:
    did: str
    controller: str
    verification_keys: tuple
    key_agreement_keys: tuple
    service_cid: Optional[str] = None
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "id": self.did,
            "controller": self.controller,
            "verificationMethod": [key.hex() for key in self.verification_keys],
            "keyAgreement": [key.hex() for key in self.key_agreement_keys],
            "service": self.service_cid,
        }

    def body_bytes(self) -> bytes:
        return canonical_json(self.body()).encode("utf-8")

    def to_json(self) -> str:
        return canonical_json({**self.body(), "proof": self.signature.hex()})

    @classmethod
    def from_json(cls, text: str) -> "DidDocument":
        try:
            data = json.loads(text)
            return cls(
                did=data["id"],
                controller=data["controller"],
                verification_keys=tuple(bytes.fromhex(k) for k in data["verificationMethod"]),
                key_agreement_keys=tuple(bytes.fromhex(k) for k in data["keyAgreement"]),
                service_cid=data.get("service"),
                signature=bytes.fromhex(data["proof"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise SignatureMismatch(f"malformed DID document: {e}") from e

    @property
    def controller_key(self) -> bytes:
        return self.verification_keys[0]

    @property
    def agreement_key(self) -> bytes:
        return self.key_agreement_keys[0]


def build_did_document(identity, service_cid: Optional[str] = None) -> DidDocument:
    """Creates and signs the document for ``identity``; its DID is derived from the certified key."""
    doc = DidDocument(
        did=did_for_key(identity.cert.public_key),
        controller=identity.cert.fingerprint,
        verification_keys=(identity.cert.public_key,),
        key_agreement_keys=(identity.cert.agreement_key,),
        service_cid=service_cid,
    )
    return doc.replace(signature=identity.sign(doc.body_bytes()))


def verify_did_document(doc: DidDocument, did: Optional[str] = None) -> bool:
    if did is not None and doc.did != did:
        return False
    if not doc.verification_keys or not doc.key_agreement_keys:
        return False
    if did_for_key(doc.controller_key) != doc.did:
        return False
    return verify_signature(doc.controller_key, doc.body_bytes(), doc.signature)


def publish_did(identity, cas_node, gateway) -> tuple[DidDocument, Cid]:
    """
    Stores ``identity``'s endpoint descriptor and DID document in the content store, then anchors
    the document cid on the ledger.

    Args:
        identity: The controlling actor.
        cas_node: The content-store node the actor uploads through.
        gateway: The actor's ledger gateway.

    Returns: The signed document and its cid.
    """
    did = did_for_key(identity.cert.public_key)
    descriptor = canonical_json({"did": did, "gateway": gateway.node_id, "store": cas_node.node_id})
    service_cid = cas_node.put_bytes(descriptor.encode("utf-8"), owner=identity.cert)
    doc = build_did_document(identity, str(service_cid))
    cid = cas_node.put_bytes(doc.to_json().encode("utf-8"), owner=identity.cert)
    gateway.transact("threatshare", "anchor_did", [did.encode(), str(cid).encode()])
    logging.info("published %s at %s", did, cid)
    return doc, cid


def resolve_did(did: str, cas_node, gateway) -> DidDocument:
    """
    Looks up the anchored cid of ``did``, fetches the document and checks it.

    Raises: ``NotFound`` if the DID is not anchored; ``IntegrityMismatch`` if the stored document
    was altered; ``SignatureMismatch`` if the document is not self-consistent.
    """
    cid = parse_cid(gateway.query(f"did/{did}").decode())
    doc = DidDocument.from_json(cas_node.get_bytes(cid).decode("utf-8"))
    if not verify_did_document(doc, did):
        raise SignatureMismatch(f"DID document for {did} does not verify under its controller key")
    return doc
