"""Certificate authority: root material, certificate issuance, revocation lists and verification."""

import enum
import threading
from typing import NamedTuple, Optional

from absl import logging
from flax import struct

from threatmesh.encoding import RecordReader, RecordWriter, sha256
from threatmesh.errors import InvalidValidity, UnknownSerial
from threatmesh.identity.keys import Entropy, KeyPair, verify_signature

# ticks; effectively unbounded for desk-scale runs
DEFAULT_VALIDITY = (0, 2**40)


class Role(str, enum.Enum):
    PEER = "peer"
    ORDERER = "orderer"
    CLIENT = "client"
    ADMIN = "admin"
    CA = "ca"


class RejectReason(str, enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    REVOKED = "Revoked"
    UNKNOWN_ISSUER = "UnknownIssuer"


class Verdict(NamedTuple):
    accepted: bool
    reason: Optional[RejectReason] = None


ACCEPT = Verdict(True)


@struct.dataclass
class Certificate:
    serial: int
    subject: str
    organization: str
    role: Role
    public_key: bytes
    agreement_key: bytes
    not_before: int
    not_after: int
    issuer: str
    issuer_signature: bytes = b""

    def body_bytes(self) -> bytes:
        """Canonical bytes covered by ``issuer_signature``."""
        w = RecordWriter()
        w.u64(self.serial).str_(self.subject).str_(self.organization).str_(self.role.value)
        w.bytes_(self.public_key).bytes_(self.agreement_key)
        w.u64(self.not_before).u64(self.not_after).str_(self.issuer)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return RecordWriter().bytes_(self.body_bytes()).bytes_(self.issuer_signature).getvalue()

    @classmethod
    def read(cls, reader: RecordReader) -> "Certificate":
        body = RecordReader(reader.bytes_())
        signature = reader.bytes_()
        cert = cls(
            serial=body.u64(),
            subject=body.str_(),
            organization=body.str_(),
            role=Role(body.str_()),
            public_key=body.bytes_(),
            agreement_key=body.bytes_(),
            not_before=body.u64(),
            not_after=body.u64(),
            issuer=body.str_(),
            issuer_signature=signature,
        )
        body.done()
        return cert

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        reader = RecordReader(data)
        cert = cls.read(reader)
        reader.done()
        return cert

    @property
    def fingerprint(self) -> str:
        return sha256(self.to_bytes()).hex()


@struct.dataclass
class Crl:
    issuer: str
    revoked_serials: frozenset
    issued_at: int
    ca_signature: bytes = b""

    def body_bytes(self) -> bytes:
        w = RecordWriter().str_(self.issuer).u64(self.issued_at)
        w.seq(sorted(self.revoked_serials), lambda w_, s: w_.u64(s))
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return RecordWriter().bytes_(self.body_bytes()).bytes_(self.ca_signature).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Crl":
        reader = RecordReader(data)
        body = RecordReader(reader.bytes_())
        signature = reader.bytes_()
        reader.done()
        issuer, issued_at = body.str_(), body.u64()
        serials = frozenset(body.seq(lambda r: r.u64()))
        body.done()
        return cls(issuer=issuer, revoked_serials=serials, issued_at=issued_at, ca_signature=signature)


class CertificateAuthority:
    """
    One organization's CA. Holds the root key, a strictly increasing serial counter and the current
    CRL. Issuance and revocation are serialized by an internal lock.
    """

    def __init__(self, name: str, organization: str, keys: KeyPair, root: Certificate, crl: Crl,
                 next_serial: int = 2, issued: Optional[set[int]] = None):
        self.name = name
        self.organization = organization
        self.keys = keys
        self.root = root
        self.crl = crl
        self._next_serial = next_serial
        self._issued = set(issued or ())
        self._lock = threading.Lock()

    @property
    def next_serial(self) -> int:
        return self._next_serial

    @property
    def issued_serials(self) -> frozenset:
        return frozenset(self._issued)

    def _sign_cert(self, cert: Certificate) -> Certificate:
        return cert.replace(issuer_signature=self.keys.sign(cert.body_bytes()))

    def _sign_crl(self, crl: Crl) -> Crl:
        return crl.replace(ca_signature=self.keys.sign(crl.body_bytes()))

    def issue_cert(self, subject: str, role: Role, public_keys: KeyPair,
                   validity: tuple[int, int] = DEFAULT_VALIDITY, organization: Optional[str] = None) -> Certificate:
        """
        Issues a certificate binding ``subject`` to the public halves of ``public_keys``.

        Args:
            subject: Actor name, e.g. ``org1-client``.
            role: The actor's role.
            public_keys: Key pair whose public keys are certified.
            validity: ``(not_before, not_after)`` in ticks.
            organization: Defaults to the CA's organization.

        Returns: The signed certificate with a fresh serial.
        """
        not_before, not_after = validity
        if not not_before < not_after:
            raise InvalidValidity(f"validity range [{not_before}, {not_after}) is empty or inverted")
        with self._lock:
            serial = self._next_serial
            self._next_serial += 1
            self._issued.add(serial)
        cert = Certificate(
            serial=serial,
            subject=subject,
            organization=organization or self.organization,
            role=Role(role),
            public_key=public_keys.public_key,
            agreement_key=public_keys.agreement_key,
            not_before=not_before,
            not_after=not_after,
            issuer=self.name,
        )
        logging.debug("%s issued serial %d to %s (%s)", self.name, serial, subject, cert.role.value)
        return self._sign_cert(cert)

    def revoke(self, serial: int, now: int = 0) -> Crl:
        """Adds ``serial`` to the CRL and re-signs it. Revoking twice yields the same serial set."""
        with self._lock:
            if serial not in self._issued:
                raise UnknownSerial(f"serial {serial} was not issued by {self.name}")
            if serial in self.crl.revoked_serials:
                return self.crl
            self.crl = self._sign_crl(Crl(
                issuer=self.name,
                revoked_serials=self.crl.revoked_serials | {serial},
                issued_at=max(now, self.crl.issued_at),
            ))
        logging.info("%s revoked serial %d", self.name, serial)
        return self.crl


def ca_init(name: str, organization: Optional[str] = None, entropy: Entropy = None,
            validity: tuple[int, int] = DEFAULT_VALIDITY) -> CertificateAuthority:
    """Creates a CA with a self-signed root certificate (serial 1, role ``ca``) and an empty CRL."""
    organization = organization or name.removesuffix("-ca")
    keys = KeyPair.generate(entropy)
    root = Certificate(
        serial=1,
        subject=name,
        organization=organization,
        role=Role.CA,
        public_key=keys.public_key,
        agreement_key=keys.agreement_key,
        not_before=validity[0],
        not_after=validity[1],
        issuer=name,
    )
    root = root.replace(issuer_signature=keys.sign(root.body_bytes()))
    crl = Crl(issuer=name, revoked_serials=frozenset(), issued_at=0)
    crl = crl.replace(ca_signature=keys.sign(crl.body_bytes()))
    logging.info("initialized CA %s for %s", name, organization)
    return CertificateAuthority(name, organization, keys, root, crl, issued={1})


def issue_cert(ca: CertificateAuthority, subject: str, organization: str, role: Role, public_keys: KeyPair,
               validity: tuple[int, int] = DEFAULT_VALIDITY) -> Certificate:
    return ca.issue_cert(subject, role, public_keys, validity, organization)


def revoke(ca: CertificateAuthority, serial: int, now: int = 0) -> Crl:
    return ca.revoke(serial, now)


def verify_crl(crl: Crl, ca_root: Certificate) -> bool:
    return crl.issuer == ca_root.subject and verify_signature(ca_root.public_key, crl.body_bytes(), crl.ca_signature)


def verify_cert(cert: Certificate, ca_root: Certificate, crl: Optional[Crl], now: int) -> Verdict:
    """
    Membership check of a certificate against one CA root and its CRL at tick ``now``.

    Returns: ``Verdict(True)`` or a rejection carrying the first failing reason.
    """
    if cert.issuer != ca_root.subject or ca_root.role != Role.CA:
        return Verdict(False, RejectReason.UNKNOWN_ISSUER)
    if not verify_signature(ca_root.public_key, cert.body_bytes(), cert.issuer_signature):
        return Verdict(False, RejectReason.BAD_SIGNATURE)
    if crl is not None and cert.serial in crl.revoked_serials:
        if not verify_crl(crl, ca_root):
            return Verdict(False, RejectReason.BAD_SIGNATURE)
        return Verdict(False, RejectReason.REVOKED)
    if now < cert.not_before:
        return Verdict(False, RejectReason.NOT_YET_VALID)
    if now > cert.not_after:
        return Verdict(False, RejectReason.EXPIRED)
    return ACCEPT
