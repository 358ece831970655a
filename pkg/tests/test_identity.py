import pytest

from threatmesh.errors import IdentityRejected, IntegrityMismatch, InvalidValidity, UnknownSerial
from threatmesh.identity.ca import Certificate, Crl, RejectReason, Role, ca_init, revoke, verify_cert, verify_crl
from threatmesh.identity.did import DID_PREFIX, DidDocument, build_did_document, did_for_key, verify_did_document
from threatmesh.identity.keys import KeyPair, open_sealed, seal, verify_signature
from threatmesh.identity.msp import Msp
from threatmesh.netsim.rng import ENTROPY_STREAM, SeedStream

from conftest import issue_identity


@pytest.fixture
def ca(entropy):
    return ca_init("org1-ca", "org1", entropy)


def test_ca_root_is_self_signed(ca):
    assert ca.root.serial == 1
    assert ca.root.role == Role.CA
    assert verify_cert(ca.root, ca.root, ca.crl, 0).accepted
    assert verify_crl(ca.crl, ca.root)
    assert ca.crl.revoked_serials == frozenset()


def test_serials_strictly_increase(ca, entropy):
    serials = [issue_identity(ca, f"client{i}", Role.CLIENT, entropy).cert.serial for i in range(5)]
    assert serials == [2, 3, 4, 5, 6]
    assert ca.next_serial == 7
    assert ca.issued_serials == frozenset(range(1, 7))


def test_issue_rejects_inverted_validity(ca, entropy):
    with pytest.raises(InvalidValidity):
        ca.issue_cert("c", Role.CLIENT, KeyPair.generate(entropy), validity=(10, 10))


def test_certificate_bytes_round_trip(ca, entropy):
    cert = issue_identity(ca, "org1-peer0", Role.PEER, entropy).cert
    assert Certificate.from_bytes(cert.to_bytes()) == cert
    assert Crl.from_bytes(ca.crl.to_bytes()) == ca.crl


def test_verify_rejection_reasons(ca, entropy):
    keys = KeyPair.generate(entropy)
    cert = ca.issue_cert("c", Role.CLIENT, keys, validity=(10, 20))
    assert verify_cert(cert, ca.root, ca.crl, 15).accepted
    assert verify_cert(cert, ca.root, ca.crl, 5).reason == RejectReason.NOT_YET_VALID
    assert verify_cert(cert, ca.root, ca.crl, 21).reason == RejectReason.EXPIRED

    forged = cert.replace(subject="mallory")
    assert verify_cert(forged, ca.root, ca.crl, 15).reason == RejectReason.BAD_SIGNATURE

    other = ca_init("org2-ca", "org2", entropy)
    assert verify_cert(cert, other.root, other.crl, 15).reason == RejectReason.UNKNOWN_ISSUER

    crl = revoke(ca, cert.serial, now=12)
    assert verify_cert(cert, ca.root, crl, 15).reason == RejectReason.REVOKED


def test_revocation_is_idempotent(ca, entropy):
    serial = issue_identity(ca, "c", Role.CLIENT, entropy).cert.serial
    first = ca.revoke(serial, 3)
    assert ca.revoke(serial, 9) == first
    with pytest.raises(UnknownSerial):
        ca.revoke(999)


def test_msp_rejects_shrinking_or_foreign_crls(ca, entropy):
    msp = Msp([ca.root], {ca.name: ca.crl})
    old = ca.crl
    serial = issue_identity(ca, "c", Role.CLIENT, entropy).cert.serial
    assert msp.update_crl(ca.revoke(serial))
    assert not msp.update_crl(old)
    assert serial in msp.crls[ca.name].revoked_serials

    rogue = ca_init("org1-ca", "org1", entropy)
    assert not msp.update_crl(rogue.crl)


def test_msp_require_reports_reason(ca, entropy):
    identity = issue_identity(ca, "org1-client", Role.CLIENT, entropy)
    msp = Msp([ca.root])
    msp.require(identity.cert, 0)
    msp.update_crl(ca.revoke(identity.cert.serial))
    with pytest.raises(IdentityRejected) as info:
        msp.require(identity.cert, 0)
    assert info.value.reason == "Revoked"
    assert str(info.value) == "IdentityRejected(Revoked): org1-client"
    assert info.value.exit_code == 32


def test_msp_rejects_cert_claiming_another_org(ca, entropy):
    keys = KeyPair.generate(entropy)
    cert = ca.issue_cert("spy", Role.CLIENT, keys, organization="org2")
    verdict = Msp([ca.root]).verify(cert, 0)
    assert not verdict.accepted
    assert verdict.reason == RejectReason.UNKNOWN_ISSUER


class TestKeyPair:
    """Signing, key agreement and reproducible key generation."""

    def test_signatures(self, entropy):
        keys = KeyPair.generate(entropy)
        signature = keys.sign(b"message")
        assert verify_signature(keys.public_key, b"message", signature)
        assert not verify_signature(keys.public_key, b"massage", signature)
        assert not verify_signature(b"\x00" * 5, b"message", signature)

    def test_key_pair_private_bytes_round_trip(self, entropy):
        keys = KeyPair.generate(entropy)
        again = KeyPair.from_private_bytes(*keys.private_bytes())
        assert again.public_key == keys.public_key
        assert again.agreement_key == keys.agreement_key

    def test_sealed_box(self, entropy):
        recipient, stranger = KeyPair.generate(entropy), KeyPair.generate(entropy)
        box = seal(recipient.agreement_key, b"secret", b"ctx", entropy)
        assert open_sealed(recipient.agreement, box, b"ctx") == b"secret"
        with pytest.raises(IntegrityMismatch):
            open_sealed(stranger.agreement, box, b"ctx")
        with pytest.raises(IntegrityMismatch):
            open_sealed(recipient.agreement, box, b"other ctx")
        with pytest.raises(IntegrityMismatch):
            open_sealed(recipient.agreement, box[:-1] + bytes([box[-1] ^ 1]), b"ctx")

    def test_seeded_keys_are_reproducible(self):
        a = KeyPair.generate(SeedStream(5, ENTROPY_STREAM))
        b = KeyPair.generate(SeedStream(5, ENTROPY_STREAM))
        c = KeyPair.generate(SeedStream(6, ENTROPY_STREAM))
        assert a.public_key == b.public_key
        assert a.public_key != c.public_key


def test_did_document(ca, entropy):
    identity = issue_identity(ca, "org1-client", Role.CLIENT, entropy)
    doc = build_did_document(identity, "cid1:raw_leaf:" + "00" * 32)
    assert doc.did == did_for_key(identity.cert.public_key)
    assert doc.did.startswith(DID_PREFIX)
    assert doc.did == identity.did
    assert verify_did_document(doc, identity.did)
    assert verify_did_document(DidDocument.from_json(doc.to_json()))

    assert not verify_did_document(doc, "did:mesh:" + "11" * 32)
    assert not verify_did_document(doc.replace(service_cid=None))
    other = issue_identity(ca, "org1-other", Role.CLIENT, entropy)
    assert not verify_did_document(doc.replace(key_agreement_keys=(other.cert.agreement_key,)))
