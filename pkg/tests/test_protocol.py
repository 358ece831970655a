import numpy as np
import pytest

from threatmesh.attck.layers import Layer, OverlapPalette, TechniqueEntry, load_fixture
from threatmesh.cas.node import delegate_erasure
from threatmesh.errors import (
    AccessDenied,
    Erased,
    IdentityRejected,
    IntegrityMismatch,
    NotFound,
    NotOwner,
    NotSender,
    UnresolvableRecipient,
)
from threatmesh.ledger.threatshare import grant_key
from threatmesh.mods.cas_mods import CorruptBlocksMod
from threatmesh.protocol.sharing import EncryptedObject, compare_shared, fetch_threat, share_threat, unwrap_key

CHANNEL = "threatnet"
MARKER = "MARKER-3f9c1d7a5e2b8046c1a9d3e7f"

WICKED_PANDA = "wicked_panda_G0096"
FOX_KITTEN = "fox_kitten_G0117"


@pytest.fixture
def shared(sim):
    """org1-client shares the Wicked Panda fixture with org2-client."""
    receipt = sim.client("org1-client").share_threat(load_fixture(WICKED_PANDA), [sim.did_of("org2-client")])
    sim.settle()
    return receipt


def _marker_layer() -> Layer:
    return Layer(
        name="marked",
        description=MARKER,
        techniques=(TechniqueEntry("T1059", "execution", score=1, comment=MARKER),),
    )


def _wrapping(sim, cid, actor: str) -> bytes:
    peer = sim.peers["org2-peer0"]
    return peer.query_private(CHANNEL, "grants", grant_key(str(cid), sim.did_of(actor)), sim.identity(actor).cert)


def test_share_fetch_compare_end_to_end(sim):
    sender, recipient = sim.client("org1-client"), sim.client("org2-client")
    a, b = load_fixture(WICKED_PANDA), load_fixture(FOX_KITTEN)
    cid_a, _ = share_threat(sender, a, [recipient.did])
    cid_b, _ = share_threat(sender, b, [recipient.did])

    assert fetch_threat(recipient, cid_a) == a
    assert fetch_threat(recipient, cid_b) == b
    result = compare_shared(recipient, cid_a, cid_b)
    green = {e.key for e in result.techniques if e.color == OverlapPalette().both}
    assert green == a.keys() & b.keys()
    assert result.keys() == a.keys() | b.keys()
    assert sim.ledgers_consistent()


def test_share_record_is_public(sim, shared):
    record = sim.client("org2-auditor").share_record(str(shared.cid))
    assert record.cid == str(shared.cid)
    assert record.sender_did == sim.did_of("org1-client")
    assert record.recipients == (sim.did_of("org2-client"),)
    assert record.threat_name == load_fixture(WICKED_PANDA).name
    assert not record.erased


def test_compare_one_share_with_itself(sim, shared):
    result = sim.client("org2-client").compare_shared(shared.cid, shared.cid)
    assert {e.color for e in result.techniques} == {OverlapPalette().both}


@pytest.mark.parametrize("actor", ["org2-auditor", "org1-analyst", "org3-client"])
def test_fetch_without_grant_transfers_no_content(sim, shared, actor):
    start = len(sim.network.trace)
    with pytest.raises(AccessDenied):
        sim.client(actor).fetch_threat(shared.cid)
    assert not {row.msg_type for row in sim.network.trace[start:]} & {"want", "block"}


def test_recipient_outside_grants_collection_is_rejected(sim):
    sender, outsider = sim.client("org1-client"), sim.did_of("org3-client")
    height = len(sim.orderer.chain(CHANNEL))
    with pytest.raises(AccessDenied, match="outside collection"):
        sender.share_threat(load_fixture(FOX_KITTEN), [sim.did_of("org2-client"), outsider])
    sim.settle()
    assert len(sim.orderer.chain(CHANNEL)) == height

    receipt = sender.share_threat(load_fixture(FOX_KITTEN), [])
    with pytest.raises(AccessDenied, match="outside collection"):
        sender.grant_access(receipt.cid, outsider)
    assert sender.share_record(str(receipt.cid)).recipients == ()


def test_contract_refuses_grant_outside_collection(sim):
    """A client skipping its own recipient check still gets no endorsement."""
    sender, outsider = sim.client("org1-client"), sim.did_of("org3-client")
    receipt = sender.share_threat(load_fixture(FOX_KITTEN), [])
    proposal = sender.gateway.new_proposal("threatshare", "grant_access", [str(receipt.cid).encode(), outsider.encode()])
    with pytest.raises(AccessDenied, match="org3"):
        sender.gateway.endorse(proposal, {"wrapped_key/" + outsider: b"\x00" * 32})


@pytest.mark.parametrize("recipient", ["did:mesh:" + "ab" * 32, "org2-client", "nobody"])
def test_unresolvable_recipient(sim, recipient):
    with pytest.raises(UnresolvableRecipient):
        sim.client("org1-client").share_threat(load_fixture(FOX_KITTEN), [recipient])


def test_grant_access_later(sim):
    sender = sim.client("org1-client")
    receipt = sender.share_threat(load_fixture(FOX_KITTEN), [])
    with pytest.raises(AccessDenied):
        sim.client("org2-auditor").fetch_threat(receipt.cid)
    sender.grant_access(receipt.cid, sim.did_of("org2-auditor"))
    assert sim.client("org2-auditor").fetch_threat(receipt.cid) == load_fixture(FOX_KITTEN)
    assert sender.share_record(str(receipt.cid)).recipients == (sim.did_of("org2-auditor"),)


def test_only_the_sender_grants_or_revokes(sim, shared):
    other = sim.client("org2-client")
    with pytest.raises(NotSender):
        other.grant_access(shared.cid, sim.did_of("org2-auditor"))
    with pytest.raises(NotSender):
        other.revoke_access(shared.cid, other.did)


def test_revoked_access_stops_fetches(sim, shared):
    recipient = sim.client("org2-client")
    recipient.fetch_threat(shared.cid)
    sim.client("org1-client").revoke_access(shared.cid, recipient.did)
    with pytest.raises(AccessDenied):
        recipient.fetch_threat(shared.cid)
    assert sim.client("org1-client").share_record(str(shared.cid)).recipients == ()


def test_revoked_recipient_is_rejected(sim, shared):
    sim.revoke_cert(sim.identity("org2-client").cert.serial, "org2")
    with pytest.raises(IdentityRejected) as info:
        sim.client("org2-client").fetch_threat(shared.cid)
    assert info.value.reason == "Revoked"
    assert info.value.exit_code == 32


def test_revoked_sender_cannot_share(sim):
    sim.revoke_cert(sim.identity("org1-client").cert.serial, "org1")
    with pytest.raises(IdentityRejected, match="Revoked"):
        sim.client("org1-client").share_threat(load_fixture(FOX_KITTEN), [sim.did_of("org2-client")])


def test_erase_keeps_the_audit_record(sim, shared):
    recipient = sim.client("org2-client")
    recipient.fetch_threat(shared.cid)
    receipt = sim.client("org1-client").erase(shared.cid)
    assert receipt.unconfirmed == ()
    assert "org2-cas" in receipt.acknowledged

    record = recipient.share_record(str(shared.cid))
    assert record.erased
    with pytest.raises(Erased):
        recipient.fetch_threat(shared.cid)
    for node in sim.cas_nodes.values():
        assert shared.cid not in node.store
    assert sim.registry.find_providers(shared.cid) == []
    with pytest.raises(NotFound):
        sim.peers["org2-peer0"].query_private(
            CHANNEL, "grants", grant_key(str(shared.cid), recipient.did), recipient.identity.cert)
    with pytest.raises(Erased):
        sim.client("org1-client").grant_access(shared.cid, sim.did_of("org2-auditor"))


def test_erase_needs_ownership_or_delegation(sim, shared):
    other = sim.client("org2-client")
    with pytest.raises(NotOwner):
        other.erase(shared.cid)
    delegation = delegate_erasure(sim.identity("org1-client"), other.identity.cert, shared.cid)
    other.erase(shared.cid, delegation)
    assert not other.share_record(str(shared.cid)).erased
    with pytest.raises(NotFound):
        other.fetch_threat(shared.cid)


def test_corrupted_store_fails_the_fetch(sim, shared):
    CorruptBlocksMod(sim.cas_nodes["org1"])
    with pytest.raises(IntegrityMismatch):
        sim.client("org2-client").fetch_threat(shared.cid)


def test_ciphertext_bit_flips_fail_authentication(sim, shared):
    obj = EncryptedObject.from_bytes(sim.cas_nodes["org1"].store.get(shared.cid))
    key = unwrap_key(sim.identity("org2-client"), _wrapping(sim, shared.cid, "org2-client"))
    assert obj.decrypt(key)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        position = int(rng.integers(len(obj.ciphertext) * 8))
        flipped = bytearray(obj.ciphertext)
        flipped[position // 8] ^= 1 << (position % 8)
        with pytest.raises(IntegrityMismatch):
            obj.replace(ciphertext=bytes(flipped)).decrypt(key)


def test_wrapped_key_opens_only_for_its_recipient(sim, shared):
    wrapping = _wrapping(sim, shared.cid, "org2-client")
    with pytest.raises(IntegrityMismatch):
        unwrap_key(sim.identity("org2-auditor"), wrapping)


def test_plaintext_never_leaves_the_endpoints(sim):
    """The marker never appears on the wire, in any peer's storage or in the content stores."""
    envelopes = []
    sim.network.taps.append(envelopes.append)
    receipt = sim.client("org1-client").share_threat(_marker_layer(), [sim.did_of("org2-client")])
    layer = sim.client("org2-client").fetch_threat(receipt.cid)
    sim.settle()
    assert layer.description == MARKER

    marker = MARKER.encode()
    assert envelopes
    assert all(marker not in e.payload for e in envelopes)
    for peer in sim.peer_list():
        assert marker not in peer.storage_bytes()
    for node in sim.cas_nodes.values():
        assert all(marker not in node.store.get(cid) for cid in node.store.cids())

    # private values are kept hex-encoded, and only by the collection's member peers
    wrapping = _wrapping(sim, receipt.cid, "org2-client")
    assert wrapping.hex().encode() in sim.peers["org1-peer0"].storage_bytes()
    outsider = sim.peers["org3-peer0"].storage_bytes()
    assert wrapping not in outsider
    assert wrapping.hex().encode() not in outsider
