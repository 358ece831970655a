import pytest

from threatmesh import persistence
from threatmesh.attck.layers import load_fixture
from threatmesh.errors import ConfigError, StateLocked

CHANNEL = "threatnet"


def test_save_and_load_round_trip(tmp_path, sim):
    receipt = sim.client("org1-client").share_threat(load_fixture("fox_kitten_G0117"), [sim.did_of("org2-client")])
    sim.labels["fk"] = str(receipt.cid)
    persistence.save_state(sim, tmp_path)
    assert persistence.is_initialized(tmp_path)

    again = persistence.open_simulation(tmp_path)
    assert again.epoch == sim.epoch + 1
    assert again.now >= sim.now
    assert again.labels == {"fk": str(receipt.cid)}
    assert again.config == sim.config
    for name, peer in sim.peers.items():
        assert again.peers[name].chain_bytes(CHANNEL) == peer.chain_bytes(CHANNEL)
        assert again.peers[name].state_hash(CHANNEL) == peer.state_hash(CHANNEL)
    for org, node in sim.cas_nodes.items():
        assert set(again.cas_nodes[org].store.cids()) == set(node.store.cids())
    assert {n: i.cert for n, i in again.identities.items()} == {n: i.cert for n, i in sim.identities.items()}
    assert again.client("org2-client").fetch_threat(receipt.cid) == load_fixture("fox_kitten_G0117")


def test_reloaded_simulation_keeps_issuing_serials(tmp_path, sim):
    persistence.save_state(sim, tmp_path)
    again = persistence.open_simulation(tmp_path)
    assert again.authorities["org1"].next_serial == sim.authorities["org1"].next_serial
    assert again.authorities["org1"].issued_serials == sim.authorities["org1"].issued_serials


def test_revocation_survives_reload(tmp_path, sim):
    serial = sim.identity("org2-auditor").cert.serial
    sim.revoke_cert(serial, "org2")
    persistence.save_state(sim, tmp_path)
    again = persistence.open_simulation(tmp_path)
    for peer in again.peer_list():
        assert serial in peer.msp.crls["org2-ca"].revoked_serials
    assert not again.cas_nodes["org1"].msp.verify(again.identity("org2-auditor").cert, again.now).accepted


def test_load_rejects_missing_or_foreign_state(tmp_path, sim):
    with pytest.raises(ConfigError, match="setup"):
        persistence.load_state(tmp_path)
    persistence.save_state(sim, tmp_path)
    (tmp_path / "sim.json").write_text('{"format": 999}')
    with pytest.raises(ConfigError, match="format"):
        persistence.load_state(tmp_path)


def test_state_lock_is_exclusive(tmp_path):
    with persistence.state_lock(tmp_path):
        with pytest.raises(StateLocked):
            with persistence.state_lock(tmp_path):
                pass
    assert not (tmp_path / persistence.LOCK_FILE).exists()
    with persistence.state_lock(tmp_path):
        pass


def test_clear_state_keeps_the_lock(tmp_path, sim):
    persistence.save_state(sim, tmp_path)
    with persistence.state_lock(tmp_path):
        persistence.clear_state(tmp_path)
        assert [p.name for p in tmp_path.iterdir()] == [persistence.LOCK_FILE]
    assert not persistence.is_initialized(tmp_path)
