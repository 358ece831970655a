import pytest

import threatmesh
from threatmesh.config import (
    ScenarioConfig,
    config_from_dict,
    default_config,
    load_config,
    save_config,
    state_dir,
    validate_config,
    with_orgs,
)
from threatmesh.contract import Contract
from threatmesh.core import make_contract
from threatmesh.errors import (
    AccessDenied,
    ConfigError,
    ContractError,
    IdentityRejected,
    NotSender,
    ThreatMeshError,
    decode_error,
    encode_error,
)
from threatmesh.ledger.channel import LedgerConstants
from threatmesh.ledger.threatshare import ThreatShareContract
from threatmesh.simulation import Simulation
from threatmesh.wrappers import NodeWrapper, RecordingWrapper


def test_make_builds_a_ready_simulation():
    """Test the main entry point with the default scenario."""
    sim = threatmesh.make()
    assert isinstance(sim, Simulation)
    assert sorted(sim.peers) == ["org1-peer0", "org2-peer0", "org3-peer0"]
    assert "org1-client" in sim.clients
    assert sim.ledgers_consistent()


def test_list_available_contracts():
    assert sorted(threatmesh.list_available_contracts()) == ["mspconfig", "threatshare"]


@pytest.mark.parametrize("name", threatmesh.list_available_contracts())
def test_make_contract(name):
    contract = make_contract(name)
    assert isinstance(contract, Contract)
    assert contract.name == name
    assert contract.operations()


def test_make_unknown_contract():
    with pytest.raises(NotImplementedError, match="threatshare"):
        make_contract("chess")


def test_contract_rejects_unknown_operations_and_arity():
    contract = ThreatShareContract()
    with pytest.raises(ContractError, match="no operation"):
        contract.invoke(None, "delete_everything", ())
    with pytest.raises(ContractError, match="argument"):
        contract.invoke(None, "grant_access", (b"only one",))
    assert contract.collections("anchor_did") == ()
    assert contract.collections("publish_share") == ("grants",)


@pytest.mark.parametrize("error", [
    AccessDenied("org3 is not a member"),
    NotSender("org2-client did not share it"),
    ConfigError("bad"),
])
def test_error_codec_keeps_class_and_message(error):
    decoded = decode_error(encode_error(error))
    assert type(decoded) is type(error)
    assert str(decoded) == str(error)
    assert decoded.exit_code == error.exit_code


def test_error_codec_keeps_rejection_reason():
    decoded = decode_error(encode_error(IdentityRejected("Expired", "org1-client")))
    assert isinstance(decoded, IdentityRejected)
    assert decoded.reason == "Expired"
    assert str(decoded) == "IdentityRejected(Expired): org1-client"


def test_exit_codes_are_unique():
    seen = {}
    pending = [ThreatMeshError]
    while pending:
        cls = pending.pop()
        pending.extend(cls.__subclasses__())
        if "exit_code" not in cls.__dict__:
            continue
        assert cls.exit_code not in seen, (cls, seen.get(cls.exit_code))
        seen[cls.exit_code] = cls
    assert 2 not in seen and 0 not in seen


def test_default_config():
    config = default_config()
    assert validate_config(config) is config
    assert config.org_names == ["org1", "org2", "org3"]
    assert config.required_orgs == 2
    assert config.ledger.BATCH_SIZE == 10


@pytest.mark.parametrize("change, message", [
    ({"orgs": ()}, "at least one"),
    ({"endorsement": 4}, "endorsement"),
    ({"endorsement": 3}, "fewer than"),
    ({"entropy": "dice"}, "entropy"),
    ({"seed": -1}, "seed"),
    ({"ledger": LedgerConstants(PRIVATE_STASH_TICKS=0)}, "ledger"),
])
def test_invalid_configs(change, message):
    with pytest.raises(ConfigError, match=message):
        validate_config(ScenarioConfig()._replace(**change))


def test_config_from_dict():
    config = config_from_dict({
        "seed": 3,
        "orgs": [{"name": "a", "peers": 2}, {"name": "b"}, {"name": "c", "clients": ["x", "y"]}],
        "collections": [{"name": "grants", "member_orgs": ["a", "b", "c"]}],
        "net": {"latency_ticks": [2, 4], "loss_rate": 0.1},
        "ledger": {"batch_size": 5, "private_stash": 50},
    })
    assert config.orgs[0].peers == 2
    assert config.orgs[2].clients == ("x", "y")
    assert config.net.latency_ticks == (2, 4)
    assert config.net.seed == 3
    assert config.ledger.BATCH_SIZE == 5
    assert config.ledger.BATCH_TIMEOUT_TICKS == 2
    assert config.ledger.PRIVATE_STASH_TICKS == 50
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"sedd": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"net": {"latency_ticks": [1, 2, 3]}})
    with pytest.raises(ConfigError):
        config_from_dict({"orgs": [{"peers": 1}]})


def test_config_yaml_round_trip(tmp_path):
    config = with_orgs(default_config(seed=11), 5)
    path = tmp_path / "scenario.yaml"
    save_config(config, path)
    assert load_config(path) == config
    assert load_config(None) == default_config()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "broken.yaml").write_text("orgs: [\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(tmp_path / "broken.yaml")


def test_with_orgs():
    config = with_orgs(default_config(), 7)
    assert config.org_names == [f"org{i}" for i in range(1, 8)]
    assert config.required_orgs == 4
    assert config.collections[0].member_orgs == tuple(config.org_names)
    with pytest.raises(ConfigError):
        with_orgs(default_config(), 0)


def test_state_dir(monkeypatch, tmp_path):
    monkeypatch.delenv("THREATMESH_STATE", raising=False)
    assert str(state_dir()) == ".threatmesh"
    monkeypatch.setenv("THREATMESH_STATE", str(tmp_path))
    assert state_dir() == tmp_path
    assert str(state_dir("explicit")) == "explicit"


def test_wrappers_stack(sim):
    """Wrappers nest, proxy attributes and hand messages inward."""
    peer = sim.peers["org1-peer0"]
    inner = RecordingWrapper(peer)
    outer = RecordingWrapper(inner)
    assert isinstance(outer, NodeWrapper)
    assert outer.unwrapped is peer
    assert outer.organization == "org1"
    sim.admin("org1").query("did/" + sim.did_of("org1-client"))
    assert outer.counts["query"] == inner.counts["query"] == 1
